use std::collections::HashMap;

use super::cache::{page_of, PAGE};

/// Sparse byte-addressed memory. Untouched bytes read as the last matching
/// fill range, or zero.
#[derive(Debug, Clone, Default)]
pub struct Memory {
    pages: HashMap<u64, Box<[u8]>>,
    fills: Vec<(u64, u64, u8)>,
}

impl Memory {
    pub fn new(fills: Vec<(u64, u64, u8)>) -> Memory {
        Memory {
            pages: HashMap::new(),
            fills,
        }
    }

    fn fill_byte(&self, addr: u64) -> u8 {
        self.fills
            .iter()
            .rev()
            .find(|(lo, hi, _)| (*lo..*hi).contains(&addr))
            .map_or(0, |f| f.2)
    }

    pub fn read_u8(&self, addr: u64) -> u8 {
        match self.pages.get(&page_of(addr)) {
            Some(p) => p[(addr % PAGE) as usize],
            None => self.fill_byte(addr),
        }
    }

    pub fn write_u8(&mut self, addr: u64, v: u8) {
        let base = page_of(addr);
        if !self.pages.contains_key(&base) {
            let page: Box<[u8]> = (0..PAGE).map(|i| self.fill_byte(base + i)).collect();
            self.pages.insert(base, page);
        }
        self.pages.get_mut(&base).unwrap()[(addr % PAGE) as usize] = v;
    }

    /// Little-endian read of `width` bytes.
    pub fn read(&self, addr: u64, width: u8) -> u64 {
        (0..width as u64).fold(0, |acc, i| {
            acc | (self.read_u8(addr.wrapping_add(i)) as u64) << (8 * i)
        })
    }

    pub fn write(&mut self, addr: u64, width: u8, v: u64) {
        for i in 0..width as u64 {
            self.write_u8(addr.wrapping_add(i), (v >> (8 * i)) as u8);
        }
    }

    pub fn read_bytes(&self, addr: u64, len: usize) -> Vec<u8> {
        (0..len as u64).map(|i| self.read_u8(addr + i)).collect()
    }

    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            self.write_u8(addr + i as u64, *b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_and_writes() {
        let mut m = Memory::new(vec![(0x1000, 0x2000, 0xcc)]);
        assert_eq!(m.read(0x1ffe, 4), 0x0000_cccc);
        m.write(0x1ffe, 4, 0x1122_3344);
        assert_eq!(m.read(0x1ffe, 4), 0x1122_3344);
        assert_eq!(m.read_u8(0x1ffd), 0xcc);
        assert_eq!(m.read_bytes(0x2000, 2), vec![0x22, 0x11]);
    }
}
