use std::collections::HashSet;

use super::config::Latencies;

pub const LINE: u64 = 64;
pub const PAGE: u64 = 4096;

pub fn line_of(addr: u64) -> u64 {
    addr & !(LINE - 1)
}

pub fn page_of(addr: u64) -> u64 {
    addr & !(PAGE - 1)
}

/// Where an access was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    L1,
    L2,
    Llc,
    Memory,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::Llc => "LLC",
            Level::Memory => "memory",
        }
    }
}

#[derive(Debug, Clone)]
struct SetAssoc {
    sets: usize,
    ways: usize,
    /// Per set, most recently used last.
    lines: Vec<Vec<u64>>,
}

impl SetAssoc {
    fn new(sets: usize, ways: usize) -> Self {
        SetAssoc {
            sets,
            ways,
            lines: vec![Vec::new(); sets],
        }
    }

    fn set(&self, line: u64) -> usize {
        ((line / LINE) as usize) % self.sets
    }

    fn contains(&self, line: u64) -> bool {
        self.lines[self.set(line)].contains(&line)
    }

    /// Install or refresh; returns the evicted line.
    fn touch(&mut self, line: u64) -> Option<u64> {
        let ways = self.ways;
        let s = self.set(line);
        let set = &mut self.lines[s];
        if let Some(p) = set.iter().position(|l| *l == line) {
            set.remove(p);
            set.push(line);
            return None;
        }
        set.push(line);
        if set.len() > ways {
            Some(set.remove(0))
        } else {
            None
        }
    }

    fn remove(&mut self, line: u64) {
        let s = self.set(line);
        self.lines[s].retain(|l| *l != line);
    }
}

/// Inclusive three-level LRU hierarchy tracking line presence only.
#[derive(Debug, Clone)]
pub struct CacheModel {
    l1: SetAssoc,
    l2: SetAssoc,
    llc: SetAssoc,
}

impl Default for CacheModel {
    fn default() -> Self {
        CacheModel::new((64, 8), (1024, 4), (4096, 12))
    }
}

impl CacheModel {
    pub fn new(l1: (usize, usize), l2: (usize, usize), llc: (usize, usize)) -> Self {
        CacheModel {
            l1: SetAssoc::new(l1.0, l1.1),
            l2: SetAssoc::new(l2.0, l2.1),
            llc: SetAssoc::new(llc.0, llc.1),
        }
    }

    /// Lines this far apart map to the same set at every level.
    pub fn congruence_stride(&self) -> u64 {
        LINE * self.llc.sets.max(self.l2.sets).max(self.l1.sets) as u64
    }

    pub fn probe(&self, addr: u64) -> Level {
        let l = line_of(addr);
        if self.l1.contains(l) {
            Level::L1
        } else if self.l2.contains(l) {
            Level::L2
        } else if self.llc.contains(l) {
            Level::Llc
        } else {
            Level::Memory
        }
    }

    pub fn latency(level: Level, lat: &Latencies) -> u64 {
        match level {
            Level::L1 => lat.l1,
            Level::L2 => lat.l2,
            Level::Llc => lat.llc,
            Level::Memory => lat.memory,
        }
    }

    /// Install the line at every level, keeping inclusion on LLC eviction.
    pub fn fill(&mut self, addr: u64) {
        let l = line_of(addr);
        if let Some(v) = self.llc.touch(l) {
            self.l2.remove(v);
            self.l1.remove(v);
        }
        if let Some(v) = self.l2.touch(l) {
            self.l1.remove(v);
        }
        self.l1.touch(l);
    }

    /// Remove the line from the entire hierarchy.
    pub fn flush(&mut self, addr: u64) {
        let l = line_of(addr);
        self.l1.remove(l);
        self.l2.remove(l);
        self.llc.remove(l);
    }
}

/// Translation state: TLB entries, page-table entries held in cache, and
/// per-page reserved bits.
#[derive(Debug, Clone, Default)]
pub struct TranslationModel {
    tlb: HashSet<u64>,
    pte_cached: HashSet<u64>,
    reserved: HashSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Walk {
    TlbHit,
    CachedWalk,
    MemoryWalk,
}

impl TranslationModel {
    pub fn walk_kind(&self, addr: u64) -> Walk {
        let p = page_of(addr);
        if self.tlb.contains(&p) {
            Walk::TlbHit
        } else if self.pte_cached.contains(&p) {
            Walk::CachedWalk
        } else {
            Walk::MemoryWalk
        }
    }

    pub fn latency(w: Walk, lat: &Latencies) -> u64 {
        match w {
            Walk::TlbHit => 0,
            Walk::CachedWalk => lat.cached_walk,
            Walk::MemoryWalk => lat.memory_walk,
        }
    }

    pub fn install(&mut self, addr: u64) {
        let p = page_of(addr);
        self.tlb.insert(p);
        self.pte_cached.insert(p);
    }

    pub fn tlb_has(&self, addr: u64) -> bool {
        self.tlb.contains(&page_of(addr))
    }

    /// Drop TLB entries for pages in `[lo, hi)`.
    pub fn flush_range(&mut self, lo: u64, hi: u64) {
        self.tlb.retain(|p| *p < lo || *p >= hi);
    }

    /// Evict the page's cached PTE and its TLB entry.
    pub fn flush_pte(&mut self, addr: u64) {
        let p = page_of(addr);
        self.pte_cached.remove(&p);
        self.tlb.remove(&p);
    }

    pub fn set_reserved(&mut self, addr: u64, on: bool) {
        let p = page_of(addr);
        if on {
            self.reserved.insert(p);
        } else {
            self.reserved.remove(&p);
        }
    }

    pub fn is_reserved(&self, addr: u64) -> bool {
        self.reserved.contains(&page_of(addr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_flush_probe() {
        let mut c = CacheModel::default();
        assert_eq!(c.probe(0x1000), Level::Memory);
        c.fill(0x1008);
        assert_eq!(c.probe(0x1000), Level::L1);
        c.flush(0x103f);
        assert_eq!(c.probe(0x1000), Level::Memory);
    }

    #[test]
    fn congruent_lines_evict() {
        let mut c = CacheModel::default();
        c.fill(0x1bfff8);
        let stride = c.congruence_stride();
        for i in 1..=20 {
            c.fill(0x4000_0000 + 0x1bffc0 + i * stride);
        }
        assert_eq!(c.probe(0x1bfff8), Level::Memory);
    }

    #[test]
    fn l1_eviction_keeps_lower_levels() {
        let mut c = CacheModel::default();
        c.fill(0);
        for i in 1..=8 {
            c.fill(i * 64 * 64);
        }
        assert_eq!(c.probe(0), Level::L2);
    }

    #[test]
    fn translation_states() {
        let mut t = TranslationModel::default();
        assert_eq!(t.walk_kind(0x5000), Walk::MemoryWalk);
        t.install(0x5000);
        assert_eq!(t.walk_kind(0x5fff), Walk::TlbHit);
        t.flush_range(0x5000, 0x6000);
        assert_eq!(t.walk_kind(0x5000), Walk::CachedWalk);
        t.flush_pte(0x5000);
        assert_eq!(t.walk_kind(0x5000), Walk::MemoryWalk);
    }
}
