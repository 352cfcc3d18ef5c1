/// Direct-mapped branch target buffer keyed by the low 32 bits of the
/// branch address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BtbEntry {
    /// Low 32 bits of the source.
    pub tag: u32,
    pub target_low32: u32,
    /// Logical core that inserted the entry.
    pub core: u8,
    /// Inserted while the core was in enclave mode.
    pub enclave: bool,
    /// Enclave-entry epoch at insertion time.
    pub epoch: u64,
    /// Full source address, for the exact-match return rule.
    pub source: u64,
}

/// Who is asking and which isolation rules apply.
#[derive(Debug, Clone, Copy, Default)]
pub struct LookupCtx {
    pub core: u8,
    pub enclave: bool,
    /// IBRS: in enclave mode only entries inserted in enclave mode since the
    /// last enclave entry are visible.
    pub ibrs: bool,
    pub min_epoch: u64,
    /// STIBP: only entries from the same logical core are visible.
    pub stibp: bool,
    /// Require `entry.source == Some(addr)`.
    pub exact_source: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Btb {
    bits: u32,
    entries: Vec<Option<BtbEntry>>,
}

pub fn low32(a: u64) -> u32 {
    a as u32
}

impl Btb {
    pub fn new(index_bits: u32) -> Btb {
        Btb {
            bits: index_bits,
            entries: vec![None; 1 << index_bits],
        }
    }

    pub fn index(&self, src: u64) -> usize {
        (low32(src) as usize) & ((1 << self.bits) - 1)
    }

    pub fn update(&mut self, src: u64, dst: u64, core: u8, enclave: bool, epoch: u64) {
        let i = self.index(src);
        self.entries[i] = Some(BtbEntry {
            tag: low32(src),
            target_low32: low32(dst),
            core,
            enclave,
            epoch,
            source: src,
        });
    }

    pub fn entry(&self, src: u64) -> Option<&BtbEntry> {
        self.entries[self.index(src)].as_ref()
    }

    /// Matching entry for `src` under `ctx`.
    pub fn lookup(&self, src: u64, ctx: &LookupCtx) -> Option<BtbEntry> {
        let e = self.entries[self.index(src)]?;
        if e.tag != low32(src) {
            return None;
        }
        if ctx.stibp && e.core != ctx.core {
            return None;
        }
        if ctx.ibrs && ctx.enclave && (!e.enclave || e.epoch < ctx.min_epoch) {
            return None;
        }
        if let Some(a) = ctx.exact_source {
            if e.source != a {
                return None;
            }
        }
        Some(e)
    }

    /// Predicted full target: the fetching code's bits [32, 48) joined with
    /// the stored low 32 bits.
    pub fn predict(&self, src: u64, ctx: &LookupCtx) -> Option<u64> {
        self.lookup(src, ctx)
            .map(|e| (src & 0xffff_0000_0000) | e.target_low32 as u64)
    }

    pub fn clear(&mut self) {
        self.entries.iter_mut().for_each(|e| *e = None);
    }

    pub fn occupied(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

/// Return stack buffer: a ring that overwrites its oldest entry when full.
#[derive(Debug, Clone)]
pub struct Rsb {
    slots: Vec<u64>,
    top: usize,
    len: usize,
}

impl Rsb {
    pub fn new(capacity: usize) -> Rsb {
        Rsb {
            slots: vec![0; capacity.max(1)],
            top: 0,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, ret: u64) {
        self.slots[self.top] = ret;
        self.top = (self.top + 1) % self.slots.len();
        self.len = (self.len + 1).min(self.slots.len());
    }

    pub fn pop(&mut self) -> Option<u64> {
        if self.len == 0 {
            return None;
        }
        self.top = (self.top + self.slots.len() - 1) % self.slots.len();
        self.len -= 1;
        Some(self.slots[self.top])
    }

    pub fn clear(&mut self) {
        self.len = 0;
    }

    /// Fill every slot with a benign address (RSB stuffing).
    pub fn refill(&mut self, addr: u64) {
        for _ in 0..self.slots.len() {
            self.push(addr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliasing_reconstructs_in_victim_region() {
        let mut b = Btb::new(12);
        b.update(0x7fff_0000_2560, 0x7fff_0000_7642, 0, false, 0);
        assert_eq!(b.predict(0x2560, &LookupCtx::default()), Some(0x7642));
        assert_eq!(Btb::new(12).predict(0x2560, &LookupCtx::default()), None);
    }

    #[test]
    fn isolation_rules() {
        let mut b = Btb::new(12);
        b.update(0x2560, 0x7642, 1, false, 0);
        let stibp = LookupCtx { core: 0, stibp: true, ..Default::default() };
        assert_eq!(b.predict(0x2560, &stibp), None);
        let ibrs = LookupCtx { enclave: true, ibrs: true, min_epoch: 1, ..Default::default() };
        assert_eq!(b.predict(0x2560, &ibrs), None);
        let exact = LookupCtx { exact_source: Some(0x2560), ..Default::default() };
        assert_eq!(b.predict(0x2560, &exact), Some(0x7642));
        b.update(0x7fff_0000_2560, 0x7642, 1, false, 0);
        assert_eq!(b.predict(0x2560, &exact), None);
    }

    #[test]
    fn rsb_ring() {
        let mut r = Rsb::new(16);
        for i in 0..20 {
            r.push(i);
        }
        assert_eq!(r.len(), 16);
        for i in (4..20).rev() {
            assert_eq!(r.pop(), Some(i));
        }
        assert_eq!(r.pop(), None);
    }
}
