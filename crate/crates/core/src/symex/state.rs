use std::collections::HashMap;
use std::rc::Rc;

use crate::asmparse::{Reg64, Register, WriteSemantics};

use super::value::{self, c, ExprOp, Origin, SymValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(rename = "ecall")]
    ECall,
    #[serde(rename = "oret")]
    ORet,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ECall => "ECall",
            Mode::ORet => "ORet",
        }
    }
}

/// One decision recorded along a path, enough to replay it concretely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrailEvent {
    Cond { addr: u64, taken: bool },
    /// Indirect jump, indirect call or return and where it went.
    Indirect { addr: u64, target: u64 },
    /// EEXIT at `addr` re-entered the enclave entry with fresh attacker input.
    Reenter { addr: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemByte {
    Concrete(u8),
    /// Byte `byte` (little-endian) of a symbolic value.
    Slice { val: SymValue, byte: u8 },
}

/// Memory outside the per-state store: preloaded image bytes and fill rules.
#[derive(Debug, Clone, Default)]
pub struct MemoryImage {
    pub bytes: HashMap<u64, u8>,
    pub fills: Vec<(u64, u64, u8)>,
    pub stack: (u64, u64),
    pub stack_fill: u8,
    pub data_fill: u8,
}

impl MemoryImage {
    pub fn byte(&self, addr: u64) -> u8 {
        if let Some(b) = self.bytes.get(&addr) {
            return *b;
        }
        if let Some((_, _, b)) = self.fills.iter().find(|(lo, hi, _)| addr >= *lo && addr < *hi) {
            return *b;
        }
        if addr >= self.stack.0 && addr < self.stack.1 {
            return self.stack_fill;
        }
        self.data_fill
    }
}

#[derive(Debug, Clone)]
pub struct MachineState {
    pub regs: [SymValue; 16],
    /// Coarse flags cell: concrete RFLAGS bits or an opaque expression.
    pub flags: SymValue,
    pub rip: u64,
    pub memory: HashMap<u64, MemByte>,
    /// Stores through symbolic addresses; they never clobber concrete memory.
    pub sym_stores: Vec<(SymValue, SymValue, u8)>,
    pub call_depth: u32,
    pub steps: u64,
    pub trail: Vec<TrailEvent>,
    pub mode: Mode,
    pub reentered: bool,
    pub fork_depth: u32,
    pub fork_counts: HashMap<u64, u32>,
    pub next_symbol: u32,
    pub image: Rc<MemoryImage>,
}

impl MachineState {
    pub fn reg(&self, r: Reg64) -> &SymValue {
        &self.regs[r.index()]
    }

    pub fn set_reg64(&mut self, r: Reg64, v: SymValue) {
        self.regs[r.index()] = v;
    }

    pub fn rsp(&self) -> Option<u64> {
        self.reg(Reg64::Rsp).concrete()
    }

    pub fn fresh(&mut self, origin: Origin) -> SymValue {
        self.next_symbol += 1;
        SymValue::Symbol { id: self.next_symbol, origin }
    }

    /// Value of a register view, zero-extended to 64 bits.
    pub fn read_reg(&self, r: Register) -> SymValue {
        let p = self.reg(r.parent).clone();
        if let Some(v) = p.concrete() {
            return c(r.read(v));
        }
        let bits = r.width.bits();
        if bits == 64 {
            return p;
        }
        let shifted = value::mk(ExprOp::Shr, vec![p, c(r.shift() as u64)]);
        value::trunc(shifted, bits)
    }

    pub fn write_reg(&mut self, r: Register, v: SymValue) {
        let p = self.reg(r.parent).clone();
        if let (Some(pv), Some(vv)) = (p.concrete(), v.concrete()) {
            self.set_reg64(r.parent, c(r.write(pv, vv)));
            return;
        }
        let bits = r.width.bits();
        let new = match r.write_semantics() {
            WriteSemantics::FullWidth => v,
            WriteSemantics::ZeroExtend32 => value::trunc(v, 32),
            WriteSemantics::MergeLow => {
                let m = r.width.mask();
                value::or(value::and(p, c(!m)), value::trunc(v, bits))
            }
            WriteSemantics::MergeHigh8 => {
                let low = value::trunc(v, 8);
                value::or(
                    value::and(p, c(!0xff00)),
                    value::mk(ExprOp::Shl, vec![low, c(8)]),
                )
            }
        };
        self.set_reg64(r.parent, new);
    }

    fn byte_at(&self, addr: u64) -> MemByte {
        match self.memory.get(&addr) {
            Some(b) => b.clone(),
            None => MemByte::Concrete(self.image.byte(addr)),
        }
    }

    pub fn load(&self, addr: u64, width: u8) -> SymValue {
        let bytes: Vec<MemByte> = (0..width as u64).map(|i| self.byte_at(addr.wrapping_add(i))).collect();
        if bytes.iter().all(|b| matches!(b, MemByte::Concrete(_))) {
            let mut v = 0u64;
            for (i, b) in bytes.iter().enumerate() {
                if let MemByte::Concrete(x) = b {
                    v |= (*x as u64) << (8 * i);
                }
            }
            return c(v);
        }
        // Whole aligned copy of one stored value.
        if let MemByte::Slice { val, byte: 0 } = &bytes[0] {
            let whole = bytes.iter().enumerate().all(|(i, b)| {
                matches!(b, MemByte::Slice { val: v, byte } if *byte as usize == i && v == val)
            });
            if whole {
                return value::trunc(val.clone(), width as u32 * 8);
            }
        }
        let mut acc = c(0);
        for (i, b) in bytes.into_iter().enumerate() {
            let part = match b {
                MemByte::Concrete(x) => c(x as u64),
                MemByte::Slice { val, byte } => value::trunc(
                    value::mk(ExprOp::Shr, vec![val, c(8 * byte as u64)]),
                    8,
                ),
            };
            acc = value::or(acc, value::mk(ExprOp::Shl, vec![part, c(8 * i as u64)]));
        }
        acc
    }

    pub fn store(&mut self, addr: u64, width: u8, v: &SymValue) {
        for i in 0..width {
            let a = addr.wrapping_add(i as u64);
            let b = match v.concrete() {
                Some(x) => MemByte::Concrete((x >> (8 * i as u32)) as u8),
                None => MemByte::Slice { val: v.clone(), byte: i },
            };
            self.memory.insert(a, b);
        }
    }

    /// Registers (except rsp) that depend on any origin in `mask`.
    pub fn live_registers(&self, mask: u32) -> Vec<Reg64> {
        let mut out: Vec<Reg64> = Reg64::GPRS
            .iter()
            .copied()
            .filter(|r| *r != Reg64::Rsp && self.reg(*r).dep_mask() & mask != 0)
            .collect();
        out.sort_by_key(|r| r.report_rank());
        out
    }
}
