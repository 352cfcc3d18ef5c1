use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::asmparse::{
    Cond, InstrClass, Instruction, Listing, LookupError, MemOperand, Op, Operand, Reg64, Register,
    Segment,
};
use crate::semantics::{self, STATUS_MASK};

use super::config::{ConfigError, EntryModel, ExplorationConfig};
use super::state::{MachineState, MemoryImage, Mode, TrailEvent};
use super::value::{self, c, ExprOp, Origin, SymValue};

#[derive(Debug, Error)]
pub enum SymexError {
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no instruction at start address {0:#x}")]
    NoInstruction(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeadEnd {
    OutsideListing(u64),
    SymbolicTarget,
    SymbolicRsp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEnd {
    /// `ret` at call depth 0: control went back to whoever entered.
    Returned,
    /// Final EEXIT of the path.
    Exited,
    DeadEnd(DeadEnd),
    /// Step budget exhausted.
    Budget,
}

pub enum Step {
    /// Successors in exploration order, plus how many were pruned by bounds.
    Next(Vec<MachineState>, u32),
    End(MachineState, PathEnd),
}

/// Per-listing execution context shared by every state.
pub struct Executor<'a> {
    pub listing: &'a Listing,
    pub em: &'a EntryModel,
    pub cfg: &'a ExplorationConfig,
    selector: Register,
    entry: u64,
    image: Rc<MemoryImage>,
    gs_base: u64,
}

const IMPLICIT_OUTPUTS: &[(&str, &[Reg64])] = &[
    ("rdtsc", &[Reg64::Rax, Reg64::Rdx]),
    ("rdtscp", &[Reg64::Rax, Reg64::Rdx, Reg64::Rcx]),
    ("cpuid", &[Reg64::Rax, Reg64::Rbx, Reg64::Rcx, Reg64::Rdx]),
    ("xgetbv", &[Reg64::Rax, Reg64::Rdx]),
    ("rdpid", &[]),
];

impl<'a> Executor<'a> {
    pub fn new(
        listing: &'a Listing,
        em: &'a EntryModel,
        cfg: &'a ExplorationConfig,
    ) -> Result<Self, SymexError> {
        let entry = listing.resolve_symbol(&em.entry_symbol)?;
        Self::with_entry(listing, em, cfg, entry)
    }

    /// Executor that never re-enters; used for short window runs over code
    /// that has no entry symbol.
    pub fn detached(
        listing: &'a Listing,
        em: &'a EntryModel,
        cfg: &'a ExplorationConfig,
    ) -> Result<Self, SymexError> {
        Self::with_entry(listing, em, cfg, 0)
    }

    fn with_entry(
        listing: &'a Listing,
        em: &'a EntryModel,
        cfg: &'a ExplorationConfig,
        entry: u64,
    ) -> Result<Self, SymexError> {
        cfg.validate()?;
        let selector = em.selector()?;
        let mut image = MemoryImage {
            fills: listing.directives.fills.clone(),
            stack: (em.stack_top.saturating_sub(em.stack_size), em.stack_top + 0x1000),
            stack_fill: em.stack_fill,
            data_fill: em.data_fill,
            ..Default::default()
        };
        for (addr, bytes) in listing.directives.data.iter().chain(&listing.directives.secrets) {
            for (i, b) in bytes.iter().enumerate() {
                image.bytes.insert(addr + i as u64, *b);
            }
        }
        Ok(Executor {
            listing,
            em,
            cfg,
            selector,
            entry,
            image: Rc::new(image),
            gs_base: listing.directives.gsbase.unwrap_or(em.gs_base),
        })
    }

    pub fn entry(&self) -> u64 {
        self.entry
    }

    fn blank_state(&self, mode: Mode, rip: u64) -> MachineState {
        let mut regs: [SymValue; 16] = Default::default();
        regs[Reg64::Rsp.index()] = c(self.em.stack_top);
        MachineState {
            regs,
            flags: c(0),
            rip,
            memory: HashMap::new(),
            sym_stores: Vec::new(),
            call_depth: 0,
            steps: 0,
            trail: Vec::new(),
            mode,
            reentered: false,
            fork_depth: 0,
            fork_counts: HashMap::new(),
            next_symbol: 0,
            image: self.image.clone(),
        }
    }

    /// State at `rip` where every general register except rsp holds a fresh
    /// symbol whose origin is the register itself.
    pub fn symbolic_state(&self, rip: u64) -> MachineState {
        let mut s = self.blank_state(Mode::ECall, rip);
        for r in Reg64::GPRS {
            if r != Reg64::Rsp {
                let v = s.fresh(Origin::Attacker(r));
                s.set_reg64(r, v);
            }
        }
        s
    }

    /// Give every attacker register a fresh symbol and pin the selector view.
    fn seed_attacker(&self, s: &mut MachineState, selector: u64) {
        for r in Reg64::GPRS {
            if r == Reg64::Rsp {
                continue;
            }
            let v = if self.em.is_attacker(r) {
                s.fresh(Origin::Attacker(r))
            } else {
                c(0)
            };
            s.set_reg64(r, v);
        }
        let sel = self.selector;
        let m = sel.width.mask() << sel.shift();
        let parent = s.reg(sel.parent).clone();
        let pinned = value::or(value::and(parent, c(!m)), c((selector << sel.shift()) & m));
        s.set_reg64(sel.parent, pinned);
        s.flags = c(0);
    }

    /// Initial state for `mode`. ECall starts at the entry symbol with attacker
    /// input; ORet starts concretely at `start` (default: the OCall interface)
    /// and receives attacker input when it re-enters.
    pub fn init_state(&self, mode: Mode, start: Option<&str>) -> Result<MachineState, SymexError> {
        let s = match mode {
            Mode::ECall => {
                let rip = match start {
                    Some(name) => self.listing.resolve_symbol(name)?,
                    None => self.entry,
                };
                let mut s = self.blank_state(mode, rip);
                self.seed_attacker(&mut s, self.em.ecall_selector);
                s
            }
            Mode::ORet => {
                let name = start.unwrap_or(&self.em.ocall_symbol);
                let rip = self.listing.resolve_symbol(name)?;
                self.blank_state(mode, rip)
            }
        };
        if self.listing.at(s.rip).is_none() {
            return Err(SymexError::NoInstruction(s.rip));
        }
        Ok(s)
    }

    fn segment_base(&self, seg: Option<Segment>) -> u64 {
        match seg {
            Some(Segment::Gs) => self.gs_base,
            Some(Segment::Fs) => self.em.fs_base,
            None => 0,
        }
    }

    pub fn effective_address(&self, s: &MachineState, ins: &Instruction, m: &MemOperand, with_segment: bool) -> SymValue {
        let mut a = c(m.disp as u64);
        if let Some(b) = m.base {
            let bv = if b.parent == Reg64::Rip {
                c(self.listing.fallthrough(ins.address))
            } else {
                s.read_reg(b)
            };
            a = value::add(bv, a);
        }
        if let Some(i) = m.index {
            let iv = s.read_reg(i);
            let scaled = value::mk(ExprOp::Mul, vec![iv, c(m.scale.max(1) as u64)]);
            a = value::add(a, scaled);
        }
        if with_segment && m.segment.is_some() {
            a = value::add(a, c(self.segment_base(m.segment)));
        }
        a
    }

    fn load(&self, s: &MachineState, addr: &SymValue, width: u8) -> SymValue {
        match addr.concrete() {
            Some(a) => s.load(a, width),
            None => value::mk(ExprOp::LoadOf { width }, vec![addr.clone()]),
        }
    }

    fn store(&self, s: &mut MachineState, addr: SymValue, width: u8, v: SymValue) {
        match addr.concrete() {
            Some(a) => s.store(a, width, &v),
            None => s.sym_stores.push((addr, v, width)),
        }
    }

    fn read(&self, s: &MachineState, ins: &Instruction, op: &Operand, width: u8) -> SymValue {
        match op {
            Operand::Imm(v) => c(v & semantics::mask(width)),
            Operand::Reg(r) => s.read_reg(*r),
            Operand::Mem(m) => {
                let a = self.effective_address(s, ins, m, true);
                self.load(s, &a, m.width)
            }
            Operand::Target(t) => c(*t),
        }
    }

    fn write(&self, s: &mut MachineState, ins: &Instruction, op: &Operand, v: SymValue) {
        match op {
            Operand::Reg(r) => s.write_reg(*r, v),
            Operand::Mem(m) => {
                let a = self.effective_address(s, ins, m, true);
                self.store(s, a, m.width, v);
            }
            _ => {}
        }
    }

    fn push(&self, s: &mut MachineState, v: SymValue) -> Result<(), DeadEnd> {
        let sp = s.rsp().ok_or(DeadEnd::SymbolicRsp)?.wrapping_sub(8);
        s.set_reg64(Reg64::Rsp, c(sp));
        s.store(sp, 8, &v);
        Ok(())
    }

    fn pop(&self, s: &mut MachineState) -> Result<SymValue, DeadEnd> {
        let sp = s.rsp().ok_or(DeadEnd::SymbolicRsp)?;
        let v = s.load(sp, 8);
        s.set_reg64(Reg64::Rsp, c(sp.wrapping_add(8)));
        Ok(v)
    }

    fn havoc(&self, s: &mut MachineState, ins: &Instruction) {
        let mut targets: Vec<Reg64> = IMPLICIT_OUTPUTS
            .iter()
            .find(|(m, _)| *m == ins.mnemonic)
            .map(|(_, r)| r.to_vec())
            .unwrap_or_default();
        if let Some(last) = ins.raw_operands.rsplit(',').next() {
            let tok = last.trim().trim_start_matches('*');
            if let Some(name) = tok.strip_prefix('%') {
                if let Some(r) = Register::from_token(name) {
                    targets.push(r.parent);
                }
            }
        }
        for r in targets {
            let h = s.fresh(Origin::Havoc);
            s.set_reg64(r, h);
        }
        s.flags = s.fresh(Origin::Havoc);
    }

    fn enter(&self, s: &mut MachineState, at: u64) {
        s.trail.push(TrailEvent::Reenter { addr: at });
        s.reentered = true;
        s.call_depth = 0;
        self.seed_attacker(s, self.em.oret_selector);
        s.rip = self.entry;
    }

    /// Execute the instruction at `s.rip`.
    pub fn step(&self, mut s: MachineState) -> Step {
        if s.steps >= self.cfg.max_steps {
            return Step::End(s, PathEnd::Budget);
        }
        let Some(ins) = self.listing.at(s.rip) else {
            let rip = s.rip;
            return Step::End(s, PathEnd::DeadEnd(DeadEnd::OutsideListing(rip)));
        };
        s.steps += 1;
        let next = self.listing.fallthrough(ins.address);
        let ops = &ins.operands;
        let w = ins.width;
        let mut rip = next;
        macro_rules! tri {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(d) => return Step::End(s, PathEnd::DeadEnd(d)),
                }
            };
        }
        match ins.op {
            Op::Nop | Op::Fence | Op::Clflush => {}
            Op::Mov => {
                if ops.len() == 2 {
                    let v = self.read(&s, ins, &ops[0], w);
                    self.write(&mut s, ins, &ops[1], v);
                }
            }
            Op::MovZx(from) | Op::MovSx(from) => {
                let v = self.read(&s, ins, &ops[0], from.bytes());
                let v = value::trunc(v, from.bits());
                let v = if matches!(ins.op, Op::MovSx(_)) {
                    value::mk(ExprOp::SignExtend { from: from.bytes() }, vec![v])
                } else {
                    v
                };
                self.write(&mut s, ins, &ops[1], v);
            }
            Op::Lea => {
                if let (Some(m), Some(r)) = (ops[0].as_mem(), ops[1].as_reg()) {
                    let a = self.effective_address(&s, ins, m, false);
                    s.write_reg(r, a);
                }
            }
            Op::Xchg => {
                let a = self.read(&s, ins, &ops[0], w);
                let b = self.read(&s, ins, &ops[1], w);
                self.write(&mut s, ins, &ops[0], b);
                self.write(&mut s, ins, &ops[1], a);
            }
            Op::Add | Op::Sub | Op::Adc | Op::Sbb | Op::And | Op::Or | Op::Xor | Op::Cmp
            | Op::Test | Op::Imul | Op::Neg | Op::Not | Op::Inc | Op::Dec | Op::Shl | Op::Shr
            | Op::Sar | Op::Rol | Op::Ror => {
                let (dst_op, dst, src) = match ops.len() {
                    1 => {
                        let d = self.read(&s, ins, &ops[0], w);
                        (&ops[0], d, c(1))
                    }
                    3 => {
                        let imm = self.read(&s, ins, &ops[0], w);
                        let src = self.read(&s, ins, &ops[1], w);
                        (&ops[2], src, imm)
                    }
                    _ => {
                        let src = self.read(&s, ins, &ops[0], w);
                        let d = self.read(&s, ins, &ops[1], w);
                        (&ops[1], d, src)
                    }
                };
                let (res, flags) = sym_alu(ins.op, w, dst, src, s.flags.clone());
                s.flags = flags;
                if let Some(r) = res {
                    self.write(&mut s, ins, dst_op, r);
                }
            }
            Op::Setcc(cc) => {
                let v = cond_value(cc, &s.flags);
                self.write(&mut s, ins, &ops[0], v);
            }
            Op::Cmovcc(cc) => {
                let src = self.read(&s, ins, &ops[0], w);
                let dst = self.read(&s, ins, &ops[1], w);
                let v = match s.flags.concrete() {
                    Some(f) => {
                        if semantics::cond_holds(cc, f) {
                            src
                        } else {
                            dst
                        }
                    }
                    None => value::mk(ExprOp::Select(cc), vec![s.flags.clone(), src, dst]),
                };
                self.write(&mut s, ins, &ops[1], v);
            }
            Op::Cltq => {
                let v = value::trunc(s.reg(Reg64::Rax).clone(), 32);
                s.set_reg64(Reg64::Rax, value::mk(ExprOp::SignExtend { from: 4 }, vec![v]));
            }
            Op::Cqto => {
                let v = value::mk(ExprOp::Sar, vec![s.reg(Reg64::Rax).clone(), c(63)]);
                s.set_reg64(Reg64::Rdx, v);
            }
            Op::Push => {
                let v = self.read(&s, ins, &ops[0], 8);
                tri!(self.push(&mut s, v));
            }
            Op::Pop => {
                let v = tri!(self.pop(&mut s));
                self.write(&mut s, ins, &ops[0], v);
            }
            Op::Jcc(cc) => {
                let target = ins.direct_target().unwrap_or(next);
                match s.flags.concrete() {
                    Some(f) => {
                        let taken = semantics::cond_holds(cc, f);
                        s.trail.push(TrailEvent::Cond { addr: ins.address, taken });
                        if taken {
                            rip = target;
                        }
                    }
                    None => return self.fork(s, ins.address, target, next),
                }
            }
            Op::Jmp => {
                if ins.class == InstrClass::IndirectJump {
                    let t = self.read(&s, ins, &ops[0], 8);
                    rip = tri!(self.indirect(&mut s, ins.address, t));
                } else {
                    rip = ins.direct_target().unwrap_or(next);
                }
            }
            Op::Call => {
                let t = if ins.class == InstrClass::IndirectCall {
                    self.read(&s, ins, &ops[0], 8)
                } else {
                    c(ins.direct_target().unwrap_or(next))
                };
                tri!(self.push(&mut s, c(next)));
                s.call_depth += 1;
                rip = tri!(self.indirect_or_direct(&mut s, ins, t));
            }
            Op::Ret => {
                if s.call_depth == 0 {
                    return Step::End(s, PathEnd::Returned);
                }
                let t = tri!(self.pop(&mut s));
                if let Some(Operand::Imm(n)) = ops.first() {
                    let sp = s.rsp().unwrap_or(0).wrapping_add(*n);
                    s.set_reg64(Reg64::Rsp, c(sp));
                }
                s.call_depth -= 1;
                rip = tri!(self.indirect(&mut s, ins.address, t));
            }
            Op::Enclu => {
                if s.reg(Reg64::Rax).concrete() == Some(4) {
                    match s.mode {
                        Mode::ORet if !s.reentered => {
                            self.enter(&mut s, ins.address);
                            return Step::Next(vec![s], 0);
                        }
                        _ => return Step::End(s, PathEnd::Exited),
                    }
                }
                let h = s.fresh(Origin::Havoc);
                s.set_reg64(Reg64::Rax, h);
            }
            Op::Unsupported => self.havoc(&mut s, ins),
        }
        if s.rsp().is_none() {
            return Step::End(s, PathEnd::DeadEnd(DeadEnd::SymbolicRsp));
        }
        s.rip = rip;
        Step::Next(vec![s], 0)
    }

    fn indirect_or_direct(&self, s: &mut MachineState, ins: &Instruction, t: SymValue) -> Result<u64, DeadEnd> {
        if ins.class == InstrClass::IndirectCall {
            self.indirect(s, ins.address, t)
        } else {
            Ok(t.concrete().unwrap_or(0))
        }
    }

    fn indirect(&self, s: &mut MachineState, addr: u64, t: SymValue) -> Result<u64, DeadEnd> {
        let t = t.concrete().ok_or(DeadEnd::SymbolicTarget)?;
        s.trail.push(TrailEvent::Indirect { addr, target: t });
        if self.listing.at(t).is_none() {
            return Err(DeadEnd::OutsideListing(t));
        }
        Ok(t)
    }

    fn fork(&self, mut s: MachineState, addr: u64, target: u64, next: u64) -> Step {
        let count = s.fork_counts.entry(addr).or_insert(0);
        *count += 1;
        let over = *count > self.cfg.loop_bound || s.fork_depth >= self.cfg.max_fork_depth;
        s.fork_depth += 1;
        let mut fall = s.clone();
        fall.trail.push(TrailEvent::Cond { addr, taken: false });
        fall.rip = next;
        if over {
            return Step::Next(vec![fall], 1);
        }
        s.trail.push(TrailEvent::Cond { addr, taken: true });
        s.rip = target;
        Step::Next(vec![fall, s], 0)
    }
}

/// Flag-reading condition as a 0/1 value.
pub fn cond_value(cc: Cond, flags: &SymValue) -> SymValue {
    value::mk(ExprOp::CondBit(cc), vec![flags.clone()])
}

fn reads_carry(op: Op) -> bool {
    matches!(op, Op::Adc | Op::Sbb | Op::Inc | Op::Dec | Op::Rol | Op::Ror)
}

/// Symbolic counterpart of [`semantics::alu`]: folds when every input that
/// matters is concrete, otherwise builds expressions and an opaque flags cell.
pub fn sym_alu(op: Op, width: u8, dst: SymValue, src: SymValue, flags: SymValue) -> (Option<SymValue>, SymValue) {
    if op == Op::Not {
        let m = semantics::mask(width);
        return (Some(value::mk(ExprOp::Xor, vec![value::trunc(dst, width as u32 * 8), c(m)])), flags);
    }
    let needs_flags = reads_carry(op);
    if let (Some(d), Some(sv)) = (dst.concrete(), src.concrete()) {
        if let Some(f) = flags.concrete() {
            let (r, nf) = semantics::alu(op, width, d, sv, f);
            return (r.map(c), c(nf));
        }
        if !needs_flags {
            let (r, nf) = semantics::alu(op, width, d, sv, 0);
            return (r.map(c), c(nf & STATUS_MASK));
        }
    }
    let bits = width as u32 * 8;
    let m = semantics::mask(width);
    let carry = || value::mk(ExprOp::CondBit(Cond::B), vec![flags.clone()]);
    let count_mask = if width == 8 { 63 } else { 31 };
    let result = match op {
        Op::Add => Some(value::add(dst.clone(), src.clone())),
        Op::Adc => Some(value::add(value::add(dst.clone(), src.clone()), carry())),
        Op::Sub | Op::Cmp => Some(value::mk(ExprOp::Sub, vec![dst.clone(), src.clone()])),
        Op::Sbb => Some(value::mk(
            ExprOp::Sub,
            vec![value::mk(ExprOp::Sub, vec![dst.clone(), src.clone()]), carry()],
        )),
        Op::And | Op::Test => Some(value::and(dst.clone(), src.clone())),
        Op::Or => Some(value::or(dst.clone(), src.clone())),
        Op::Xor => Some(value::mk(ExprOp::Xor, vec![dst.clone(), src.clone()])),
        Op::Imul => Some(value::mk(
            ExprOp::Mul,
            vec![
                value::mk(ExprOp::SignExtend { from: width }, vec![dst.clone()]),
                value::mk(ExprOp::SignExtend { from: width }, vec![src.clone()]),
            ],
        )),
        Op::Neg => Some(value::mk(ExprOp::Sub, vec![c(0), dst.clone()])),
        Op::Not => Some(value::mk(ExprOp::Xor, vec![dst.clone(), c(m)])),
        Op::Inc => Some(value::add(dst.clone(), c(1))),
        Op::Dec => Some(value::add(dst.clone(), c(u64::MAX))),
        Op::Shl | Op::Shr | Op::Sar | Op::Rol | Op::Ror => {
            let count = value::and(src.clone(), c(count_mask));
            if count.concrete() == Some(0) {
                return (Some(value::trunc(dst, bits)), flags);
            }
            let e = match op {
                Op::Shl => value::mk(ExprOp::Shl, vec![dst.clone(), count]),
                Op::Shr => value::mk(ExprOp::Shr, vec![dst.clone(), count]),
                Op::Sar => value::mk(
                    ExprOp::Sar,
                    vec![value::mk(ExprOp::SignExtend { from: width }, vec![dst.clone()]), count],
                ),
                Op::Rol => value::mk(ExprOp::Rol { width }, vec![dst.clone(), count]),
                _ => value::mk(ExprOp::Ror { width }, vec![dst.clone(), count]),
            };
            Some(e)
        }
        _ => Some(src.clone()),
    }
    .map(|r| value::trunc(r, bits));
    let logic = matches!(op, Op::And | Op::Or | Op::Xor | Op::Test);
    let new_flags = match (&result, logic) {
        // Logic ops define every status flag from the result alone.
        (Some(r), true) if r.is_concrete() => {
            let (_, f) = semantics::alu(Op::Test, width, r.concrete().unwrap(), m, 0);
            c(f)
        }
        _ => {
            let prior = if needs_flags { flags.clone() } else { c(0) };
            let f = value::mk(ExprOp::Flags { op, width }, vec![dst, src, prior]);
            match f.concrete() {
                Some(v) if !needs_flags => c(v & STATUS_MASK),
                _ => f,
            }
        }
    };
    let result = match op {
        Op::Cmp | Op::Test => None,
        _ => result,
    };
    (result, new_flags)
}
