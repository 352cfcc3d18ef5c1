//! Concrete single-instruction semantics, shared by architectural and
//! transient execution. Memory goes through a [`Port`] so the caller decides
//! timing, faults and whether stores are buffered.

use crate::asmparse::{InstrClass, Instruction, MemOperand, Op, Operand, Reg64, Register, Segment};
use crate::semantics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArchRegs {
    pub gpr: [u64; 16],
    pub flags: u64,
    pub rip: u64,
}

impl ArchRegs {
    pub fn get(&self, r: Reg64) -> u64 {
        if r == Reg64::Rip {
            return self.rip;
        }
        self.gpr[r.index()]
    }

    pub fn set(&mut self, r: Reg64, v: u64) {
        if r == Reg64::Rip {
            self.rip = v;
        } else {
            self.gpr[r.index()] = v;
        }
    }

    pub fn read(&self, r: Register) -> u64 {
        r.read(self.get(r.parent))
    }

    pub fn write(&mut self, r: Register, v: u64) {
        let p = r.write(self.get(r.parent), v);
        self.set(r.parent, p);
    }
}

/// Why a memory access did not complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortError {
    /// Architectural fault at this address (reserved page-table bit).
    Fault(u64),
    /// Transient execution ran out of time or hit a fault; abandon the path.
    Stop,
}

pub trait Port {
    fn load(&mut self, addr: u64, width: u8) -> Result<u64, PortError>;
    fn store(&mut self, addr: u64, width: u8, v: u64) -> Result<(), PortError>;
    fn clflush(&mut self, addr: u64) -> Result<(), PortError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Jump,
    Cond { taken: bool },
    Call,
    IndirectJump,
    IndirectCall,
    Return,
}

impl BranchKind {
    pub fn is_indirect(self) -> bool {
        matches!(self, BranchKind::IndirectJump | BranchKind::IndirectCall | BranchKind::Return)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Next,
    Branch { kind: BranchKind, target: u64 },
    Enclu,
    Fence,
    Unsupported,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Segments {
    pub fs: u64,
    pub gs: u64,
}

pub fn effective_address(r: &ArchRegs, m: &MemOperand, next: u64, seg: &Segments, with_segment: bool) -> u64 {
    let mut a = m.disp as u64;
    if let Some(b) = m.base {
        let bv = if b.parent == Reg64::Rip { next } else { r.read(b) };
        a = a.wrapping_add(bv);
    }
    if let Some(i) = m.index {
        a = a.wrapping_add(r.read(i).wrapping_mul(m.scale.max(1) as u64));
    }
    if with_segment {
        a = a.wrapping_add(match m.segment {
            Some(Segment::Fs) => seg.fs,
            Some(Segment::Gs) => seg.gs,
            None => 0,
        });
    }
    a
}

struct Ctx<'a> {
    next: u64,
    seg: &'a Segments,
}

impl Ctx<'_> {
    fn read(&self, r: &ArchRegs, port: &mut dyn Port, op: &Operand, width: u8) -> Result<u64, PortError> {
        Ok(match op {
            Operand::Imm(v) => v & semantics::mask(width),
            Operand::Reg(reg) => r.read(*reg),
            Operand::Mem(m) => port.load(effective_address(r, m, self.next, self.seg, true), m.width)?,
            Operand::Target(t) => *t,
        })
    }

    fn write(&self, r: &mut ArchRegs, port: &mut dyn Port, op: &Operand, v: u64) -> Result<(), PortError> {
        match op {
            Operand::Reg(reg) => r.write(*reg, v),
            Operand::Mem(m) => {
                let a = effective_address(r, m, self.next, self.seg, true);
                port.store(a, m.width, v)?;
            }
            _ => {}
        }
        Ok(())
    }
}

const IMPLICIT_OUTPUTS: &[(&str, &[Reg64])] = &[
    ("rdtsc", &[Reg64::Rax, Reg64::Rdx]),
    ("rdtscp", &[Reg64::Rax, Reg64::Rdx, Reg64::Rcx]),
    ("cpuid", &[Reg64::Rax, Reg64::Rbx, Reg64::Rcx, Reg64::Rdx]),
    ("xgetbv", &[Reg64::Rax, Reg64::Rdx]),
];

/// Execute `ins` on `regs`. Registers are only updated when the whole
/// instruction succeeds; stores issued before a failing access are the
/// port's business. `rip` is left for the caller.
pub fn execute(
    ins: &Instruction,
    next: u64,
    regs: &mut ArchRegs,
    port: &mut dyn Port,
    seg: &Segments,
) -> Result<Flow, PortError> {
    let cx = Ctx { next, seg };
    let mut r = *regs;
    let ops = &ins.operands;
    let w = ins.width;
    let mut flow = Flow::Next;
    match ins.op {
        Op::Nop => {}
        Op::Fence => flow = Flow::Fence,
        Op::Clflush => {
            if let Some(m) = ins.mem_operand() {
                port.clflush(effective_address(&r, m, next, seg, true))?;
            }
        }
        Op::Mov => {
            if ops.len() == 2 {
                let v = cx.read(&r, port, &ops[0], w)?;
                cx.write(&mut r, port, &ops[1], v)?;
            }
        }
        Op::MovZx(from) | Op::MovSx(from) => {
            let v = cx.read(&r, port, &ops[0], from.bytes())? & from.mask();
            let v = if matches!(ins.op, Op::MovSx(_)) {
                semantics::sign_extend(v, from.bytes())
            } else {
                v
            };
            cx.write(&mut r, port, &ops[1], v)?;
        }
        Op::Lea => {
            if let (Some(m), Some(d)) = (ops[0].as_mem(), ops[1].as_reg()) {
                let a = effective_address(&r, m, next, seg, false);
                r.write(d, a);
            }
        }
        Op::Xchg => {
            let a = cx.read(&r, port, &ops[0], w)?;
            let b = cx.read(&r, port, &ops[1], w)?;
            cx.write(&mut r, port, &ops[0], b)?;
            cx.write(&mut r, port, &ops[1], a)?;
        }
        Op::Add | Op::Sub | Op::Adc | Op::Sbb | Op::And | Op::Or | Op::Xor | Op::Cmp | Op::Test
        | Op::Imul | Op::Neg | Op::Not | Op::Inc | Op::Dec | Op::Shl | Op::Shr | Op::Sar
        | Op::Rol | Op::Ror => {
            let (dst_op, dst, src) = match ops.len() {
                1 => (&ops[0], cx.read(&r, port, &ops[0], w)?, 1),
                3 => {
                    let imm = cx.read(&r, port, &ops[0], w)?;
                    (&ops[2], cx.read(&r, port, &ops[1], w)?, imm)
                }
                _ => {
                    let src = cx.read(&r, port, &ops[0], w)?;
                    (&ops[1], cx.read(&r, port, &ops[1], w)?, src)
                }
            };
            let (res, flags) = semantics::alu(ins.op, w, dst, src, r.flags);
            r.flags = flags;
            if let Some(v) = res {
                cx.write(&mut r, port, dst_op, v)?;
            }
        }
        Op::Setcc(cc) => {
            let v = semantics::cond_holds(cc, r.flags) as u64;
            cx.write(&mut r, port, &ops[0], v)?;
        }
        Op::Cmovcc(cc) => {
            let src = cx.read(&r, port, &ops[0], w)?;
            if semantics::cond_holds(cc, r.flags) {
                cx.write(&mut r, port, &ops[1], src)?;
            } else if let Some(d) = ops[1].as_reg() {
                // A 32-bit cmov zero-extends even when the condition fails.
                let v = r.read(d);
                r.write(d, v);
            }
        }
        Op::Cltq => {
            let v = semantics::sign_extend(r.get(Reg64::Rax) & 0xffff_ffff, 4);
            r.set(Reg64::Rax, v);
        }
        Op::Cqto => {
            let v = ((r.get(Reg64::Rax) as i64) >> 63) as u64;
            r.set(Reg64::Rdx, v);
        }
        Op::Push => {
            let v = cx.read(&r, port, &ops[0], 8)?;
            push(&mut r, port, v)?;
        }
        Op::Pop => {
            let sp = r.get(Reg64::Rsp);
            let v = port.load(sp, 8)?;
            r.set(Reg64::Rsp, sp.wrapping_add(8));
            cx.write(&mut r, port, &ops[0], v)?;
        }
        Op::Jcc(cc) => {
            let taken = semantics::cond_holds(cc, r.flags);
            let target = if taken { ins.direct_target().unwrap_or(next) } else { next };
            flow = Flow::Branch { kind: BranchKind::Cond { taken }, target };
        }
        Op::Jmp => {
            flow = if ins.class == InstrClass::IndirectJump {
                let t = cx.read(&r, port, &ops[0], 8)?;
                Flow::Branch { kind: BranchKind::IndirectJump, target: t }
            } else {
                Flow::Branch { kind: BranchKind::Jump, target: ins.direct_target().unwrap_or(next) }
            };
        }
        Op::Call => {
            let (kind, t) = if ins.class == InstrClass::IndirectCall {
                (BranchKind::IndirectCall, cx.read(&r, port, &ops[0], 8)?)
            } else {
                (BranchKind::Call, ins.direct_target().unwrap_or(next))
            };
            push(&mut r, port, next)?;
            flow = Flow::Branch { kind, target: t };
        }
        Op::Ret => {
            let sp = r.get(Reg64::Rsp);
            let t = port.load(sp, 8)?;
            let extra = match ops.first() {
                Some(Operand::Imm(n)) => *n,
                _ => 0,
            };
            r.set(Reg64::Rsp, sp.wrapping_add(8).wrapping_add(extra));
            flow = Flow::Branch { kind: BranchKind::Return, target: t };
        }
        Op::Enclu => flow = Flow::Enclu,
        Op::Unsupported => {
            // Outputs we can name are zeroed; flags are cleared.
            let mut targets: Vec<Reg64> = IMPLICIT_OUTPUTS
                .iter()
                .find(|(m, _)| *m == ins.mnemonic)
                .map(|(_, r)| r.to_vec())
                .unwrap_or_default();
            if let Some(last) = ins.raw_operands.rsplit(',').next() {
                let tok = last.trim().trim_start_matches('*');
                if let Some(reg) = tok.strip_prefix('%').and_then(Register::from_token) {
                    targets.push(reg.parent);
                }
            }
            for t in targets {
                r.set(t, 0);
            }
            r.flags &= !semantics::STATUS_MASK;
            flow = Flow::Unsupported;
        }
    }
    *regs = r;
    Ok(flow)
}

fn push(r: &mut ArchRegs, port: &mut dyn Port, v: u64) -> Result<(), PortError> {
    let sp = r.get(Reg64::Rsp).wrapping_sub(8);
    port.store(sp, 8, v)?;
    r.set(Reg64::Rsp, sp);
    Ok(())
}
