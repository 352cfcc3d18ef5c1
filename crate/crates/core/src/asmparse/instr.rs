use std::fmt;

use serde::{Deserialize, Serialize};

use super::operand::Operand;
use super::register::{Register, Width};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstrClass {
    Load,
    Store,
    RegArith,
    Lea,
    Compare,
    DirectCall,
    NearReturn,
    IndirectJump,
    IndirectCall,
    CondBranch,
    DirectJump,
    Push,
    Pop,
    Xchg,
    Serialize,
    CacheFlush,
    Enclu,
    Nop,
    Unsupported,
}

impl InstrClass {
    pub fn is_indirect_branch(self) -> bool {
        matches!(
            self,
            InstrClass::IndirectJump | InstrClass::IndirectCall | InstrClass::NearReturn
        )
    }

    pub fn is_control_transfer(self) -> bool {
        matches!(
            self,
            InstrClass::IndirectJump
                | InstrClass::IndirectCall
                | InstrClass::NearReturn
                | InstrClass::DirectCall
                | InstrClass::DirectJump
                | InstrClass::CondBranch
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            InstrClass::Load => "load",
            InstrClass::Store => "store",
            InstrClass::RegArith => "reg-arith",
            InstrClass::Lea => "lea",
            InstrClass::Compare => "compare",
            InstrClass::DirectCall => "direct-call",
            InstrClass::NearReturn => "near-return",
            InstrClass::IndirectJump => "indirect-jump",
            InstrClass::IndirectCall => "indirect-call",
            InstrClass::CondBranch => "cond-branch",
            InstrClass::DirectJump => "direct-jump",
            InstrClass::Push => "push",
            InstrClass::Pop => "pop",
            InstrClass::Xchg => "xchg",
            InstrClass::Serialize => "serialize",
            InstrClass::CacheFlush => "cache-flush",
            InstrClass::Enclu => "enclu",
            InstrClass::Nop => "nop",
            InstrClass::Unsupported => "unsupported",
        }
    }
}

/// x86 condition codes in encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    O,
    No,
    B,
    Ae,
    E,
    Ne,
    Be,
    A,
    S,
    Ns,
    P,
    Np,
    L,
    Ge,
    Le,
    G,
}

impl Cond {
    pub fn parse(s: &str) -> Option<Cond> {
        Some(match s {
            "o" => Cond::O,
            "no" => Cond::No,
            "b" | "c" | "nae" => Cond::B,
            "ae" | "nb" | "nc" => Cond::Ae,
            "e" | "z" => Cond::E,
            "ne" | "nz" => Cond::Ne,
            "be" | "na" => Cond::Be,
            "a" | "nbe" => Cond::A,
            "s" => Cond::S,
            "ns" => Cond::Ns,
            "p" | "pe" => Cond::P,
            "np" | "po" => Cond::Np,
            "l" | "nge" => Cond::L,
            "ge" | "nl" => Cond::Ge,
            "le" | "ng" => Cond::Le,
            "g" | "nle" => Cond::G,
            _ => return None,
        })
    }
}

/// Operation semantics shared by the symbolic engine and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Mov,
    MovZx(Width),
    MovSx(Width),
    Lea,
    Add,
    Sub,
    Adc,
    Sbb,
    And,
    Or,
    Xor,
    Cmp,
    Test,
    Imul,
    Neg,
    Not,
    Inc,
    Dec,
    Shl,
    Shr,
    Sar,
    Rol,
    Ror,
    Setcc(Cond),
    Cmovcc(Cond),
    Jcc(Cond),
    Jmp,
    Call,
    Ret,
    Push,
    Pop,
    Xchg,
    Fence,
    Clflush,
    Enclu,
    Nop,
    /// cltq / cdqe
    Cltq,
    /// cqto / cqo
    Cqto,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub address: u64,
    pub prefixes: Vec<String>,
    pub mnemonic: String,
    pub op: Op,
    pub class: InstrClass,
    pub operands: Vec<Operand>,
    /// Operand text kept verbatim for unsupported mnemonics.
    pub raw_operands: String,
    /// Operation width in bytes.
    pub width: u8,
    pub source: String,
}

impl Instruction {
    pub fn mem_operand(&self) -> Option<&super::operand::MemOperand> {
        self.operands.iter().find_map(|o| o.as_mem())
    }

    /// Destination operand in AT&T order (the last one).
    pub fn dest(&self) -> Option<&Operand> {
        self.operands.last()
    }

    pub fn dest_reg(&self) -> Option<Register> {
        self.dest().and_then(|o| o.as_reg())
    }

    pub fn direct_target(&self) -> Option<u64> {
        self.operands.iter().find_map(|o| match o {
            Operand::Target(t) => Some(*t),
            _ => None,
        })
    }

    /// True when the instruction reads memory through its memory operand.
    pub fn reads_memory(&self) -> bool {
        let Some(pos) = self.operands.iter().position(|o| o.is_mem()) else {
            return false;
        };
        let last = pos + 1 == self.operands.len();
        match self.op {
            Op::Lea | Op::Clflush | Op::Nop => false,
            Op::Mov | Op::MovZx(_) | Op::MovSx(_) => !last,
            Op::Setcc(_) => false,
            Op::Pop => false,
            _ => true,
        }
    }

    /// True when the instruction writes memory through its memory operand.
    pub fn writes_memory(&self) -> bool {
        let Some(pos) = self.operands.iter().position(|o| o.is_mem()) else {
            return false;
        };
        let last = pos + 1 == self.operands.len();
        match self.op {
            Op::Lea | Op::Clflush | Op::Nop | Op::Cmp | Op::Test => false,
            Op::Jmp | Op::Call | Op::Push => false,
            Op::Xchg => true,
            _ => last,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:x}: ", self.address)?;
        for p in &self.prefixes {
            write!(f, "{p} ")?;
        }
        f.write_str(&self.mnemonic)?;
        if self.class == InstrClass::Unsupported {
            if !self.raw_operands.is_empty() {
                write!(f, " {}", self.raw_operands)?;
            }
            return Ok(());
        }
        let indirect = matches!(
            self.class,
            InstrClass::IndirectCall | InstrClass::IndirectJump
        );
        for (i, o) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { "," })?;
            if indirect {
                f.write_str("*")?;
            }
            write!(f, "{o}")?;
        }
        Ok(())
    }
}
