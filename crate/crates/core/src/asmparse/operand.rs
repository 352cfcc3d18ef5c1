use std::fmt;

use serde::{Deserialize, Serialize};

use super::register::{Reg64, Register};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Fs,
    Gs,
}

/// `seg:disp(base,index,scale)` with the access width in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemOperand {
    pub segment: Option<Segment>,
    pub base: Option<Register>,
    pub index: Option<Register>,
    pub scale: u8,
    pub disp: i64,
    pub width: u8,
}

impl MemOperand {
    pub fn base64(&self) -> Option<Reg64> {
        self.base.map(|r| r.parent)
    }

    pub fn index64(&self) -> Option<Reg64> {
        self.index.map(|r| r.parent)
    }

    pub fn is_rip_relative(&self) -> bool {
        self.base64() == Some(Reg64::Rip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Imm(u64),
    Reg(Register),
    Mem(MemOperand),
    /// Direct branch or call destination.
    Target(u64),
}

impl Operand {
    pub fn as_reg(&self) -> Option<Register> {
        match self {
            Operand::Reg(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_mem(&self) -> Option<&MemOperand> {
        match self {
            Operand::Mem(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_mem(&self) -> bool {
        matches!(self, Operand::Mem(_))
    }
}

fn hex_signed(v: i64) -> String {
    if v < 0 {
        format!("-{:#x}", v.unsigned_abs())
    } else {
        format!("{v:#x}")
    }
}

impl fmt::Display for MemOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.segment {
            Some(Segment::Fs) => f.write_str("%fs:")?,
            Some(Segment::Gs) => f.write_str("%gs:")?,
            None => {}
        }
        if self.base.is_none() && self.index.is_none() {
            return f.write_str(&hex_signed(self.disp));
        }
        if self.disp != 0 {
            f.write_str(&hex_signed(self.disp))?;
        }
        f.write_str("(")?;
        if let Some(b) = self.base {
            write!(f, "{b}")?;
        }
        if let Some(i) = self.index {
            write!(f, ",{i},{}", self.scale)?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Imm(v) => write!(f, "${v:#x}"),
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Mem(m) => write!(f, "{m}"),
            Operand::Target(t) => write!(f, "{t:x}"),
        }
    }
}
