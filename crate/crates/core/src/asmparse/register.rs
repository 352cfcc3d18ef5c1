use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A 64-bit architectural register. `Rip` only ever appears as a memory base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reg64 {
    Rax,
    Rbx,
    Rcx,
    Rdx,
    Rsi,
    Rdi,
    Rbp,
    Rsp,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
    R15,
    Rip,
}

impl Reg64 {
    /// The sixteen general-purpose registers, in report order.
    pub const GPRS: [Reg64; 16] = [
        Reg64::Rax,
        Reg64::Rbx,
        Reg64::Rcx,
        Reg64::Rdx,
        Reg64::Rsi,
        Reg64::Rdi,
        Reg64::Rbp,
        Reg64::Rsp,
        Reg64::R8,
        Reg64::R9,
        Reg64::R10,
        Reg64::R11,
        Reg64::R12,
        Reg64::R13,
        Reg64::R14,
        Reg64::R15,
    ];

    /// Dense index into a 16-slot register file. Panics for `Rip`.
    pub fn index(self) -> usize {
        match self {
            Reg64::Rip => panic!("rip has no general-purpose slot"),
            r => r as usize,
        }
    }

    pub fn from_index(i: usize) -> Reg64 {
        Self::GPRS[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Reg64::Rax => "rax",
            Reg64::Rbx => "rbx",
            Reg64::Rcx => "rcx",
            Reg64::Rdx => "rdx",
            Reg64::Rsi => "rsi",
            Reg64::Rdi => "rdi",
            Reg64::Rbp => "rbp",
            Reg64::Rsp => "rsp",
            Reg64::R8 => "r8",
            Reg64::R9 => "r9",
            Reg64::R10 => "r10",
            Reg64::R11 => "r11",
            Reg64::R12 => "r12",
            Reg64::R13 => "r13",
            Reg64::R14 => "r14",
            Reg64::R15 => "r15",
            Reg64::Rip => "rip",
        }
    }

    /// Ordering used by report register lists: legacy registers
    /// alphabetically by role, then r8..r15.
    pub fn report_rank(self) -> u8 {
        match self {
            Reg64::Rax => 0,
            Reg64::Rbx => 1,
            Reg64::Rcx => 2,
            Reg64::Rdx => 3,
            Reg64::Rdi => 4,
            Reg64::Rsi => 5,
            Reg64::Rbp => 6,
            Reg64::Rsp => 7,
            Reg64::R8 => 8,
            Reg64::R9 => 9,
            Reg64::R10 => 10,
            Reg64::R11 => 11,
            Reg64::R12 => 12,
            Reg64::R13 => 13,
            Reg64::R14 => 14,
            Reg64::R15 => 15,
            Reg64::Rip => 16,
        }
    }
}

impl fmt::Display for Reg64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reg64 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match Register::from_token(s) {
            Some(r) if r.width == Width::W64 => Ok(r.parent),
            _ => Err(format!("not a 64-bit register: {s}")),
        }
    }
}

/// Register view width in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Width {
    W8,
    W16,
    W32,
    W64,
}

impl Width {
    pub fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
            Width::W32 => 32,
            Width::W64 => 64,
        }
    }

    pub fn bytes(self) -> u8 {
        (self.bits() / 8) as u8
    }

    pub fn from_bytes(n: u8) -> Option<Width> {
        match n {
            1 => Some(Width::W8),
            2 => Some(Width::W16),
            4 => Some(Width::W32),
            8 => Some(Width::W64),
            _ => None,
        }
    }

    pub fn mask(self) -> u64 {
        match self {
            Width::W64 => u64::MAX,
            w => (1u64 << w.bits()) - 1,
        }
    }
}

/// How a write through a sub-register view affects its 64-bit parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteSemantics {
    FullWidth,
    /// 32-bit writes clear bits 32..64 of the parent.
    ZeroExtend32,
    /// 16-bit and low 8-bit writes keep the remaining parent bits.
    MergeLow,
    /// ah/bh/ch/dh: bits 8..16 of the parent.
    MergeHigh8,
}

/// A register token as written in the listing: a parent plus a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Register {
    pub parent: Reg64,
    pub width: Width,
    /// True for the legacy high-byte views (ah, bh, ch, dh).
    pub high8: bool,
}

const LEGACY: [(Reg64, [&str; 4]); 8] = [
    (Reg64::Rax, ["rax", "eax", "ax", "al"]),
    (Reg64::Rbx, ["rbx", "ebx", "bx", "bl"]),
    (Reg64::Rcx, ["rcx", "ecx", "cx", "cl"]),
    (Reg64::Rdx, ["rdx", "edx", "dx", "dl"]),
    (Reg64::Rsi, ["rsi", "esi", "si", "sil"]),
    (Reg64::Rdi, ["rdi", "edi", "di", "dil"]),
    (Reg64::Rbp, ["rbp", "ebp", "bp", "bpl"]),
    (Reg64::Rsp, ["rsp", "esp", "sp", "spl"]),
];

const HIGH8: [(Reg64, &str); 4] = [
    (Reg64::Rax, "ah"),
    (Reg64::Rbx, "bh"),
    (Reg64::Rcx, "ch"),
    (Reg64::Rdx, "dh"),
];

const EXTENDED: [Reg64; 8] = [
    Reg64::R8,
    Reg64::R9,
    Reg64::R10,
    Reg64::R11,
    Reg64::R12,
    Reg64::R13,
    Reg64::R14,
    Reg64::R15,
];

impl Register {
    pub fn full(parent: Reg64) -> Register {
        Register {
            parent,
            width: Width::W64,
            high8: false,
        }
    }

    pub fn view(parent: Reg64, width: Width) -> Register {
        Register {
            parent,
            width,
            high8: false,
        }
    }

    /// Parse a register token without the leading `%`.
    pub fn from_token(tok: &str) -> Option<Register> {
        if tok == "rip" {
            return Some(Register::full(Reg64::Rip));
        }
        for (parent, names) in LEGACY {
            for (i, name) in names.iter().enumerate() {
                if *name == tok {
                    let width = [Width::W64, Width::W32, Width::W16, Width::W8][i];
                    return Some(Register::view(parent, width));
                }
            }
        }
        for (parent, name) in HIGH8 {
            if name == tok {
                return Some(Register {
                    parent,
                    width: Width::W8,
                    high8: true,
                });
            }
        }
        let rest = tok.strip_prefix('r')?;
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        let n: usize = digits.parse().ok()?;
        if !(8..=15).contains(&n) {
            return None;
        }
        let width = match &rest[digits.len()..] {
            "" => Width::W64,
            "d" => Width::W32,
            "w" => Width::W16,
            "b" | "l" => Width::W8,
            _ => return None,
        };
        Some(Register::view(EXTENDED[n - 8], width))
    }

    pub fn token(&self) -> String {
        if self.parent == Reg64::Rip {
            return "rip".into();
        }
        if self.high8 {
            return HIGH8
                .iter()
                .find(|(p, _)| *p == self.parent)
                .map(|(_, n)| (*n).to_string())
                .expect("high8 view only exists for rax..rdx");
        }
        if let Some((_, names)) = LEGACY.iter().find(|(p, _)| *p == self.parent) {
            let i = match self.width {
                Width::W64 => 0,
                Width::W32 => 1,
                Width::W16 => 2,
                Width::W8 => 3,
            };
            return names[i].to_string();
        }
        let base = self.parent.name();
        match self.width {
            Width::W64 => base.to_string(),
            Width::W32 => format!("{base}d"),
            Width::W16 => format!("{base}w"),
            Width::W8 => format!("{base}b"),
        }
    }

    /// Bit offset of the view within its parent (8 for ah..dh, else 0).
    pub fn shift(&self) -> u32 {
        if self.high8 {
            8
        } else {
            0
        }
    }

    pub fn write_semantics(&self) -> WriteSemantics {
        if self.high8 {
            return WriteSemantics::MergeHigh8;
        }
        match self.width {
            Width::W64 => WriteSemantics::FullWidth,
            Width::W32 => WriteSemantics::ZeroExtend32,
            Width::W16 | Width::W8 => WriteSemantics::MergeLow,
        }
    }

    /// Read this view out of a concrete parent value.
    pub fn read(&self, parent: u64) -> u64 {
        (parent >> self.shift()) & self.width.mask()
    }

    /// Write `value` through this view into a concrete parent value.
    pub fn write(&self, parent: u64, value: u64) -> u64 {
        let v = value & self.width.mask();
        match self.write_semantics() {
            WriteSemantics::FullWidth => value,
            WriteSemantics::ZeroExtend32 => v,
            WriteSemantics::MergeLow => (parent & !self.width.mask()) | v,
            WriteSemantics::MergeHigh8 => (parent & !0xff00) | (v << 8),
        }
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.token())
    }
}

/// Map any register view to its 64-bit parent and the write behaviour of the view.
pub fn normalize_register(r: Register) -> (Reg64, WriteSemantics) {
    (r.parent, r.write_semantics())
}

/// Every register token the parser accepts.
pub fn all_register_tokens() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for (_, names) in LEGACY {
        out.extend(names);
    }
    for (_, n) in HIGH8 {
        out.push(n);
    }
    out.extend([
        "r8", "r8d", "r8w", "r8b", "r9", "r9d", "r9w", "r9b", "r10", "r10d", "r10w", "r10b",
        "r11", "r11d", "r11w", "r11b", "r12", "r12d", "r12w", "r12b", "r13", "r13d", "r13w",
        "r13b", "r14", "r14d", "r14w", "r14b", "r15", "r15d", "r15w", "r15b",
    ]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edi_normalizes_to_rdi_zero_extending() {
        let r = Register::from_token("edi").unwrap();
        assert_eq!(normalize_register(r), (Reg64::Rdi, WriteSemantics::ZeroExtend32));
    }

    #[test]
    fn rax_is_identity() {
        let r = Register::from_token("rax").unwrap();
        assert_eq!(normalize_register(r), (Reg64::Rax, WriteSemantics::FullWidth));
    }

    #[test]
    fn r9d_normalizes_to_r9() {
        let r = Register::from_token("r9d").unwrap();
        assert_eq!(normalize_register(r), (Reg64::R9, WriteSemantics::ZeroExtend32));
    }

    #[test]
    fn every_token_round_trips_and_has_one_parent() {
        for tok in all_register_tokens() {
            let r = Register::from_token(tok).unwrap_or_else(|| panic!("{tok}"));
            assert_eq!(r.token(), tok.replace("r8l", "r8b"));
            let (parent, sem) = normalize_register(r);
            assert_ne!(parent, Reg64::Rip);
            match r.width {
                Width::W32 => assert_eq!(sem, WriteSemantics::ZeroExtend32),
                Width::W64 => assert_eq!(sem, WriteSemantics::FullWidth),
                _ => assert!(matches!(
                    sem,
                    WriteSemantics::MergeLow | WriteSemantics::MergeHigh8
                )),
            }
        }
    }

    #[test]
    fn sub_register_writes() {
        let eax = Register::from_token("eax").unwrap();
        assert_eq!(eax.write(0xffff_ffff_ffff_ffff, 0x1234), 0x1234);
        let ax = Register::from_token("ax").unwrap();
        assert_eq!(ax.write(0xffff_ffff_ffff_ffff, 0x1234), 0xffff_ffff_ffff_1234);
        let ah = Register::from_token("ah").unwrap();
        assert_eq!(ah.write(0, 0x12), 0x1200);
        assert_eq!(ah.read(0xabcd), 0xab);
        assert!(Register::from_token("r16").is_none());
        assert!(Register::from_token("xmm0").is_none());
    }
}
