use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::instr::Instruction;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LookupError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("malformed symbol reference `{0}`")]
    BadReference(String),
}

/// Simulator-dialect directives attached to a listing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directives {
    pub entry: Option<String>,
    pub secrets: Vec<(u64, Vec<u8>)>,
    pub data: Vec<(u64, Vec<u8>)>,
    pub fills: Vec<(u64, u64, u8)>,
    pub ssa: Option<u64>,
    pub tcs: Option<u64>,
    pub gsbase: Option<u64>,
}

impl Directives {
    pub fn is_empty(&self) -> bool {
        self == &Directives::default()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Listing {
    pub symbols: BTreeMap<String, u64>,
    pub instructions: Vec<Instruction>,
    pub enclave_range: Option<(u64, u64)>,
    pub directives: Directives,
    #[serde(skip)]
    index: HashMap<u64, usize>,
}

impl Listing {
    /// Build from already address-sorted, duplicate-free instructions.
    pub fn from_parts(
        symbols: BTreeMap<String, u64>,
        mut instructions: Vec<Instruction>,
        enclave_range: Option<(u64, u64)>,
        directives: Directives,
    ) -> Listing {
        instructions.sort_by_key(|i| i.address);
        let index = instructions
            .iter()
            .enumerate()
            .map(|(i, ins)| (ins.address, i))
            .collect();
        Listing {
            symbols,
            instructions,
            enclave_range,
            directives,
            index,
        }
    }

    pub fn reindex(&mut self) {
        self.instructions.sort_by_key(|i| i.address);
        self.index = self
            .instructions
            .iter()
            .enumerate()
            .map(|(i, ins)| (ins.address, i))
            .collect();
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn index_of(&self, addr: u64) -> Option<usize> {
        if self.index.len() != self.instructions.len() {
            return self.instructions.binary_search_by_key(&addr, |i| i.address).ok();
        }
        self.index.get(&addr).copied()
    }

    pub fn at(&self, addr: u64) -> Option<&Instruction> {
        self.index_of(addr).map(|i| &self.instructions[i])
    }

    /// Address of the instruction following `addr` in the listing, used for
    /// fallthrough, return addresses and rip-relative operands.
    pub fn fallthrough(&self, addr: u64) -> u64 {
        match self.index_of(addr) {
            Some(i) if i + 1 < self.instructions.len() => self.instructions[i + 1].address,
            _ => addr + 1,
        }
    }

    /// The enclosing symbol and offset, e.g. `("get_enclave_state", 0xc)`.
    pub fn symbolize(&self, addr: u64) -> Option<(String, u64)> {
        self.symbols
            .iter()
            .filter(|(_, &a)| a <= addr)
            .max_by_key(|(name, &a)| (a, std::cmp::Reverse((*name).clone())))
            .map(|(n, &a)| (n.clone(), addr - a))
    }

    /// `name:0xOFF` rendering used in reports.
    pub fn location(&self, addr: u64) -> String {
        match self.symbolize(addr) {
            Some((n, off)) => format!("{n}:{off:#x}"),
            None => format!("{addr:#x}"),
        }
    }

    pub fn resolve_symbol(&self, reference: &str) -> Result<u64, LookupError> {
        resolve_symbol(self, reference)
    }

    pub fn in_enclave(&self, addr: u64) -> bool {
        match self.enclave_range {
            Some((lo, hi)) => addr >= lo && addr < hi,
            None => true,
        }
    }
}

/// Resolve `name`, `name+0xOFF` or `name:0xOFF` to an absolute address.
pub fn resolve_symbol(listing: &Listing, reference: &str) -> Result<u64, LookupError> {
    let reference = reference.trim();
    let (name, off) = match reference.find(['+', ':']) {
        Some(pos) => {
            let off_text = reference[pos + 1..].trim();
            let digits = off_text
                .strip_prefix("0x")
                .or_else(|| off_text.strip_prefix("0X"))
                .unwrap_or(off_text);
            let off = u64::from_str_radix(digits, 16)
                .map_err(|_| LookupError::BadReference(reference.to_string()))?;
            (reference[..pos].trim(), off)
        }
        None => (reference, 0),
    };
    let name = name.trim_start_matches('<').trim_end_matches('>');
    let base = listing
        .symbols
        .get(name)
        .ok_or_else(|| LookupError::UnknownSymbol(name.to_string()))?;
    Ok(base + off)
}
