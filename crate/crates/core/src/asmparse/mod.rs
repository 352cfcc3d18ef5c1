//! Disassembly listings and the simulator's assembly dialect.
//!
//! Input is AT&T-syntax text in the shape printed by `objdump -d`: symbol
//! headers `0000000000003662 <enclave_entry>:` and instruction lines
//! `3662: cmp $0x0,%rax`. Lines may carry raw bytes between the address and
//! the mnemonic; byte-only continuation lines and `...` elisions are skipped.

mod emit;
mod instr;
mod listing;
mod operand;
mod parse;
mod register;

pub use emit::emit_listing;
pub use instr::{Cond, InstrClass, Instruction, Op};
pub use listing::{resolve_symbol, Directives, Listing, LookupError};
pub use operand::{MemOperand, Operand, Segment};
pub use parse::{parse_instruction, parse_listing, ParseError, MAX_ADDRESS};
pub use register::{
    all_register_tokens, normalize_register, Reg64, Register, Width, WriteSemantics,
};
