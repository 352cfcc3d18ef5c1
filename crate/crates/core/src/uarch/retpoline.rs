//! Rewrites indirect jumps and calls into return trampolines.
//!
//! Each site gets its own thunk, 0x20 bytes apart on pages placed after the
//! program's last instruction:
//!
//! ```text
//! +0x00  pushq <original operand>
//! +0x08  callq +0x18
//! +0x10  pause              <- speculative capture loop
//! +0x12  lfence
//! +0x15  jmp +0x10
//! +0x18  lea 0x8(%rsp),%rsp <- drop the capture address
//! +0x1d  retq               <- architecturally jumps to the pushed target
//! ```

use crate::asmparse::{parse_instruction, InstrClass, Instruction, Listing, Operand, Reg64};

use super::cache::PAGE;

pub const THUNK_SIZE: u64 = 0x20;

/// First thunk address for `listing`.
pub fn thunk_base(listing: &Listing) -> u64 {
    let last = listing.instructions.last().map_or(0, |i| i.address);
    (last / PAGE + 2) * PAGE
}

fn ins(addr: u64, text: &str) -> Instruction {
    parse_instruction(0, addr, text, text).expect("thunk instruction parses")
}

/// Operand text for the thunk's push. A call site has already pushed its
/// return address when the thunk runs, so rsp-relative operands shift by 8.
fn push_operand(site: &Instruction) -> String {
    match site.operands[0] {
        Operand::Mem(mut m) => {
            if m.base64() == Some(Reg64::Rsp) && site.class == InstrClass::IndirectCall {
                m.disp += 8;
            }
            m.to_string()
        }
        o => o.to_string(),
    }
}

pub fn apply_retpoline(listing: &Listing) -> Listing {
    let base = thunk_base(listing);
    let mut out = Vec::with_capacity(listing.instructions.len());
    let mut thunks = Vec::new();
    let mut symbols = listing.symbols.clone();
    for site in &listing.instructions {
        let indirect = matches!(site.class, InstrClass::IndirectJump | InstrClass::IndirectCall);
        if !indirect || site.operands.is_empty() {
            out.push(site.clone());
            continue;
        }
        let t = base + (thunks.len() / 7) as u64 * THUNK_SIZE;
        let mnemonic = if site.class == InstrClass::IndirectCall { "callq" } else { "jmpq" };
        let mut replaced = ins(site.address, &format!("{mnemonic} {t:x}"));
        replaced.source = format!("{}  # retpoline", site.source);
        out.push(replaced);
        symbols.insert(format!("__retpoline_{:x}", site.address), t);
        thunks.extend([
            ins(t, &format!("pushq {}", push_operand(site))),
            ins(t + 0x08, &format!("callq {:x}", t + 0x18)),
            ins(t + 0x10, "pause"),
            ins(t + 0x12, "lfence"),
            ins(t + 0x15, &format!("jmp {:x}", t + 0x10)),
            ins(t + 0x18, "lea 0x8(%rsp),%rsp"),
            ins(t + 0x1d, "retq"),
        ]);
    }
    out.extend(thunks);
    Listing::from_parts(symbols, out, listing.enclave_range, listing.directives.clone())
}
