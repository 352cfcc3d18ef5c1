//! Bundled listings and simulator programs, with the expectations annotated
//! inside them as `#! ...` comment lines.

use crate::asmparse::{parse_listing, Listing, Reg64};

pub const INTEL_SDK_MIN: &str = include_str!("../corpus/intel_sdk_min.dis");
pub const DLMALLOC_EXCERPTS: &str = include_str!("../corpus/dlmalloc_excerpts.dis");
pub const DLFREE_EXCERPT: &str = include_str!("../corpus/dlfree_excerpt.dis");
pub const SANITIZED: &str = include_str!("../corpus/sanitized.dis");
pub const SDK_VICTIM: &str = include_str!("../corpus/sdk_victim.prog");
pub const TWO_BYTE_PROG: &str = include_str!("../corpus/two_byte.prog");
pub const TWO_BYTE_SCN: &str = include_str!("../corpus/two_byte.scn");
pub const SSA_SCN: &str = include_str!("../corpus/ssa.scn");
pub const KEY_SCN: &str = include_str!("../corpus/key.scn");
pub const SECRET32_SCN: &str = include_str!("../corpus/secret32.scn");

/// `(name, text)` for every bundled disassembly listing.
pub const LISTINGS: &[(&str, &str)] = &[
    ("intel_sdk_min.dis", INTEL_SDK_MIN),
    ("dlmalloc_excerpts.dis", DLMALLOC_EXCERPTS),
    ("dlfree_excerpt.dis", DLFREE_EXCERPT),
    ("sanitized.dis", SANITIZED),
];

pub fn listing(text: &str) -> Listing {
    parse_listing(text).expect("bundled corpus parses")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    /// `#! type1 ecall return get_enclave_state:0xc rbx, rdi, ...`
    Type1 {
        mode: String,
        category: String,
        end: String,
        registers: Vec<Reg64>,
    },
    /// `#! type2 dlfree:0x46f [rsi, rdi, rbx]`
    Type2 {
        start: String,
        reg_a: Reg64,
        reg_b: Reg64,
        reg_c: Option<Reg64>,
    },
}

fn regs(list: &str) -> Vec<Reg64> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().expect("register name in corpus annotation"))
        .collect()
}

/// Parse the `#!` annotation lines of a corpus file.
pub fn expectations(text: &str) -> Vec<Expectation> {
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("#!") else {
            continue;
        };
        let rest = rest.trim();
        if let Some(r) = rest.strip_prefix("type1 ") {
            let mut it = r.splitn(4, ' ');
            let mode = it.next().unwrap_or_default().to_string();
            let mut category = it.next().unwrap_or_default().to_string();
            let mut tail = it.collect::<Vec<_>>().join(" ");
            if category == "indirect" {
                let (kind, t) = tail.split_once(' ').unwrap_or((&tail, ""));
                category = format!("indirect {kind}");
                tail = t.to_string();
            }
            let (end, list) = tail.split_once(' ').unwrap_or((&tail, ""));
            out.push(Expectation::Type1 {
                mode,
                category,
                end: end.to_string(),
                registers: regs(list),
            });
        } else if let Some(r) = rest.strip_prefix("type2 ") {
            let (start, triple) = r.split_once(' ').unwrap_or((r, ""));
            let inner = triple.trim().trim_start_matches('[').trim_end_matches(']');
            let v = regs(inner);
            out.push(Expectation::Type2 {
                start: start.to_string(),
                reg_a: v[0],
                reg_b: v[1],
                reg_c: v.get(2).copied(),
            });
        }
    }
    out
}
