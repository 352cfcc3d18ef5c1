//! Seeded mutations of a listing and the liveness check run on each.

use btilab::asmparse::{parse_instruction, InstrClass, Listing};
use btilab::scan::scan_type1;
use btilab::symex::{EntryModel, ExplorationConfig, Mode};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MUTANTS: u64 = 100;

/// Check every hit of both modes; returns the number of registers checked.
pub fn check(listing: &Listing, label: &str) -> usize {
    let em = EntryModel::default();
    let cfg = ExplorationConfig::default();
    let mut checked = 0;
    for mode in [Mode::ECall, Mode::ORet] {
        let scan = match scan_type1(listing, &em, mode, None, &cfg) {
            Ok(s) => s,
            Err(e) => panic!("{label} {mode:?}: scan failed: {e}"),
        };
        let dead = super::dead_reports(listing, &em, &scan.hits, None)
            .unwrap_or_else(|e| panic!("{label} {mode:?}: replay diverged: {e}"));
        if let Some(&(i, reg)) = dead.first() {
            let h = &scan.hits[i];
            panic!(
                "{label} {mode:?}: {} reported at {:#x} (origins {:?}) but replay shows it constant; {} such reports",
                reg.name(),
                h.address,
                h.registers.iter().find(|r| r.0 == reg).map(|r| &r.1),
                dead.len()
            );
        }
        checked += scan.hits.iter().map(|h| h.registers.len()).sum::<usize>();
    }
    checked
}

const REGS: [&str; 13] = [
    "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "r8", "r9", "r12", "r13", "r14", "r15",
];

fn r32(r: &str) -> String {
    match r {
        "rax" | "rbx" | "rcx" | "rdx" => format!("e{}", &r[1..]),
        "rsi" | "rdi" | "rbp" => format!("e{}", &r[1..]),
        _ => format!("{r}d"),
    }
}

fn random_body(rng: &mut ChaCha8Rng) -> String {
    let a = *REGS.choose(rng).unwrap();
    let b = *REGS.choose(rng).unwrap();
    match rng.gen_range(0..8) {
        0 => format!("xor %{},%{}", r32(b), r32(b)),
        1 => format!("mov %{a},%{b}"),
        2 => format!("add %{a},%{b}"),
        3 => format!("mov ${:#x},%{b}", rng.gen_range(0..0x10000u64)),
        4 => format!("and $0xff,%{b}"),
        5 => format!("lea 0x8(%{a}),%{b}"),
        6 => format!("shl $0x3,%{b}"),
        _ => format!("mov 0x10(%{a}),%{b}"),
    }
}

fn mutable(ins: &btilab::asmparse::Instruction) -> bool {
    !ins.class.is_control_transfer()
        && ins.class != InstrClass::Unsupported
        && !ins.source.contains("rsp")
        && !ins.source.contains("esp")
        && !ins.mnemonic.starts_with("push")
        && !ins.mnemonic.starts_with("pop")
        && ins.mnemonic != "enclu"
}

pub fn mutate(base: &Listing, seed: u64) -> (Listing, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = base.clone();
    let candidates: Vec<usize> = (0..l.instructions.len()).filter(|&i| mutable(&l.instructions[i])).collect();
    let n = rng.gen_range(1..=3);
    let mut log = Vec::new();
    for &i in candidates.choose_multiple(&mut rng, n) {
        let addr = l.instructions[i].address;
        let body = random_body(&mut rng);
        let ins = parse_instruction(0, addr, &body, &body).expect("mutation vocabulary parses");
        log.push(format!("{addr:x}: {} -> {body}", l.instructions[i].source.trim()));
        l.instructions[i] = ins;
    }
    let Listing {
        symbols,
        instructions,
        enclave_range,
        directives,
        ..
    } = l;
    (Listing::from_parts(symbols, instructions, enclave_range, directives), log)
}
