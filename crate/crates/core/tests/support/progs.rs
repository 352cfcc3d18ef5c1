//! Random enclave programs for the squash property, and nested call chains
//! for the return-predictor checks.

use btilab::asmparse::{parse_listing, Listing};
use btilab::uarch::{CpuModel, Sim, Stop, UarchConfig};
use proptest::prelude::*;

const DATA: u64 = 0x8_0000;
pub const STACK_TOP: u64 = 0x9_0000;
const FUNCS: u64 = 0x4000;
const NFUNCS: usize = 4;
const POOL: [&str; 12] = [
    "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "r8", "r9", "r10", "r11", "r12", "r13",
];

#[derive(Debug, Clone)]
enum Item {
    Alu(u8, usize, usize, u32),
    Load(usize, u8),
    Store(usize, u8),
    Call(usize),
    IndirectCall(usize),
    MemCall(usize),
    SkipIfEqual(usize, usize),
    IndirectJumpNext,
}

fn alu(kind: u8, a: usize, b: usize, imm: u32) -> String {
    let (a, b) = (POOL[a], POOL[b]);
    match kind % 7 {
        0 => format!("mov ${imm:#x},%{b}"),
        1 => format!("add %{a},%{b}"),
        2 => format!("xor %{a},%{b}"),
        3 => format!("sub %{a},%{b}"),
        4 => format!("lea 0x18(%{a},%{b},8),%{b}"),
        5 => format!("shl $0x3,%{b}"),
        _ => format!("imul %{a},%{b}"),
    }
}

fn item() -> impl Strategy<Value = Item> {
    let r = 0..POOL.len();
    prop_oneof![
        6 => (any::<u8>(), r.clone(), r.clone(), any::<u32>()).prop_map(|(k, a, b, i)| Item::Alu(k, a, b, i)),
        2 => (r.clone(), 0u8..20).prop_map(|(a, o)| Item::Load(a, o)),
        2 => (r.clone(), 0u8..8).prop_map(|(a, o)| Item::Store(a, o)),
        1 => (0..NFUNCS).prop_map(Item::Call),
        2 => (0..NFUNCS).prop_map(Item::IndirectCall),
        1 => (0..NFUNCS).prop_map(Item::MemCall),
        1 => (r.clone(), r).prop_map(|(a, b)| Item::SkipIfEqual(a, b)),
        1 => Just(Item::IndirectJumpNext),
    ]
}

#[derive(Debug, Clone)]
pub struct Case {
    body: Vec<Item>,
    funcs: Vec<Vec<(u8, usize, usize, u32)>>,
    init: Vec<u64>,
    /// (source index, target index) into the program's instruction list.
    poison: Vec<(usize, usize)>,
    rsb: Vec<usize>,
}

pub fn case() -> impl Strategy<Value = Case> {
    let f = prop::collection::vec((any::<u8>(), 0..POOL.len(), 0..POOL.len(), any::<u32>()), 1..5);
    (
        prop::collection::vec(item(), 1..24),
        prop::collection::vec(f, NFUNCS),
        prop::collection::vec(any::<u64>(), POOL.len()),
        prop::collection::vec((any::<usize>(), any::<usize>()), 0..12),
        prop::collection::vec(any::<usize>(), 0..6),
    )
        .prop_map(|(body, funcs, init, poison, rsb)| Case {
            body,
            funcs,
            init,
            poison,
            rsb,
        })
}

struct Asm {
    lines: Vec<String>,
    next: u64,
}

impl Asm {
    fn emit(&mut self, s: &str) -> u64 {
        let a = self.next;
        self.lines.push(format!("{a:x}: {s}"));
        self.next += 8;
        a
    }
}

pub fn build(c: &Case) -> Listing {
    let func = |i: usize| FUNCS + i as u64 * 0x1000;
    let mut text = format!(
        ".enclave 1000 100000\n.entry enclave_entry\n.quad {:x} {}\n\n0000000000001000 <enclave_entry>:\n",
        DATA + 0x80,
        (0..NFUNCS).map(|i| format!("{:x}", func(i))).collect::<Vec<_>>().join(" ")
    );
    let mut a = Asm { lines: Vec::new(), next: 0x1000 };
    a.emit(&format!("mov ${STACK_TOP:#x},%rsp"));
    a.emit(&format!("mov ${DATA:#x},%r15"));
    for it in &c.body {
        match *it {
            Item::Alu(k, x, y, i) => {
                a.emit(&alu(k, x, y, i));
            }
            Item::Load(x, o) => {
                a.emit(&format!("mov {:#x}(%r15),%{}", o as u64 * 8, POOL[x]));
            }
            Item::Store(x, o) => {
                a.emit(&format!("mov %{},{:#x}(%r15)", POOL[x], o as u64 * 8));
            }
            Item::Call(f) => {
                a.emit(&format!("callq {:x}", func(f)));
            }
            Item::IndirectCall(f) => {
                a.emit(&format!("mov ${:#x},%rax", func(f)));
                a.emit("callq *%rax");
            }
            Item::MemCall(f) => {
                a.emit(&format!("callq *{:#x}(%r15)", 0x80 + 8 * f));
            }
            Item::SkipIfEqual(x, y) => {
                a.emit(&format!("cmp %{},%{}", POOL[x], POOL[y]));
                let target = a.next + 16;
                a.emit(&format!("je {target:x}"));
                a.emit(&format!("add $0x1,%{}", POOL[y]));
            }
            Item::IndirectJumpNext => {
                let target = a.next + 16;
                a.emit(&format!("mov ${target:#x},%rax"));
                a.emit("jmpq *%rax");
            }
        }
    }
    a.emit("mov $0x4,%eax");
    a.emit("enclu");
    text.push_str(&a.lines.join("\n"));
    for (i, body) in c.funcs.iter().enumerate() {
        let mut f = Asm { lines: Vec::new(), next: func(i) };
        text.push_str(&format!("\n\n{:016x} <f{i}>:\n", func(i)));
        for &(k, x, y, imm) in body {
            f.emit(&alu(k, x, y, imm));
        }
        f.emit(&format!("mov %{},{:#x}(%r15)", POOL[i], 0x40 + 8 * i));
        f.emit("retq");
        text.push_str(&f.lines.join("\n"));
    }
    text.push('\n');
    parse_listing(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

pub struct Outcome {
    pub regs: [u64; 16],
    pub flags: u64,
    pub data: Vec<u8>,
    pub stack: Vec<u8>,
    pub races: usize,
}

pub fn run(l: &Listing, c: &Case, speculate: bool) -> Outcome {
    let cfg = UarchConfig {
        speculate,
        ..UarchConfig::default()
    };
    let mut sim = Sim::new(l, cfg).unwrap();
    let addrs: Vec<u64> = l.instructions.iter().map(|i| i.address).collect();
    for &(s, t) in &c.poison {
        sim.poison(addrs[s % addrs.len()], addrs[t % addrs.len()], 1, 0);
    }
    for &r in &c.rsb {
        sim.rsb.push(addrs[r % addrs.len()]);
    }
    for (i, r) in POOL.iter().enumerate() {
        sim.set_reg(r.parse().unwrap(), c.init[i]);
    }
    sim.eenter().unwrap();
    let stop = sim.run(1_000_000);
    assert!(matches!(stop, Stop::Exited { .. }), "{stop:?}");
    Outcome {
        regs: sim.regs().gpr,
        flags: sim.regs().flags,
        data: sim.mem.read_bytes(DATA, 0xc0),
        stack: sim.mem.read_bytes(STACK_TOP - 0x100, 0x100),
        races: sim.take_races().len(),
    }
}

/// Base of chain function `d`. The 0x110 spacing keeps every return site in
/// its own BTB slot.
pub fn chain_base(d: usize) -> u64 {
    0x2000 + d as u64 * 0x110
}

/// `depth` nested functions, each calling the next with a nonzero
/// displacement; every return site is poisoned towards a decoy.
pub fn call_chain(depth: usize) -> Listing {
    let mut text = String::from(".enclave 1000 100000\n.entry enclave_entry\n\n0000000000001000 <enclave_entry>:\n");
    text.push_str(&format!("1000: mov ${STACK_TOP:#x},%rsp\n1008: callq 2000\n1010: mov $0x4,%eax\n1018: enclu\n"));
    for d in 0..depth {
        let base = chain_base(d);
        text.push_str(&format!("\n{base:016x} <f{d}>:\n"));
        if d + 1 < depth {
            text.push_str(&format!("{base:x}: callq {:x}\n", chain_base(d + 1)));
        } else {
            text.push_str(&format!("{base:x}: nop\n"));
        }
        text.push_str(&format!("{:x}: retq\n", base + 0x10));
    }
    text.push_str("\n0000000000009000 <decoy>:\n9000: mov (%rbx),%rcx\n9008: retq\n");
    parse_listing(&text).unwrap()
}

pub fn chain_races(depth: usize, cpu: CpuModel) -> (usize, Vec<u64>) {
    let l = call_chain(depth);
    let mut sim = Sim::new(&l, UarchConfig::preset(cpu)).unwrap();
    for d in 0..depth {
        sim.poison(chain_base(d) + 0x10, 0x9000, 1, 0);
    }
    sim.deplete_rsb();
    sim.eenter().unwrap();
    assert!(matches!(sim.run(100_000), Stop::Exited { .. }));
    let r = sim.take_races();
    (r.len(), r.iter().map(|p| p.branch).collect())
}
