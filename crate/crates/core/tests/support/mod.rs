//! Concrete replay of a symbolic path, used as an independent check on what
//! the explorer reports.
//!
//! The replay runs the simulator's architectural executor along the exact
//! decisions recorded in a path trail, with every attacker register given a
//! concrete value. A register is confirmed attacker-controlled when two runs
//! that differ only in one attacker input disagree on its value at the
//! branch.

#![allow(dead_code)]

pub mod attack;
pub mod mutants;
pub mod progs;
pub mod tables;

use std::collections::{BTreeSet, HashMap};

use btilab::asmparse::{Listing, Operand, Reg64};
use btilab::scan::Type1Hit;
use btilab::symex::{EntryModel, Mode, TrailEvent};
use btilab::uarch::{execute, ArchRegs, BranchKind, Flow, Port, PortError, Segments};

/// Memory as the explorer sees it, except that bytes no directive or fill
/// defines are an arbitrary function of their address. Loads through two
/// different attacker pointers therefore return different data.
pub struct ReplayMemory {
    bytes: HashMap<u64, u8>,
    fills: Vec<(u64, u64, u8)>,
    stack: (u64, u64, u8),
}

fn scramble(addr: u64) -> u8 {
    let mut z = addr.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) as u8
}

impl ReplayMemory {
    pub fn new(listing: &Listing, em: &EntryModel) -> Self {
        let mut bytes = HashMap::new();
        for (a, b) in listing.directives.data.iter().chain(&listing.directives.secrets) {
            for (i, x) in b.iter().enumerate() {
                bytes.insert(a + i as u64, *x);
            }
        }
        ReplayMemory {
            bytes,
            fills: listing.directives.fills.clone(),
            stack: (em.stack_top.saturating_sub(em.stack_size), em.stack_top + 0x1000, em.stack_fill),
        }
    }

    fn byte(&self, a: u64) -> u8 {
        if let Some(b) = self.bytes.get(&a) {
            return *b;
        }
        if let Some(f) = self.fills.iter().find(|f| a >= f.0 && a < f.1) {
            return f.2;
        }
        if a >= self.stack.0 && a < self.stack.1 {
            return self.stack.2;
        }
        scramble(a)
    }
}

impl Port for ReplayMemory {
    fn load(&mut self, addr: u64, width: u8) -> Result<u64, PortError> {
        Ok((0..width as u64).fold(0, |v, i| v | (self.byte(addr.wrapping_add(i)) as u64) << (8 * i)))
    }

    fn store(&mut self, addr: u64, width: u8, v: u64) -> Result<(), PortError> {
        for i in 0..width as u64 {
            self.bytes.insert(addr.wrapping_add(i), (v >> (8 * i)) as u8);
        }
        Ok(())
    }

    fn clflush(&mut self, _addr: u64) -> Result<(), PortError> {
        Ok(())
    }
}

/// Attacker input for one entry into the enclave.
pub type Inputs<'a> = dyn Fn(Reg64) -> u64 + 'a;

fn seed(regs: &mut ArchRegs, em: &EntryModel, selector: u64, inputs: &Inputs<'_>) {
    for r in Reg64::GPRS {
        if r == Reg64::Rsp {
            continue;
        }
        regs.set(r, if em.is_attacker(r) { inputs(r) } else { 0 });
    }
    let sel = em.selector().expect("selector register");
    let m = sel.width.mask() << sel.shift();
    let p = regs.get(sel.parent);
    regs.set(sel.parent, (p & !m) | ((selector << sel.shift()) & m));
    regs.flags = 0;
}

/// Run the path behind `hit` and return the registers at its branch.
/// `start` is the symbol the scan started from, as passed to the scanner.
pub fn replay(listing: &Listing, em: &EntryModel, hit: &Type1Hit, start: Option<&str>, inputs: &Inputs<'_>) -> Result<ArchRegs, String> {
    let mut v = replay_stops(listing, em, hit, start, &[(hit.steps, hit.address)], inputs, None)?;
    Ok(v.remove(0))
}

/// Run the path behind `leader` and snapshot the registers after each
/// `(steps, expected rip)` in `stops`, which must be sorted by steps and not
/// exceed the leader's own.
pub fn replay_stops(
    listing: &Listing,
    em: &EntryModel,
    leader: &Type1Hit,
    start: Option<&str>,
    stops: &[(u64, u64)],
    inputs: &Inputs<'_>,
    mut seen: Option<&mut BTreeSet<u64>>,
) -> Result<Vec<ArchRegs>, String> {
    let hit = leader;
    let mut mem = ReplayMemory::new(listing, em);
    let seg = Segments {
        fs: em.fs_base,
        gs: listing.directives.gsbase.unwrap_or(em.gs_base),
    };
    let entry = listing.resolve_symbol(&em.entry_symbol).map_err(|e| e.to_string())?;
    let mut regs = ArchRegs::default();
    regs.set(Reg64::Rsp, em.stack_top);
    let from = match hit.mode {
        Mode::ECall => {
            seed(&mut regs, em, em.ecall_selector, inputs);
            start.unwrap_or(&em.entry_symbol)
        }
        Mode::ORet => start.unwrap_or(&em.ocall_symbol),
    };
    regs.rip = listing.resolve_symbol(from).map_err(|e| e.to_string())?;
    let mut trail = hit.trail.iter();
    let mut out = Vec::with_capacity(stops.len());
    let mut pending = stops.iter().peekable();
    for step in 0..=hit.steps {
        while let Some(&&(at, want)) = pending.peek() {
            if at != step {
                break;
            }
            if regs.rip != want {
                return Err(format!("after {step} steps replay is at {:#x}, expected {want:#x}", regs.rip));
            }
            out.push(regs);
            pending.next();
        }
        if step == hit.steps {
            break;
        }
        if let Some(seen) = seen.as_deref_mut() {
            seen.extend(regs.gpr);
        }
        let rip = regs.rip;
        let ins = listing.at(rip).ok_or_else(|| format!("step {step}: no instruction at {rip:#x}"))?;
        let next = listing.fallthrough(rip);
        let flow = execute(ins, next, &mut regs, &mut mem, &seg).map_err(|e| format!("{rip:#x}: {e:?}"))?;
        regs.rip = match flow {
            Flow::Branch { kind, target } => {
                let recorded = matches!(
                    kind,
                    BranchKind::Cond { .. } | BranchKind::IndirectJump | BranchKind::IndirectCall | BranchKind::Return
                );
                if recorded {
                    match trail.next() {
                        Some(TrailEvent::Cond { addr, taken }) if *addr == rip => {
                            if *taken {
                                ins.direct_target().unwrap_or(next)
                            } else {
                                next
                            }
                        }
                        Some(TrailEvent::Indirect { addr, target }) if *addr == rip => *target,
                        e => return Err(format!("{rip:#x}: trail has {e:?}")),
                    }
                } else {
                    target
                }
            }
            Flow::Enclu => {
                if regs.get(Reg64::Rax) == 4 {
                    match trail.next() {
                        Some(TrailEvent::Reenter { addr }) if *addr == rip => {
                            seed(&mut regs, em, em.oret_selector, inputs);
                            entry
                        }
                        e => return Err(format!("{rip:#x}: exit without re-entry ({e:?})")),
                    }
                } else {
                    regs.set(Reg64::Rax, 0);
                    next
                }
            }
            _ => next,
        };
    }
    if pending.next().is_some() {
        return Err("stop beyond the end of the path".into());
    }
    Ok(out)
}

/// Baseline value for attacker register `r`. Every value and its complement
/// lie far outside the program's own address ranges.
pub fn base_value(r: Reg64) -> u64 {
    0x5a5a_0000_0000_0000 | (r.index() as u64 + 1) * 0x0101_0101_0101
}

/// Alternatives tried for the varied input. Any one pair that changes the
/// register proves the dependence; several are needed because some results
/// only move at particular inputs (`sete` after a shift only sees zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Complement,
    Zero,
    LowBit,
}

/// Upper bound on searched witness values per input register.
pub const WITNESS_LIMIT: usize = 4096;

pub const VARIANTS: [Variant; 3] = [Variant::Complement, Variant::Zero, Variant::LowBit];

/// Inputs equal to [`base_value`] except for `flip`. The selector register
/// keeps its pinned low half whatever the variant.
pub fn flipped(em: &EntryModel, flip: Reg64, how: Variant) -> impl Fn(Reg64) -> u64 + '_ {
    let sel = em.selector().expect("selector register");
    let keep = if sel.parent == flip { sel.width.mask() << sel.shift() } else { 0 };
    move |r| {
        let v = base_value(r);
        if r != flip {
            return v;
        }
        let w = match how {
            Variant::Complement => !v,
            Variant::Zero => 0,
            Variant::LowBit => v ^ (1 << (if keep & 1 != 0 { 32 } else { 0 })),
        };
        (w & !keep) | (v & keep)
    }
}

/// Inputs equal to [`base_value`] except that `r` holds `v`, selector
/// pinning kept.
pub fn with_value(em: &EntryModel, reg: Reg64, v: u64) -> impl Fn(Reg64) -> u64 + '_ {
    let sel = em.selector().expect("selector register");
    let keep = if sel.parent == reg { sel.width.mask() << sel.shift() } else { 0 };
    move |r| {
        let b = base_value(r);
        if r == reg {
            (v & !keep) | (b & keep)
        } else {
            b
        }
    }
}

/// True when some origin of `reg` changes its value at the branch.
pub fn confirmed_live(listing: &Listing, em: &EntryModel, hit: &Type1Hit, start: Option<&str>, reg: Reg64, origins: &[Reg64]) -> Result<bool, String> {
    let a = replay(listing, em, hit, start, &base_value)?;
    for how in VARIANTS {
        for o in origins {
            let f = flipped(em, *o, how);
            let b = replay(listing, em, hit, start, &f)?;
            if a.get(reg) != b.get(reg) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Check every reported register of every hit, replaying each distinct path
/// once per attacker input. Returns `(hit index, register)` for each report
/// that no origin moves.
pub fn dead_reports(listing: &Listing, em: &EntryModel, hits: &[Type1Hit], start: Option<&str>) -> Result<Vec<(usize, Reg64)>, String> {
    // Group hits under the longest hit whose trail extends theirs; the path
    // up to a hit is fixed by its trail, so they share a prefix.
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((hits[i].steps, hits[i].trail.len())));
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in order {
        let h = &hits[i];
        let g = groups.iter_mut().find(|(l, _)| {
            let l = &hits[*l];
            l.mode == h.mode && l.trail.starts_with(&h.trail) && l.steps >= h.steps
        });
        match g {
            Some((_, members)) => members.push(i),
            None => groups.push((i, vec![i])),
        }
    }
    let mut dead = Vec::new();
    for (leader, mut members) in groups {
        members.sort_by_key(|&i| hits[i].steps);
        let stops: Vec<(u64, u64)> = members.iter().map(|&i| (hits[i].steps, hits[i].address)).collect();
        let l = &hits[leader];
        let mut seen = BTreeSet::new();
        let base = replay_stops(listing, em, l, start, &stops, &base_value, Some(&mut seen))?;
        let mut open: Vec<(usize, usize, Reg64)> = members
            .iter()
            .enumerate()
            .flat_map(|(k, &i)| hits[i].registers.iter().map(move |(r, _)| (k, i, *r)))
            .collect();
        for how in VARIANTS {
            for &o in &em.attacker_registers {
                if !open.iter().any(|&(_, i, r)| origins_of(&hits[i], r).contains(&o)) {
                    continue;
                }
                let f = flipped(em, o, how);
                let snap = replay_stops(listing, em, l, start, &stops, &f, None)?;
                open.retain(|&(k, i, r)| !(origins_of(&hits[i], r).contains(&o) && snap[k].get(r) != base[k].get(r)));
            }
        }
        if !open.is_empty() {
            // Some results only move at one input, e.g. `sete` after adding
            // a concrete pointer. Search values the path itself works with.
            for ins in &listing.instructions {
                for o in &ins.operands {
                    match o {
                        Operand::Imm(v) => seen.insert(*v),
                        Operand::Mem(m) => seen.insert(m.disp as u64),
                        _ => false,
                    };
                }
            }
            let cands: BTreeSet<u64> = seen.iter().flat_map(|&v| [v, v.wrapping_neg(), !v]).collect();
            for &o in &em.attacker_registers {
                for &v in cands.iter().take(WITNESS_LIMIT) {
                    if !open.iter().any(|&(_, i, r)| origins_of(&hits[i], r).contains(&o)) {
                        break;
                    }
                    let f = with_value(em, o, v);
                    let snap = replay_stops(listing, em, l, start, &stops, &f, None)?;
                    open.retain(|&(k, i, r)| !(origins_of(&hits[i], r).contains(&o) && snap[k].get(r) != base[k].get(r)));
                }
            }
        }
        dead.extend(open.into_iter().map(|(_, i, r)| (i, r)));
    }
    Ok(dead)
}

fn origins_of(h: &Type1Hit, r: Reg64) -> &[Reg64] {
    h.registers.iter().find(|x| x.0 == r).map(|x| x.1.as_slice()).unwrap_or(&[])
}
