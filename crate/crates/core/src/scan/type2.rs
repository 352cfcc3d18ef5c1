use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::asmparse::{InstrClass, Listing, Op, Reg64};
use crate::symex::{
    EntryModel, ExplorationConfig, ExprOp, Executor, Origin, Step, SymValue, SymexError,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScanConfig {
    pub window: usize,
    pub second_classes: Vec<InstrClass>,
    pub require_regc: bool,
    pub general_registers: Vec<Reg64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        use Reg64::*;
        ScanConfig {
            window: 10,
            second_classes: vec![
                InstrClass::Load,
                InstrClass::Store,
                InstrClass::Compare,
                InstrClass::RegArith,
            ],
            require_regc: false,
            general_registers: vec![
                Rax, Rbx, Rcx, Rdx, Rsi, Rdi, R8, R9, R10, R11, R12, R13, R14, R15,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TypeIIGadget {
    pub start: String,
    pub address: u64,
    pub instructions: Vec<String>,
    pub reg_a: Reg64,
    pub reg_b: Reg64,
    pub reg_c: Option<Reg64>,
    pub length: usize,
}

impl TypeIIGadget {
    /// `[rsi, rdi, rbx]` or `[rsi, rdi]`.
    pub fn triple(&self) -> String {
        match self.reg_c {
            Some(c) => format!("[{}, {}, {}]", self.reg_a, self.reg_b, c),
            None => format!("[{}, {}]", self.reg_a, self.reg_b),
        }
    }
}

/// Ordering key: three-register form first, then shorter gadgets.
pub fn score_type2(g: &TypeIIGadget) -> (bool, Reverse<usize>) {
    (g.reg_c.is_some(), Reverse(g.length))
}

/// Gadgets sorted best first.
pub fn rank_type2(gadgets: &mut [TypeIIGadget]) {
    gadgets.sort_by_key(|g| (Reverse(score_type2(g)), g.address));
}

fn instr_text(ins: &crate::asmparse::Instruction) -> String {
    let s = ins.to_string();
    match s.split_once(": ") {
        Some((_, rest)) => rest.to_string(),
        None => s,
    }
}

/// Find the loads `regB <- [regA + disp]` whose value feeds the address of a
/// later memory access within `cfg.window` instructions.
pub fn scan_type2(listing: &Listing, cfg: &ScanConfig) -> Result<Vec<TypeIIGadget>, SymexError> {
    let em = EntryModel::default();
    let xcfg = ExplorationConfig::default();
    let ex = Executor::detached(listing, &em, &xcfg)?;
    let general = |r: Reg64| cfg.general_registers.contains(&r);
    let mut out = Vec::new();
    for ins in &listing.instructions {
        if !matches!(ins.op, Op::Mov | Op::MovZx(_) | Op::MovSx(_)) || ins.operands.len() != 2 {
            continue;
        }
        let (Some(m), Some(dst)) = (ins.operands[0].as_mem(), ins.operands[1].as_reg()) else {
            continue;
        };
        let Some(reg_a) = m.base64() else { continue };
        if m.index.is_some() || m.segment.is_some() || !general(reg_a) || !general(dst.parent) {
            continue;
        }
        let reg_b = dst.parent;
        if let Some(g) = window_run(listing, &ex, ins.address, reg_a, reg_b, cfg) {
            if !cfg.require_regc || g.reg_c.is_some() {
                out.push(g);
            }
        }
    }
    Ok(out)
}

fn window_run(
    listing: &Listing,
    ex: &Executor,
    start: u64,
    reg_a: Reg64,
    reg_b: Reg64,
    cfg: &ScanConfig,
) -> Option<TypeIIGadget> {
    let first = listing.at(start)?;
    let mut s = ex.symbolic_state(start);
    let originals: Vec<SymValue> = s.regs.to_vec();
    s = match ex.step(s) {
        Step::Next(mut v, _) => v.remove(0),
        Step::End(..) => return None,
    };
    let t = s.fresh(Origin::Havoc);
    let t_id = t.symbol_id()?;
    s.write_reg(first.operands[1].as_reg()?, t);
    let mut seq = vec![first];
    for _ in 0..cfg.window {
        let ins = listing.at(s.rip)?;
        match ins.class {
            InstrClass::CondBranch => {
                seq.push(ins);
                s.rip = listing.fallthrough(ins.address);
                continue;
            }
            c if c.is_control_transfer() => return None,
            InstrClass::Serialize | InstrClass::Enclu | InstrClass::Unsupported => return None,
            _ => {}
        }
        seq.push(ins);
        if let Some(m) = ins.mem_operand() {
            let eligible = cfg.second_classes.contains(&ins.class)
                && (ins.class != InstrClass::RegArith || ins.reads_memory() || ins.writes_memory());
            if eligible && !matches!(ins.op, Op::Lea | Op::Nop | Op::Clflush) {
                let addr = ex.effective_address(&s, ins, m, true);
                if addr.contains_symbol(t_id) {
                    let reg_c = pick_reg_c(&s.regs, &originals, &addr, reg_a, reg_b, &cfg.general_registers);
                    return Some(TypeIIGadget {
                        start: listing.location(start),
                        address: start,
                        instructions: seq.iter().map(|i| instr_text(i)).collect(),
                        reg_a,
                        reg_b,
                        reg_c,
                        length: seq.len(),
                    });
                }
            }
        }
        s = match ex.step(s) {
            Step::Next(mut v, _) => v.remove(0),
            Step::End(..) => return None,
        };
    }
    None
}

/// A register other than regB whose untouched initial symbol is a term of
/// the second address. Unscaled terms win over scaled ones, then regA loses
/// ties, then report order.
fn pick_reg_c(
    now: &[SymValue; 16],
    originals: &[SymValue],
    addr: &SymValue,
    reg_a: Reg64,
    reg_b: Reg64,
    general: &[Reg64],
) -> Option<Reg64> {
    let terms = addr.additive_terms();
    let mut best: Option<((u8, u8, u8), Reg64)> = None;
    for &r in general {
        if r == reg_b {
            continue;
        }
        let orig = &originals[r.index()];
        if &now[r.index()] != orig {
            continue;
        }
        let scaled = |t: &SymValue| match t {
            SymValue::Expr(e) => e.op == ExprOp::Mul && &e.args[0] == orig,
            _ => false,
        };
        let rank = if terms.iter().any(|t| t == orig) {
            0
        } else if terms.iter().any(scaled) {
            1
        } else {
            continue;
        };
        let key = (rank, (r == reg_a) as u8, r.report_rank());
        if best.map_or(true, |(k, _)| key < k) {
            best = Some((key, r));
        }
    }
    best.map(|(_, r)| r)
}
