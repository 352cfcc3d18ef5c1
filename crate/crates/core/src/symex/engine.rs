use std::collections::BTreeSet;

use crate::asmparse::{Instruction, Listing};

use super::config::{EntryModel, ExplorationConfig};
use super::exec::{DeadEnd, Executor, PathEnd, Step, SymexError};
use super::state::{MachineState, Mode};

/// Callbacks fired during exploration. Every method has an empty default.
pub trait Visitor {
    /// Before an indirect jump, indirect call or near return executes.
    fn on_branch(&mut self, _state: &MachineState, _ins: &Instruction) {}
    /// Before every instruction.
    fn on_step(&mut self, _state: &MachineState, _ins: &Instruction) {}
    fn on_path_end(&mut self, _state: &MachineState, _end: PathEnd) {}
}

/// Adapts a closure into a branch-only visitor.
pub struct OnBranch<F>(pub F);

impl<F: FnMut(&MachineState, &Instruction)> Visitor for OnBranch<F> {
    fn on_branch(&mut self, state: &MachineState, ins: &Instruction) {
        (self.0)(state, ins)
    }
}

impl Visitor for () {}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExploreSummary {
    pub states: u64,
    pub steps: u64,
    pub returned: u64,
    pub exited: u64,
    pub dead_ends: u64,
    pub dead_end_sites: BTreeSet<DeadEnd>,
    pub pruned: u64,
    pub budget_exhausted: u64,
    pub branch_hits: u64,
    /// `max_states` stopped exploration with work left.
    pub limit_hit: bool,
}

impl ExploreSummary {
    /// True when any bound cut exploration short.
    pub fn truncated(&self) -> bool {
        self.limit_hit || self.budget_exhausted > 0
    }
}

pub fn explore(
    listing: &Listing,
    em: &EntryModel,
    mode: Mode,
    start: Option<&str>,
    cfg: &ExplorationConfig,
    visitor: &mut dyn Visitor,
) -> Result<ExploreSummary, SymexError> {
    let ex = Executor::new(listing, em, cfg)?;
    let init = ex.init_state(mode, start)?;
    let mut summary = ExploreSummary::default();
    let mut work = vec![init];
    while let Some(mut s) = work.pop() {
        if summary.states >= cfg.max_states {
            summary.limit_hit = true;
            break;
        }
        summary.states += 1;
        loop {
            if let Some(ins) = listing.at(s.rip) {
                visitor.on_step(&s, ins);
                if ins.class.is_indirect_branch() {
                    summary.branch_hits += 1;
                    visitor.on_branch(&s, ins);
                }
            }
            match ex.step(s) {
                Step::Next(mut succ, pruned) => {
                    summary.steps += 1;
                    summary.pruned += pruned as u64;
                    if succ.len() == 1 {
                        s = succ.pop().unwrap();
                        continue;
                    }
                    // First successor is explored first: push in reverse.
                    work.extend(succ.into_iter().rev());
                    break;
                }
                Step::End(last, end) => {
                    match end {
                        PathEnd::Returned => summary.returned += 1,
                        PathEnd::Exited => summary.exited += 1,
                        PathEnd::Budget => summary.budget_exhausted += 1,
                        PathEnd::DeadEnd(d) => {
                            summary.dead_ends += 1;
                            summary.dead_end_sites.insert(d);
                        }
                    }
                    visitor.on_path_end(&last, end);
                    break;
                }
            }
        }
    }
    Ok(summary)
}
