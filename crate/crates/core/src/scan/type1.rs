use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::asmparse::{InstrClass, Instruction, Listing, Reg64};
use crate::symex::{
    explore, EntryModel, ExplorationConfig, ExploreSummary, MachineState, Mode, SymexError,
    TrailEvent, Visitor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    IndirectJump,
    IndirectCall,
    Return,
}

impl Category {
    pub fn of(class: InstrClass) -> Option<Category> {
        match class {
            InstrClass::IndirectJump => Some(Category::IndirectJump),
            InstrClass::IndirectCall => Some(Category::IndirectCall),
            InstrClass::NearReturn => Some(Category::Return),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::IndirectJump => "indirect jump",
            Category::IndirectCall => "indirect call",
            Category::Return => "return",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TypeIGadget {
    pub category: Category,
    pub end: String,
    pub address: u64,
    pub controlled_registers: Vec<Reg64>,
    pub mode: Mode,
    pub path_length: u64,
}

pub fn score_type1(g: &TypeIGadget) -> usize {
    g.controlled_registers.len()
}

/// One visitor callback with at least one attacker-derived register.
#[derive(Debug, Clone)]
pub struct Type1Hit {
    pub address: u64,
    pub mode: Mode,
    /// Instructions executed before the branch.
    pub steps: u64,
    pub trail: Vec<TrailEvent>,
    /// Each controlled register with the attacker registers it derives from.
    pub registers: Vec<(Reg64, Vec<Reg64>)>,
}

#[derive(Debug, Clone)]
pub struct Type1Scan {
    pub gadgets: Vec<TypeIGadget>,
    pub hits: Vec<Type1Hit>,
    pub summary: ExploreSummary,
}

struct Collector {
    mode: Mode,
    mask: u32,
    hits: Vec<Type1Hit>,
}

impl Visitor for Collector {
    fn on_branch(&mut self, s: &MachineState, ins: &Instruction) {
        let live = s.live_registers(self.mask);
        if live.is_empty() {
            return;
        }
        let registers = live
            .into_iter()
            .map(|r| {
                let origins = s
                    .reg(r)
                    .attacker_origins()
                    .into_iter()
                    .filter(|o| self.mask & (1 << o.index()) != 0)
                    .collect();
                (r, origins)
            })
            .collect();
        self.hits.push(Type1Hit {
            address: ins.address,
            mode: self.mode,
            steps: s.steps,
            trail: s.trail.clone(),
            registers,
        });
    }
}

/// Explore from the entry in `mode` and report every indirect branch reached
/// with attacker-derived registers, merged per (category, end, mode).
pub fn scan_type1(
    listing: &Listing,
    em: &EntryModel,
    mode: Mode,
    start: Option<&str>,
    cfg: &ExplorationConfig,
) -> Result<Type1Scan, SymexError> {
    let mut col = Collector {
        mode,
        mask: em.attacker_mask(),
        hits: Vec::new(),
    };
    let summary = explore(listing, em, mode, start, cfg, &mut col)?;
    let mut merged: BTreeMap<(Category, u64), TypeIGadget> = BTreeMap::new();
    for h in &col.hits {
        let Some(cat) = listing.at(h.address).and_then(|i| Category::of(i.class)) else {
            continue;
        };
        let g = merged.entry((cat, h.address)).or_insert_with(|| TypeIGadget {
            category: cat,
            end: listing.location(h.address),
            address: h.address,
            controlled_registers: Vec::new(),
            mode,
            path_length: h.steps + 1,
        });
        for (r, _) in &h.registers {
            if !g.controlled_registers.contains(r) {
                g.controlled_registers.push(*r);
            }
        }
        g.path_length = g.path_length.min(h.steps + 1);
    }
    let gadgets = merged
        .into_values()
        .map(|mut g| {
            g.controlled_registers.sort_by_key(|r| r.report_rank());
            g
        })
        .collect();
    Ok(Type1Scan {
        gadgets,
        hits: col.hits,
        summary,
    })
}
