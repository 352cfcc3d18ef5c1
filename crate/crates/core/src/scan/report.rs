use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::type1::TypeIGadget;
use super::type2::TypeIIGadget;
use crate::symex::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GadgetReport {
    pub tool_version: String,
    pub corpus_id: String,
    pub type1: Vec<TypeIGadget>,
    pub type2: Vec<TypeIIGadget>,
}

impl GadgetReport {
    pub fn new(corpus_id: &str, type1: Vec<TypeIGadget>, type2: Vec<TypeIIGadget>) -> Self {
        GadgetReport {
            tool_version: crate::TOOL_VERSION.to_string(),
            corpus_id: corpus_id.to_string(),
            type1,
            type2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.type1.is_empty() && self.type2.is_empty()
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn emit(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Structured => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Text => self.text(),
        }
    }

    fn text(&self) -> String {
        let mut out = String::new();
        for mode in [Mode::ECall, Mode::ORet] {
            let rows: Vec<&TypeIGadget> = self.type1.iter().filter(|g| g.mode == mode).collect();
            if rows.is_empty() && !self.type1.is_empty() {
                continue;
            }
            writeln!(out, "Type-I gadgets ({})", mode.name()).unwrap();
            out.push_str(&type1_table(&rows));
            out.push('\n');
            if self.type1.is_empty() {
                break;
            }
        }
        out.push_str("Type-II gadgets\n");
        out.push_str(&type2_table(&self.type2));
        out
    }
}

pub fn type1_row(g: &TypeIGadget) -> String {
    let regs: Vec<&str> = g.controlled_registers.iter().map(|r| r.name()).collect();
    format!("{} | {} | {}", g.category.name(), g.end, regs.join(", "))
}

pub fn type1_table(rows: &[&TypeIGadget]) -> String {
    let mut out = String::from("category | end address | controlled registers\n");
    for g in rows {
        writeln!(out, "{}", type1_row(g)).unwrap();
    }
    out
}

pub fn type2_row(g: &TypeIIGadget) -> String {
    format!("{} | {} | {}", g.start, g.triple(), g.instructions.join("; "))
}

pub fn type2_table(rows: &[TypeIIGadget]) -> String {
    let mut out = String::from("start address | registers | gadget instructions\n");
    for g in rows {
        writeln!(out, "{}", type2_row(g)).unwrap();
    }
    out
}
