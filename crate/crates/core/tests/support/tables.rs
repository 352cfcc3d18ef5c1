//! Scanner output and `#!` annotations as comparable row sets.

use std::collections::BTreeSet;

use btilab::corpus::{self, Expectation};
use btilab::scan::{scan_type1, scan_type2, ScanConfig};
use btilab::symex::{EntryModel, ExplorationConfig, Mode};

type Row = (String, String, String, Vec<String>);

fn names(regs: &[btilab::asmparse::Reg64]) -> Vec<String> {
    regs.iter().map(|r| r.name().to_string()).collect()
}

pub fn type1_rows(text: &str) -> (BTreeSet<Row>, BTreeSet<Row>) {
    let l = corpus::listing(text);
    let mut got = BTreeSet::new();
    for (mode, tag) in [(Mode::ECall, "ecall"), (Mode::ORet, "oret")] {
        let scan = scan_type1(&l, &EntryModel::default(), mode, None, &ExplorationConfig::default()).unwrap();
        for g in scan.gadgets {
            got.insert((tag.to_string(), g.category.name().to_string(), g.end, names(&g.controlled_registers)));
        }
    }
    let want = corpus::expectations(text)
        .into_iter()
        .filter_map(|e| match e {
            Expectation::Type1 {
                mode,
                category,
                end,
                registers,
            } => Some((mode, category, end, names(&registers))),
            _ => None,
        })
        .collect();
    (got, want)
}

type Triple = (String, String, String, Option<String>);

pub fn type2_rows(text: &str) -> (BTreeSet<Triple>, BTreeSet<Triple>) {
    let l = corpus::listing(text);
    let got = scan_type2(&l, &ScanConfig::default())
        .unwrap()
        .into_iter()
        .map(|g| (g.start, g.reg_a.name().into(), g.reg_b.name().into(), g.reg_c.map(|r| r.name().into())))
        .collect();
    let want = corpus::expectations(text)
        .into_iter()
        .filter_map(|e| match e {
            Expectation::Type2 {
                start,
                reg_a,
                reg_b,
                reg_c,
            } => Some((start, reg_a.name().into(), reg_b.name().into(), reg_c.map(|r| r.name().into()))),
            _ => None,
        })
        .collect();
    (got, want)
}
