//! Every register the Type-I scan reports must actually move with attacker
//! input along the reported path. Checked by concrete replay on the bundled
//! runtime listing and on seeded mutations of it.

mod support;

use btilab::asmparse::Reg64;
use btilab::corpus;
use btilab::scan::scan_type1;
use btilab::symex::{EntryModel, ExplorationConfig, Mode};
use support::mutants::{check, mutate, MUTANTS};

#[test]
fn bundled_runtime_reports_only_live_registers() {
    let l = corpus::listing(corpus::INTEL_SDK_MIN);
    assert!(check(&l, "unmutated") > 50);
}

#[test]
fn mutated_runtimes_report_only_live_registers() {
    let base = corpus::listing(corpus::INTEL_SDK_MIN);
    let mut total = 0;
    for seed in 0..MUTANTS {
        let (l, log) = mutate(&base, seed);
        total += check(&l, &format!("mutant {seed} {log:?}"));
    }
    assert!(total > 1000, "only {total} registers checked");
}

#[test]
fn oracle_rejects_a_dead_register() {
    // The replay must be able to say no: after `xor %ebx,%ebx` rbx is constant.
    let text = "\
0000000000001000 <enclave_entry>:
1000: mov $0x2000,%rax
1007: xor %ebx,%ebx
1009: jmpq *%rax
2000: nop
";
    let l = btilab::asmparse::parse_listing(text).unwrap();
    let em = EntryModel::default();
    let scan = scan_type1(&l, &em, Mode::ECall, None, &ExplorationConfig::default()).unwrap();
    let hit = scan.hits.iter().find(|h| h.address == 0x1009).expect("hit at the jump");
    assert!(!hit.registers.iter().any(|r| r.0 == Reg64::Rbx));
    assert!(!support::confirmed_live(&l, &em, hit, None, Reg64::Rbx, &[Reg64::Rbx]).unwrap());
    assert!(support::confirmed_live(&l, &em, hit, None, Reg64::Rcx, &[Reg64::Rcx]).unwrap());
    assert!(!support::confirmed_live(&l, &em, hit, None, Reg64::Rcx, &[Reg64::Rdx]).unwrap());
}
