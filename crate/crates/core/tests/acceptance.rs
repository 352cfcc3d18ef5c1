//! One PASS/FAIL line per acceptance criterion, with wall time.
//!
//! Run with `cargo test -p btilab-core --test acceptance -- --nocapture` to
//! see the lines.

mod support;

use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use btilab::asmparse::Reg64;
use btilab::corpus;
use btilab::harness::*;
use btilab::uarch::{low32, Btb, CpuModel, LookupCtx, UarchConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use support::tables::{type1_rows, type2_rows};

fn type1_table() {
    let (got, want) = type1_rows(corpus::INTEL_SDK_MIN);
    assert_eq!(want.len(), 11);
    assert_eq!(got, want);
}

fn type2_table() {
    for text in [corpus::DLMALLOC_EXCERPTS, corpus::DLFREE_EXCERPT] {
        let (got, want) = type2_rows(text);
        assert!(!want.is_empty());
        assert_eq!(got, want);
    }
    assert!(type2_rows(corpus::SANITIZED).0.is_empty());
}

fn liveness() {
    let base = corpus::listing(corpus::INTEL_SDK_MIN);
    let mut n = support::mutants::check(&base, "unmutated");
    for seed in 0..support::mutants::MUTANTS {
        let (l, log) = support::mutants::mutate(&base, seed);
        n += support::mutants::check(&l, &format!("mutant {seed} {log:?}"));
    }
    assert!(n > 1000, "only {n} registers checked");
}

fn extraction() {
    let run = |p: &_, sc: &Scenario| run_scenario(p, sc, &sc.configure(&UarchConfig::default())).unwrap();

    let (p, sc) = two_byte_demo();
    let r = run(&p, &sc);
    assert_eq!((r.start, r.recovered.clone()), (0x106500, vec![Some(0x5a), Some(0xc3)]));
    assert_eq!(r.success_rate, 1.0);

    let (p, sc) = secret_demo(0x5eed);
    let r = run(&p, &sc);
    assert_eq!(r.truth.len(), 32);
    assert!(r.exact(), "{} vs {}", r.recovered_hex(), r.truth_hex());

    let (p, sc) = ssa_demo(None);
    let snap = read_ssa_registers(&p, &sc, &sc.configure(&UarchConfig::default())).unwrap();
    assert_eq!(snap.result.truth.len(), 184);
    assert!(snap.result.exact());
    assert_eq!(snap.reg(Reg64::Rbx), Some(0xdead_beef));
}

fn race() {
    let (points, won, lost) = support::attack::race_grid();
    assert!(points >= 27);
    assert!(won > 0 && lost > 0, "{won} won, {lost} lost");
}

fn squash() {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let speculated = Cell::new(0);
    runner
        .run(&support::progs::case(), |c| {
            let l = support::progs::build(&c);
            let spec = support::progs::run(&l, &c, true);
            let plain = support::progs::run(&l, &c, false);
            prop_assert_eq!(spec.regs, plain.regs);
            prop_assert_eq!(spec.flags, plain.flags);
            prop_assert_eq!(spec.data, plain.data);
            prop_assert_eq!(spec.stack, plain.stack);
            speculated.set(speculated.get() + (spec.races > 0) as usize);
            Ok(())
        })
        .unwrap();
    assert!(speculated.get() > 100);
}

fn predictors() {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(0u64..1 << 48, 1u64..1 << 16, 0u64..1 << 48), |(src, hi, dst)| {
            let alias = (hi << 32) | (src & 0xffff_ffff);
            let mut b = Btb::new(12);
            b.update(src, dst, 0, false, 0);
            let want = (alias & 0xffff_0000_0000) | low32(dst) as u64;
            prop_assert_eq!(b.predict(alias, &LookupCtx::default()), Some(want));
            Ok(())
        })
        .unwrap();
    for depth in 1..=16 {
        assert_eq!(support::progs::chain_races(depth, CpuModel::Skylake).0, 0, "depth {depth}");
    }
    assert_eq!(support::progs::chain_races(17, CpuModel::Skylake), (1, vec![0x2010]));
    assert_eq!(support::progs::chain_races(17, CpuModel::PreSkylake).0, 0);
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn(), Option<Duration>); 8] = [
        ("1 Type-I gadget table", type1_table, Some(Duration::from_secs(10))),
        ("2 Type-II gadget tables", type2_table, Some(Duration::from_secs(10))),
        ("3 liveness soundness over 100 mutations", liveness, None),
        ("4 end-to-end extraction", extraction, Some(Duration::from_secs(30))),
        ("5 race predicate over latency grid", race, None),
        ("6 countermeasure matrix", support::attack::check_matrix, None),
        ("7 squash transparency", squash, None),
        ("8 BTB and RSB properties", predictors, None),
    ];
    let mut failed = Vec::new();
    for (name, f, limit) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f));
        let took = t.elapsed();
        let verdict = match (outcome, limit) {
            (Err(e), _) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()),
            (Ok(()), Some(l)) if took > l => Err(format!("took {took:.1?}, limit {l:?}")),
            (Ok(()), _) => Ok(()),
        };
        match verdict {
            Ok(()) => println!("PASS {name} ({took:.2?})"),
            Err(why) => {
                let first = why.lines().next().unwrap_or("").to_string();
                println!("FAIL {name} ({took:.2?}): {first}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
