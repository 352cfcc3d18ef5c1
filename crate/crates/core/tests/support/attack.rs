//! Attack checks shared by the harness tests and the acceptance run.

use btilab::harness::*;
use btilab::uarch::UarchConfig;

/// Runs the two-byte attack over a 3x3x3 latency grid and checks, per
/// attempt, that the byte decodes correctly exactly when the array load
/// completed before the return resolved. Returns (points, won, lost).
pub fn race_grid() -> (usize, usize, usize) {
    let (p, sc) = two_byte_demo();
    let mut points = 0;
    let (mut won, mut lost) = (0, 0);
    for memory_walk in [40, 150, 400] {
        for l1 in [2, 4, 60] {
            for cached_walk in [10, 30, 120] {
                let mut c = sc.configure(&UarchConfig::default());
                c.latencies.memory_walk = memory_walk;
                c.latencies.l1 = l1;
                c.latencies.cached_walk = cached_walk;
                let r = run_scenario(&p, &sc, &c).unwrap();
                points += 1;
                for a in &r.log {
                    let d3_first = a.races.iter().any(|x| x.d3_wins());
                    let correct = a.decoded() == Some(r.truth[a.byte]);
                    assert_eq!(
                        correct, d3_first,
                        "walk {memory_walk} l1 {l1} cached {cached_walk}: byte {} hits {:?}",
                        a.byte, a.hits
                    );
                    if correct {
                        won += 1;
                    } else {
                        lost += 1;
                    }
                }
            }
        }
    }
    (points, won, lost)
}

/// The expected success rate of each default matrix cell.
pub const MATRIX: [(&str, f64); 7] = [
    ("baseline", 1.0),
    ("ibrs", 0.0),
    ("ibpb-at-eenter", 0.0),
    ("retpoline+skylake", 1.0),
    ("retpoline+pre-skylake", 0.0),
    ("cross-core", 1.0),
    ("cross-core+stibp", 0.0),
];

pub fn check_matrix() {
    let (p, sc) = two_byte_demo();
    let rows = countermeasure_matrix(&p, &sc, &UarchConfig::default(), &default_matrix()).unwrap();
    for (name, want) in MATRIX {
        let got = rows.iter().find(|r| r.name == name).unwrap_or_else(|| panic!("no cell {name}")).success_rate;
        assert_eq!(got, want, "cell {name}");
    }
}
