//! Scripted attacks over the simulator: BTB poisoning, RSB depletion,
//! triggering the victim, Flush-Reload decoding and byte-by-byte extraction
//! with a sliding window over a load/encode gadget.

mod demos;
mod run;
mod scenario;

pub use demos::{
    countermeasure_matrix, decode_gprsgx, default_matrix, two_byte_demo, key_demo, read_ssa_registers, secret_demo, ssa_demo,
    steal_key_demo, MatrixCell, MatrixRow, SsaSnapshot, KEY_ADDR,
};
pub use run::{run_scenario, run_scenario_traced, Attempt, AttackResult, HarnessError};
pub use scenario::{
    parse_scenario, Addr, DepleteMethod, Expect, GadgetWindow, InterruptAt, MonitoredArray, PoisonMode, Scenario,
    ScenarioParseError, Step, ALIAS_REGION,
};
