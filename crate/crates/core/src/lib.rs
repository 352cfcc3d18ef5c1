//! Speculative-execution gadget scanning and branch-target-injection
//! simulation for SGX-style enclave code.
//!
//! * [`asmparse`] reads disassembly listings and simulator programs.
//! * [`symex`] explores enclave entry paths with attacker-symbolic registers.
//! * [`scan`] turns exploration results into Type-I / Type-II gadget reports.
//! * [`uarch`] is a deterministic model of a speculating core with BTB, RSB,
//!   caches, TLB and enclave transitions.
//! * [`harness`] scripts end-to-end attacks over the simulator.

pub mod asmparse;
pub mod corpus;
pub mod harness;
pub mod semantics;
pub mod scan;
pub mod symex;
pub mod uarch;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
