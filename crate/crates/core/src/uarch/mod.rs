//! Deterministic model of one speculating core: branch prediction (BTB and
//! RSB), an inclusive cache hierarchy, address translation, and enclave
//! entry/exit with SSA spills.
//!
//! Timing is event-granular. Every architectural instruction dispatches one
//! cycle after the previous one completes and pays for its fetch, translation
//! and data accesses. A mispredicted indirect branch opens a transient
//! episode that runs until the branch target operand arrives; only the cache
//! and TLB fills that complete strictly before that point survive the squash.

mod btb;
mod cache;
mod config;
mod exec;
mod memory;
mod retpoline;
mod sim;
mod trace;

pub use btb::{low32, Btb, BtbEntry, LookupCtx, Rsb};
pub use cache::{line_of, page_of, CacheModel, Level, TranslationModel, Walk, LINE, PAGE};
pub use config::{CpuModel, Countermeasures, IbpbEvent, Latencies, UarchConfig, UarchConfigError};
pub use exec::{effective_address, execute, ArchRegs, BranchKind, Flow, Port, PortError, Segments};
pub use memory::Memory;
pub use retpoline::{apply_retpoline, thunk_base, THUNK_SIZE};
pub use sim::{
    gprsgx, Access, AexCause, CpuMode, EnclaveLayout, Halt, RaceProfile, Sim, SimError, Stop,
    TransientEnd, AEP, EVICTION_BASE, GPRSGX_OFFSET, GPRSGX_REGS, GPRSGX_SIZE, SSA_FRAME_SIZE,
    UNTRUSTED_STACK,
};
pub use trace::{Trace, TraceEvent, TraceLevel};
