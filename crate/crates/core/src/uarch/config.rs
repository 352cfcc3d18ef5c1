use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UarchConfigError {
    #[error("latency config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown cpu model `{0}` (expected skylake or pre-skylake)")]
    Cpu(String),
}

/// Access latencies in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Latencies {
    pub l1: u64,
    pub l2: u64,
    pub llc: u64,
    pub memory: u64,
    pub cached_walk: u64,
    pub memory_walk: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            l1: 4,
            l2: 12,
            llc: 40,
            memory: 200,
            cached_walk: 30,
            memory_walk: 150,
        }
    }
}

impl Latencies {
    /// `key = cycles` lines; unspecified keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, UarchConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Flush-Reload hit threshold: midpoint of an L1 hit and a memory access.
    pub fn reload_threshold(&self) -> u64 {
        (self.l1 + self.memory) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpuModel {
    /// Empty RSB falls back to the BTB.
    Skylake,
    /// Empty RSB stalls until the return resolves.
    PreSkylake,
}

impl CpuModel {
    pub fn rsb_fallback(self) -> bool {
        self == CpuModel::Skylake
    }
}

impl FromStr for CpuModel {
    type Err = UarchConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skylake" => Ok(CpuModel::Skylake),
            "pre-skylake" | "preskylake" => Ok(CpuModel::PreSkylake),
            _ => Err(UarchConfigError::Cpu(s.to_string())),
        }
    }
}

impl fmt::Display for CpuModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CpuModel::Skylake => "skylake",
            CpuModel::PreSkylake => "pre-skylake",
        })
    }
}

/// Points at which an indirect branch prediction barrier can be issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IbpbEvent {
    Eenter,
    Eresume,
    Eexit,
    Aex,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Countermeasures {
    pub ibrs: bool,
    pub stibp: bool,
    pub ibpb_events: Vec<IbpbEvent>,
    pub retpoline: bool,
    pub rsb_refill_on_enclave_entry: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct UarchConfig {
    pub cpu: CpuModel,
    pub latencies: Latencies,
    pub btb_index_bits: u32,
    pub rsb_entries: usize,
    pub speculation_depth: usize,
    /// A return that falls back to the BTB only uses entries whose full
    /// source address equals the return's address.
    pub ret_poison_requires_exact_match: bool,
    pub ssa_per_tcs: u32,
    pub countermeasures: Countermeasures,
    /// Turn speculation off entirely (reference runs).
    pub speculate: bool,
    /// Extra random cycles (0..=jitter) on memory accesses; 0 disables.
    pub jitter: u64,
    pub jitter_seed: u64,
}

impl Default for UarchConfig {
    fn default() -> Self {
        UarchConfig {
            cpu: CpuModel::Skylake,
            latencies: Latencies::default(),
            btb_index_bits: 12,
            rsb_entries: 16,
            speculation_depth: 64,
            ret_poison_requires_exact_match: true,
            ssa_per_tcs: 2,
            countermeasures: Countermeasures::default(),
            speculate: true,
            jitter: 0,
            jitter_seed: 0,
        }
    }
}

impl UarchConfig {
    pub fn preset(cpu: CpuModel) -> Self {
        UarchConfig {
            cpu,
            ..Default::default()
        }
    }
}
