use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asmparse::{Reg64, Register};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: unknown register `{0}`")]
    Register(String),
    #[error("config: {0} must be positive")]
    NotPositive(&'static str),
}

/// How the untrusted side enters the enclave.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EntryModel {
    pub entry_symbol: String,
    /// Register view that carries the ECall/ORet selector, e.g. `edi`.
    pub selector_register: String,
    pub ecall_selector: u64,
    pub oret_selector: u64,
    pub ocall_symbol: String,
    pub attacker_registers: Vec<Reg64>,
    /// Synthetic stack top; rsp starts here.
    pub stack_top: u64,
    pub stack_size: u64,
    pub stack_fill: u8,
    pub data_fill: u8,
    /// Segment bases used when the listing carries no `.gsbase`.
    pub gs_base: u64,
    pub fs_base: u64,
}

impl Default for EntryModel {
    fn default() -> Self {
        use Reg64::*;
        EntryModel {
            entry_symbol: "enclave_entry".into(),
            selector_register: "edi".into(),
            ecall_selector: 0,
            oret_selector: 0xffff_fffe,
            ocall_symbol: "sgx_ocall".into(),
            attacker_registers: vec![Rbx, Rcx, Rdx, Rdi, Rsi, Rbp, R8, R9, R10, R11, R12, R13, R14, R15],
            stack_top: 0x7fff_f000_0000,
            stack_size: 0x10_0000,
            stack_fill: 0xcc,
            data_fill: 0x00,
            gs_base: 0x7fff_e000_0000,
            fs_base: 0x7fff_d000_0000,
        }
    }
}

impl EntryModel {
    pub fn selector(&self) -> Result<Register, ConfigError> {
        Register::from_token(self.selector_register.trim_start_matches('%'))
            .ok_or_else(|| ConfigError::Register(self.selector_register.clone()))
    }

    pub fn is_attacker(&self, r: Reg64) -> bool {
        self.attacker_registers.contains(&r)
    }

    /// Bitmask over `Reg64::index` of the attacker registers.
    pub fn attacker_mask(&self) -> u32 {
        self.attacker_registers.iter().fold(0, |m, r| m | 1 << r.index())
    }

    pub fn in_stack(&self, addr: u64) -> bool {
        addr >= self.stack_top.saturating_sub(self.stack_size) && addr < self.stack_top + 0x1000
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExplorationConfig {
    pub max_steps: u64,
    pub max_fork_depth: u32,
    pub loop_bound: u32,
    pub max_states: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            max_steps: 50_000,
            max_fork_depth: 64,
            loop_bound: 8,
            max_states: 20_000,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_steps == 0 {
            return Err(ConfigError::NotPositive("max-steps"));
        }
        if self.max_fork_depth == 0 {
            return Err(ConfigError::NotPositive("max-fork-depth"));
        }
        if self.loop_bound == 0 {
            return Err(ConfigError::NotPositive("loop-bound"));
        }
        if self.max_states == 0 {
            return Err(ConfigError::NotPositive("max-states"));
        }
        Ok(())
    }
}

/// `[entry]` and `[explore]` tables of a config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymexConfigFile {
    pub entry: EntryModel,
    pub explore: ExplorationConfig,
}

impl SymexConfigFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SymexConfigFile = toml::from_str(text)?;
        cfg.entry.selector()?;
        cfg.explore.validate()?;
        Ok(cfg)
    }
}
