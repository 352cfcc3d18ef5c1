use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::asmparse::{Listing, Reg64};
use crate::corpus;
use crate::uarch::{gprsgx, Countermeasures, CpuModel, IbpbEvent, UarchConfig, GPRSGX_REGS, GPRSGX_SIZE};

use super::run::{run_scenario, AttackResult, HarnessError};
use super::scenario::{parse_scenario, Addr, Scenario, Step};

/// Registers decoded from an extracted GPRSGX region.
#[derive(Debug, Clone, Serialize)]
pub struct SsaSnapshot {
    pub fields: Vec<(String, Option<u64>)>,
    pub result: AttackResult,
}

impl SsaSnapshot {
    pub fn get(&self, name: &str) -> Option<u64> {
        self.fields.iter().find(|f| f.0 == name).and_then(|f| f.1)
    }

    pub fn reg(&self, r: Reg64) -> Option<u64> {
        self.get(r.name())
    }
}

fn field(bytes: &[Option<u8>], off: usize, width: usize) -> Option<u64> {
    bytes[off..off + width]
        .iter()
        .rev()
        .try_fold(0u64, |acc, b| b.map(|b| acc << 8 | b as u64))
}

/// Named GPRSGX fields, `None` where any byte stayed unknown.
pub fn decode_gprsgx(bytes: &[Option<u8>]) -> Vec<(String, Option<u64>)> {
    let mut out: Vec<(String, Option<u64>)> = GPRSGX_REGS
        .iter()
        .enumerate()
        .map(|(i, r)| (r.name().to_string(), field(bytes, 8 * i, 8)))
        .collect();
    for (name, off, w) in [
        ("rflags", gprsgx::RFLAGS, 8),
        ("rip", gprsgx::RIP, 8),
        ("ursp", gprsgx::URSP, 8),
        ("urbp", gprsgx::URBP, 8),
        ("exitinfo", gprsgx::EXITINFO, 4),
        ("fsbase", gprsgx::FSBASE, 8),
        ("gsbase", gprsgx::GSBASE, 8),
    ] {
        out.push((name.to_string(), field(bytes, off as usize, w)));
    }
    out
}

/// Extract the GPRSGX region named by the scenario's `leak` line and decode
/// it. The scenario's setup is expected to park a thread through an AEX.
pub fn read_ssa_registers(program: &Listing, sc: &Scenario, cfg: &UarchConfig) -> Result<SsaSnapshot, HarnessError> {
    if sc.leak.as_ref().map(|l| l.1) != Some(GPRSGX_SIZE) {
        return Err(HarnessError::Invalid(format!("an SSA snapshot leaks exactly {GPRSGX_SIZE} bytes")));
    }
    let result = run_scenario(program, sc, cfg)?;
    Ok(SsaSnapshot {
        fields: decode_gprsgx(&result.recovered),
        result,
    })
}

/// Extract a key from the stack of a thread parked at a faulting call. The
/// scenario supplies the layout; this is [`run_scenario`] under another name
/// so reports can label it.
pub fn steal_key_demo(program: &Listing, sc: &Scenario, cfg: &UarchConfig) -> Result<AttackResult, HarnessError> {
    run_scenario(program, sc, cfg)
}

fn bundled(text: &str) -> Scenario {
    parse_scenario(text).expect("bundled scenario parses")
}

/// Two-byte secret scenario: poisoned return, evicted return address,
/// gadget reading through r14 into an array at r15.
pub fn two_byte_demo() -> (Listing, Scenario) {
    (corpus::listing(corpus::TWO_BYTE_PROG), bundled(corpus::TWO_BYTE_SCN))
}

/// SSA snapshot scenario. A seed replaces the spinning thread's argument
/// (which ends up in rbx) with a derived value.
pub fn ssa_demo(seed: Option<u64>) -> (Listing, Scenario) {
    let mut sc = bundled(corpus::SSA_SCN);
    if let Some(seed) = seed {
        // ecall arguments at or below 0x3fffff are rejected by do_ecall.
        let v = ChaCha8Rng::seed_from_u64(seed).gen_range(0x40_0000..0x7fff_ffff_ffff_u64);
        for s in &mut sc.setup {
            if let Step::SetReg(Reg64::Rsi, x) = s {
                *x = v;
            }
        }
    }
    (corpus::listing(corpus::SDK_VICTIM), sc)
}

/// Stack key scenario. A seed replaces the built-in key with derived bytes;
/// `zeroized` runs the ecall that wipes its copy before the call.
pub fn key_demo(seed: Option<u64>, zeroized: bool) -> (Listing, Scenario) {
    let mut sc = bundled(corpus::KEY_SCN);
    if let Some(seed) = seed {
        sc.seed_secret = Some((Addr::Abs(KEY_ADDR), 16, seed));
        sc.expect.clear();
    }
    if zeroized {
        for s in &mut sc.setup {
            if let Step::SetReg(Reg64::Rdi, x) = s {
                *x = 2;
            }
        }
        sc.expect = vec![super::Expect::Bytes(vec![0; 16])];
    }
    (corpus::listing(corpus::SDK_VICTIM), sc)
}

/// Where the demo enclave keeps the key it copies onto the stack.
pub const KEY_ADDR: u64 = 0x2a_0000;

/// Random 32-byte secret scenario.
pub fn secret_demo(seed: u64) -> (Listing, Scenario) {
    let mut sc = bundled(corpus::SECRET32_SCN);
    if let Some(s) = &mut sc.seed_secret {
        s.2 = seed;
    }
    (corpus::listing(corpus::SDK_VICTIM), sc)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixCell {
    pub name: String,
    pub cpu: CpuModel,
    pub countermeasures: Countermeasures,
    /// Logical core that trains the BTB; `None` keeps the scenario's.
    pub poison_core: Option<u8>,
}

impl MatrixCell {
    fn new(name: &str, cpu: CpuModel, countermeasures: Countermeasures, poison_core: Option<u8>) -> Self {
        MatrixCell {
            name: name.to_string(),
            cpu,
            countermeasures,
            poison_core,
        }
    }
}

/// Baseline, each mitigation alone, and the sibling-core pair.
pub fn default_matrix() -> Vec<MatrixCell> {
    let none = Countermeasures::default;
    let with = |f: fn(&mut Countermeasures)| {
        let mut c = Countermeasures::default();
        f(&mut c);
        c
    };
    vec![
        MatrixCell::new("baseline", CpuModel::Skylake, none(), None),
        MatrixCell::new("ibrs", CpuModel::Skylake, with(|c| c.ibrs = true), None),
        MatrixCell::new("ibpb-at-eenter", CpuModel::Skylake, with(|c| c.ibpb_events = vec![IbpbEvent::Eenter]), None),
        MatrixCell::new("retpoline+skylake", CpuModel::Skylake, with(|c| c.retpoline = true), None),
        MatrixCell::new("retpoline+pre-skylake", CpuModel::PreSkylake, with(|c| c.retpoline = true), None),
        MatrixCell::new("cross-core", CpuModel::Skylake, none(), Some(1)),
        MatrixCell::new("cross-core+stibp", CpuModel::Skylake, with(|c| c.stibp = true), Some(1)),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixRow {
    pub name: String,
    pub success_rate: f64,
    pub recovered: String,
}

/// One independent run per cell. The cell's cpu and countermeasures replace
/// whatever the scenario and `base` set.
pub fn countermeasure_matrix(
    program: &Listing,
    sc: &Scenario,
    base: &UarchConfig,
    cells: &[MatrixCell],
) -> Result<Vec<MatrixRow>, HarnessError> {
    cells
        .iter()
        .map(|cell| {
            let mut cfg = sc.configure(base);
            cfg.cpu = cell.cpu;
            cfg.countermeasures = cell.countermeasures.clone();
            let mut s = sc.clone();
            s.cpu = None;
            s.countermeasures = Countermeasures::default();
            if let Some(core) = cell.poison_core {
                for st in s.steps_mut() {
                    if let Step::PoisonBtb { core: c, .. } = st {
                        *c = core;
                    }
                }
            }
            let r = run_scenario(program, &s, &cfg)?;
            Ok(MatrixRow {
                name: cell.name.clone(),
                success_rate: r.success_rate,
                recovered: r.recovered_hex(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gprsgx_decoding() {
        let mut b = vec![Some(0u8); GPRSGX_SIZE];
        b[24] = Some(0xef);
        b[25] = Some(0xbe);
        b[136] = Some(0x0d);
        b[137] = Some(0x30);
        b[0] = None;
        let f = decode_gprsgx(&b);
        let get = |n: &str| f.iter().find(|x| x.0 == n).unwrap().1;
        assert_eq!(get("rbx"), Some(0xbeef));
        assert_eq!(get("rip"), Some(0x300d));
        assert_eq!(get("rax"), None);
        assert_eq!(f.len(), 23);
    }
}
