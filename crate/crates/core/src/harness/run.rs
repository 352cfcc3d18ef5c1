use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::asmparse::{Listing, LookupError, Reg64};
use crate::uarch::{low32, Halt, RaceProfile, Sim, SimError, Stop, Trace, TraceLevel, UarchConfig, UNTRUSTED_STACK};

use super::scenario::{
    Addr, DepleteMethod, Expect, GadgetWindow, InterruptAt, MonitoredArray, PoisonMode, Scenario, Step,
    ALIAS_REGION,
};

/// Faults one round may take before the harness gives up on it.
const MAX_FAULTS_PER_ROUND: u32 = 32;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("enclave fault at {addr:#x} (rip {rip:#x}) with no handler block")]
    UnhandledFault { addr: u64, rip: u64 },
    #[error("round took more than {0} faults")]
    FaultLoop(u32),
    #[error("victim did not stop within {0} cycles")]
    Budget(u64),
    #[error("victim halted at {rip:#x}: {why:?}")]
    Halted { rip: u64, why: Halt },
}

/// One run of the round block while extracting a byte.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub byte: usize,
    /// Monitored entries that reloaded under the threshold.
    pub hits: Vec<usize>,
    /// Mispredicted branches during the attempt.
    pub races: Vec<RaceProfile>,
}

impl Attempt {
    pub fn decoded(&self) -> Option<u8> {
        match self.hits[..] {
            [h] => Some(h as u8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackResult {
    pub start: u64,
    /// `None` for bytes that were never decoded.
    pub recovered: Vec<Option<u8>>,
    /// Enclave memory over the region when extraction finished.
    pub truth: Vec<u8>,
    pub attempts: Vec<u32>,
    pub success_rate: f64,
    pub squashes: usize,
    pub cycles: u64,
    #[serde(skip)]
    pub log: Vec<Attempt>,
    #[serde(skip)]
    pub trace: Trace,
}

impl AttackResult {
    pub fn matches(&self) -> usize {
        self.recovered.iter().zip(&self.truth).filter(|(r, t)| **r == Some(**t)).count()
    }

    /// Every byte recovered and equal to ground truth.
    pub fn exact(&self) -> bool {
        self.matches() == self.truth.len()
    }

    pub fn recovered_hex(&self) -> String {
        self.recovered
            .iter()
            .map(|b| b.map_or("??".to_string(), |b| format!("{b:02x}")))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn truth_hex(&self) -> String {
        self.truth.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
    }

    /// Check the scenario's `expect` lines; `None` when it has none.
    pub fn meets(&self, expect: &[Expect]) -> Option<bool> {
        if expect.is_empty() {
            return None;
        }
        Some(expect.iter().all(|e| match e {
            Expect::Rate(r) => (self.success_rate - r).abs() < 1e-9,
            Expect::Bytes(b) => self.recovered.iter().map(|x| x.unwrap_or(0)).eq(b.iter().copied())
                && self.recovered.iter().all(Option::is_some),
            Expect::Unknown => self.recovered.iter().all(Option::is_none),
        }))
    }
}

/// Addresses and parameters checked against the program.
struct Plan {
    array: MonitoredArray,
    gadget: GadgetWindow,
    reg_c: Reg64,
    start: u64,
    len: usize,
    known: Vec<(u64, u8)>,
}

fn validate(program: &Listing, sc: &Scenario) -> Result<Plan, HarnessError> {
    let bad = |m: &str| HarnessError::Invalid(m.to_string());
    let array = sc.array.ok_or_else(|| bad("missing `array`"))?;
    let gadget = sc.gadget.ok_or_else(|| bad("missing `gadget window`"))?;
    let reg_c = gadget
        .reg_c
        .ok_or_else(|| bad("extraction needs control of the gadget's base register (reg-c)"))?;
    if array.stride != gadget.required_stride() {
        return Err(HarnessError::Invalid(format!(
            "array stride {:#x} does not match the gadget's byte step {:#x}",
            array.stride,
            gadget.required_stride()
        )));
    }
    let (leak, len) = sc.leak.as_ref().ok_or_else(|| bad("missing `leak`"))?;
    let start = leak.resolve(program)?;
    let need = gadget.width as usize - 1;
    let mut known = Vec::new();
    if need > 0 {
        let (ka, kb) = sc.known.as_ref().ok_or_else(|| bad("missing `known` bytes before the region"))?;
        let ka = ka.resolve(program)?;
        if ka + kb.len() as u64 != start {
            return Err(bad("`known` bytes must end where the leaked region starts"));
        }
        if kb.len() < need {
            return Err(HarnessError::Invalid(format!("window of {} needs {need} known bytes", gadget.width)));
        }
        known = kb.iter().enumerate().map(|(i, b)| (ka + i as u64, *b)).collect();
    }
    let count = |f: fn(&Step) -> bool| sc.round.iter().filter(|s| f(s)).count();
    if count(|s| matches!(s, Step::ReloadArray)) == 0 {
        return Err(bad("the round block never reloads the array"));
    }
    if count(|s| matches!(s, Step::Eenter | Step::Eresume)) == 0 {
        return Err(bad("the round block never runs the victim"));
    }
    for s in sc.setup.iter().chain(&sc.round).chain(&sc.handler) {
        let addrs: Vec<&Addr> = match s {
            Step::PoisonBtb { src, dst, .. } => vec![src, dst],
            Step::SetReserved(a, _) | Step::Evict(a, _) | Step::FlushPte(a) | Step::Preload(a) => vec![a],
            Step::Interrupt(InterruptAt::Addr(a)) => vec![a],
            _ => vec![],
        };
        for a in addrs {
            a.resolve(program)?;
        }
    }
    if let Some((a, _, _)) = &sc.seed_secret {
        a.resolve(program)?;
    }
    Ok(Plan {
        array,
        gadget,
        reg_c,
        start,
        len: *len,
        known,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Setup,
    Round,
}

struct Runner<'a> {
    sim: Sim,
    sc: &'a Scenario,
    array: MonitoredArray,
    threshold: u64,
    window: Vec<(Reg64, u64)>,
    hits: Option<Vec<usize>>,
    faults: u32,
}

impl Runner<'_> {
    fn addr(&self, a: &Addr) -> u64 {
        a.resolve(self.sim.program()).expect("validated")
    }

    fn exec(&mut self, steps: &[Step], phase: Phase) -> Result<(), HarnessError> {
        for s in steps {
            match s {
                Step::SetReg(r, v) => self.sim.set_reg(*r, *v),
                Step::PoisonBtb {
                    src,
                    dst,
                    reps,
                    mode,
                    core,
                } => {
                    let (mut s, mut d) = (self.addr(src), self.addr(dst));
                    if *mode == PoisonMode::SameProcess {
                        s = ALIAS_REGION | low32(s) as u64;
                        d = ALIAS_REGION | low32(d) as u64;
                    }
                    self.sim.poison(s, d, *reps, *core);
                }
                Step::DepleteRsb(DepleteMethod::RetLoop) => {
                    for _ in 0..self.sim.rsb.capacity() {
                        self.sim.rsb.pop();
                    }
                }
                Step::DepleteRsb(DepleteMethod::Aex) => self.sim.deplete_rsb(),
                Step::SetReserved(a, on) => {
                    let a = self.addr(a);
                    self.sim.set_reserved(a, *on);
                }
                Step::Ibpb => self.sim.ibpb(),
                Step::Evict(a, n) => {
                    let a = self.addr(a);
                    self.sim.evict(a, *n);
                }
                Step::FlushPte(a) => {
                    let a = self.addr(a);
                    self.sim.flush_pte(a);
                }
                Step::Preload(a) => {
                    let a = self.addr(a);
                    self.sim.preload(a);
                }
                Step::Interrupt(InterruptAt::Addr(a)) => {
                    let a = self.addr(a);
                    self.sim.interrupt_at(a);
                }
                Step::Interrupt(InterruptAt::Cycle(c)) => self.sim.interrupt_at_cycle(*c),
                Step::FlushArray => {
                    for i in 0..self.array.entries {
                        self.sim.clflush(self.array.entry(i));
                    }
                }
                Step::ReloadArray => {
                    // Reload-then-flush, so probing never evicts a later entry.
                    let mut hits = Vec::new();
                    for i in 0..self.array.entries {
                        let a = self.array.entry(i);
                        if self.sim.timed_access(a) < self.threshold {
                            hits.push(i);
                        }
                        self.sim.clflush(a);
                    }
                    self.hits = Some(hits);
                }
                Step::Eenter => {
                    if phase == Phase::Round {
                        for &(r, v) in &self.window {
                            self.sim.set_reg(r, v);
                        }
                        self.sim.set_reg(Reg64::Rsp, UNTRUSTED_STACK);
                    }
                    self.sim.eenter()?;
                    self.drive(phase)?;
                }
                Step::Eresume => {
                    self.sim.eresume()?;
                    self.drive(phase)?;
                }
            }
        }
        Ok(())
    }

    /// Run the victim until it leaves the enclave. Faults during a round go
    /// to the handler; in setup, faults and interrupts leave it paused.
    fn drive(&mut self, phase: Phase) -> Result<(), HarnessError> {
        match self.sim.run(self.sc.budget) {
            Stop::Fault { addr, rip } if phase == Phase::Round => {
                if self.sc.handler.is_empty() {
                    return Err(HarnessError::UnhandledFault { addr, rip });
                }
                self.faults += 1;
                if self.faults > MAX_FAULTS_PER_ROUND {
                    return Err(HarnessError::FaultLoop(MAX_FAULTS_PER_ROUND));
                }
                let sc = self.sc;
                self.exec(&sc.handler, phase)
            }
            Stop::Budget => Err(HarnessError::Budget(self.sc.budget)),
            Stop::Halted { rip, why } => Err(HarnessError::Halted { rip, why }),
            _ => Ok(()),
        }
    }
}

/// Little-endian value of `bytes`.
fn le(bytes: &[u8]) -> u64 {
    bytes.iter().rev().fold(0, |acc, b| acc << 8 | *b as u64)
}

/// Execute `sc` against `program` with `cfg` and slide the gadget window over
/// the leaked region one byte at a time.
pub fn run_scenario(program: &Listing, sc: &Scenario, cfg: &UarchConfig) -> Result<AttackResult, HarnessError> {
    run_scenario_traced(program, sc, cfg, TraceLevel::Events)
}

/// [`run_scenario`] with the trace recorded at `level`.
pub fn run_scenario_traced(
    program: &Listing,
    sc: &Scenario,
    cfg: &UarchConfig,
    level: TraceLevel,
) -> Result<AttackResult, HarnessError> {
    let plan = validate(program, sc)?;
    let mut sim = Sim::new(program, cfg.clone())?;
    sim.trace = Trace::new(level);
    if let Some((a, len, seed)) = &sc.seed_secret {
        let a = a.resolve(program)?;
        let mut bytes = vec![0u8; *len];
        ChaCha8Rng::seed_from_u64(*seed).fill_bytes(&mut bytes);
        sim.mem.write_bytes(a, &bytes);
    }
    let mut r = Runner {
        sim,
        sc,
        array: plan.array,
        threshold: cfg.latencies.reload_threshold(),
        window: Vec::new(),
        hits: None,
        faults: 0,
    };
    r.exec(&sc.setup, Phase::Setup)?;
    r.sim.take_races();

    let g = plan.gadget;
    let w = g.width as u64;
    let mut known: Vec<u8> = plan.known.iter().map(|k| k.1).collect();
    let mut recovered = vec![None; plan.len];
    let mut attempts = vec![0u32; plan.len];
    let mut log = Vec::new();
    for i in 0..plan.len {
        let a = plan.start + i as u64;
        let low = le(&known[known.len() + 1 - w as usize..]);
        let reg_a = a.wrapping_sub(w - 1).wrapping_sub(g.disp_a as u64);
        let reg_c = plan
            .array
            .base
            .wrapping_sub(g.scale.wrapping_mul(low))
            .wrapping_sub(g.disp_c as u64);
        r.window = vec![(g.reg_a, reg_a), (plan.reg_c, reg_c)];
        for _ in 0..sc.retries.max(1) {
            attempts[i] += 1;
            r.hits = None;
            r.faults = 0;
            let round = &sc.round;
            r.exec(round, Phase::Round)?;
            let att = Attempt {
                byte: i,
                hits: r.hits.take().unwrap_or_default(),
                races: r.sim.take_races(),
            };
            let got = att.decoded();
            log.push(att);
            if got.is_some() {
                recovered[i] = got;
                break;
            }
        }
        match recovered[i] {
            Some(b) => known.push(b),
            None => break,
        }
    }

    let truth = r.sim.mem.read_bytes(plan.start, plan.len);
    let matching = recovered.iter().zip(&truth).filter(|(x, t)| **x == Some(**t)).count();
    // Every mispredicted branch opens one transient episode and one squash.
    let squashes = log.iter().map(|a| a.races.len()).sum();
    Ok(AttackResult {
        start: plan.start,
        success_rate: if plan.len == 0 { 1.0 } else { matching as f64 / plan.len as f64 },
        recovered,
        truth,
        attempts,
        squashes,
        cycles: r.sim.cycle(),
        log,
        trace: r.sim.trace.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_endian_window() {
        assert_eq!(le(&[0x00, 0x00, 0x00]), 0);
        assert_eq!(le(&[0x44, 0x33, 0x22]), 0x223344);
    }
}
