//! Line-oriented attack scenario files.
//!
//! ```text
//! # comments run to end of line
//! cpu skylake
//! latency memory 200
//! countermeasure ibpb eenter
//! array 0x610000 stride 0x100
//! gadget window 2 reg-a r14 reg-c r15
//! leak 0x106500 2
//! known 0x1064ff 00
//! round
//!   poison_btb check_state+0x20 gadget mode cross-process
//!   flush array
//!   eenter
//!   reload array
//! end
//! handler
//!   evict 0x1bfff8 2000
//!   eresume
//! end
//! ```
//!
//! Addresses are hex (the `0x` prefix is optional) when they start with a
//! digit and symbol references (`name`, `name+0xoff`) otherwise. Counts,
//! cores and seeds are decimal unless written with `0x`.

use std::str::FromStr;

use thiserror::Error;

use crate::asmparse::{Listing, LookupError, Reg64};
use crate::uarch::{Countermeasures, CpuModel, IbpbEvent, Latencies, UarchConfig};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("scenario line {line}: {msg}")]
pub struct ScenarioParseError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Addr {
    Abs(u64),
    Sym(String),
}

impl Addr {
    pub fn resolve(&self, program: &Listing) -> Result<u64, LookupError> {
        match self {
            Addr::Abs(a) => Ok(*a),
            Addr::Sym(s) => program.resolve_symbol(s),
        }
    }
}

impl FromStr for Addr {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.chars().next() {
            Some(c) if c.is_ascii_digit() => parse_hex(s).map(Addr::Abs).ok_or_else(|| format!("bad address `{s}`")),
            Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.' => Ok(Addr::Sym(s.to_string())),
            _ => Err(format!("bad address `{s}`")),
        }
    }
}

fn parse_hex(s: &str) -> Option<u64> {
    let d = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(d, 16).ok()
}

fn parse_num(s: &str) -> Option<u64> {
    match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_signed(s: &str) -> Option<i64> {
    match s.strip_prefix('-') {
        Some(rest) => parse_num(rest).map(|v| (v as i64).wrapping_neg()),
        None => parse_num(s).map(|v| v as i64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoisonMode {
    /// Attacker code at an address sharing the low 32 bits of the source.
    SameProcess,
    /// A second process with the victim's layout trains the exact source.
    CrossProcess,
}

/// High half of the attacker's own code addresses in same-process mode.
pub const ALIAS_REGION: u64 = 0x7fff_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepleteMethod {
    /// Returns without calls until the RSB is empty.
    RetLoop,
    /// The AEX path leaves the RSB empty.
    Aex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InterruptAt {
    Addr(Addr),
    Cycle(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    SetReg(Reg64, u64),
    PoisonBtb {
        src: Addr,
        dst: Addr,
        reps: u32,
        mode: PoisonMode,
        core: u8,
    },
    DepleteRsb(DepleteMethod),
    SetReserved(Addr, bool),
    Ibpb,
    Evict(Addr, u32),
    FlushPte(Addr),
    Preload(Addr),
    Interrupt(InterruptAt),
    FlushArray,
    ReloadArray,
    Eenter,
    Eresume,
}

/// Flush-Reload probe array: `entries` lines at `base + i * stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitoredArray {
    pub base: u64,
    pub stride: u64,
    pub entries: usize,
}

impl MonitoredArray {
    pub fn entry(&self, i: usize) -> u64 {
        self.base.wrapping_add(i as u64 * self.stride)
    }
}

/// The encoding gadget as the attacker drives it: a `width`-byte load from
/// `reg_a + disp_a`, then an access at `reg_c + scale * loaded + disp_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GadgetWindow {
    pub width: u8,
    pub reg_a: Reg64,
    pub disp_a: i64,
    pub reg_c: Option<Reg64>,
    pub scale: u64,
    pub disp_c: i64,
}

impl GadgetWindow {
    /// Array stride that makes the unknown top byte select the entry.
    pub fn required_stride(&self) -> u64 {
        self.scale << (8 * (self.width as u64 - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Rate(f64),
    Bytes(Vec<u8>),
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cpu: Option<CpuModel>,
    pub latencies: Vec<(String, u64)>,
    pub countermeasures: Countermeasures,
    pub array: Option<MonitoredArray>,
    pub gadget: Option<GadgetWindow>,
    pub leak: Option<(Addr, usize)>,
    pub known: Option<(Addr, Vec<u8>)>,
    /// `(addr, len, seed)`: fill with ChaCha8 bytes before setup.
    pub seed_secret: Option<(Addr, usize, u64)>,
    pub retries: u32,
    /// Cycle budget for each stretch of victim execution.
    pub budget: u64,
    pub expect: Vec<Expect>,
    pub setup: Vec<Step>,
    pub round: Vec<Step>,
    pub handler: Vec<Step>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            cpu: None,
            latencies: Vec::new(),
            countermeasures: Countermeasures::default(),
            array: None,
            gadget: None,
            leak: None,
            known: None,
            seed_secret: None,
            retries: 8,
            budget: 2_000_000,
            expect: Vec::new(),
            setup: Vec::new(),
            round: Vec::new(),
            handler: Vec::new(),
        }
    }
}

const LATENCY_KEYS: [&str; 6] = ["l1", "l2", "llc", "memory", "cached-walk", "memory-walk"];

fn latency_slot<'a>(l: &'a mut Latencies, key: &str) -> Option<&'a mut u64> {
    Some(match key {
        "l1" => &mut l.l1,
        "l2" => &mut l.l2,
        "llc" => &mut l.llc,
        "memory" => &mut l.memory,
        "cached-walk" => &mut l.cached_walk,
        "memory-walk" => &mut l.memory_walk,
        _ => return None,
    })
}

impl Scenario {
    /// Overlay the scenario's cpu, latencies and countermeasures on `base`.
    /// Countermeasures only switch things on.
    pub fn configure(&self, base: &UarchConfig) -> UarchConfig {
        let mut cfg = base.clone();
        if let Some(cpu) = self.cpu {
            cfg.cpu = cpu;
        }
        for (k, v) in &self.latencies {
            if let Some(slot) = latency_slot(&mut cfg.latencies, k) {
                *slot = *v;
            }
        }
        let c = &self.countermeasures;
        let m = &mut cfg.countermeasures;
        m.ibrs |= c.ibrs;
        m.stibp |= c.stibp;
        m.retpoline |= c.retpoline;
        m.rsb_refill_on_enclave_entry |= c.rsb_refill_on_enclave_entry;
        for e in &c.ibpb_events {
            if !m.ibpb_events.contains(e) {
                m.ibpb_events.push(*e);
            }
        }
        cfg
    }

    pub fn steps_mut(&mut self) -> impl Iterator<Item = &mut Step> {
        self.setup.iter_mut().chain(self.round.iter_mut()).chain(self.handler.iter_mut())
    }
}

struct Line<'a> {
    no: usize,
    toks: Vec<&'a str>,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> ScenarioParseError {
        ScenarioParseError {
            line: self.no,
            msg: msg.into(),
        }
    }

    fn tok(&self, i: usize, what: &str) -> Result<&'a str, ScenarioParseError> {
        self.toks.get(i).copied().ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn addr(&self, i: usize) -> Result<Addr, ScenarioParseError> {
        self.tok(i, "address")?.parse().map_err(|e: String| self.err(e))
    }

    fn num(&self, i: usize, what: &str) -> Result<u64, ScenarioParseError> {
        let t = self.tok(i, what)?;
        parse_num(t).ok_or_else(|| self.err(format!("bad {what} `{t}`")))
    }

    fn reg(&self, i: usize) -> Result<Reg64, ScenarioParseError> {
        let t = self.tok(i, "register")?;
        t.parse().map_err(|_| self.err(format!("`{t}` is not a 64-bit register")))
    }

    fn no_extra(&self, n: usize) -> Result<(), ScenarioParseError> {
        match self.toks.get(n) {
            Some(t) => Err(self.err(format!("unexpected `{t}`"))),
            None => Ok(()),
        }
    }

    /// `key value` pairs from token `from` on.
    fn pairs(&self, from: usize) -> Result<Vec<(&'a str, &'a str)>, ScenarioParseError> {
        let rest = &self.toks[from.min(self.toks.len())..];
        if rest.len() % 2 != 0 {
            return Err(self.err(format!("`{}` needs a value", rest[rest.len() - 1])));
        }
        Ok(rest.chunks(2).map(|c| (c[0], c[1])).collect())
    }
}

fn parse_step(l: &Line) -> Result<Step, ScenarioParseError> {
    let step = match l.toks[0] {
        "set_reg" => {
            let r = l.reg(1)?;
            let v = l.tok(2, "value")?;
            let v = parse_num(v).ok_or_else(|| l.err(format!("bad value `{v}`")))?;
            l.no_extra(3)?;
            Step::SetReg(r, v)
        }
        "poison_btb" => {
            let (src, dst) = (l.addr(1)?, l.addr(2)?);
            let (mut reps, mut mode, mut core) = (1, PoisonMode::CrossProcess, 0);
            let mut rest = 3;
            if let Some(n) = l.toks.get(3).and_then(|t| parse_num(t)) {
                reps = n as u32;
                rest = 4;
            }
            for (k, v) in l.pairs(rest)? {
                match k {
                    "reps" => reps = parse_num(v).ok_or_else(|| l.err(format!("bad reps `{v}`")))? as u32,
                    "mode" => {
                        mode = match v {
                            "same-process" => PoisonMode::SameProcess,
                            "cross-process" => PoisonMode::CrossProcess,
                            _ => return Err(l.err(format!("unknown poison mode `{v}`"))),
                        }
                    }
                    "core" => {
                        core = parse_num(v)
                            .filter(|c| *c < 256)
                            .ok_or_else(|| l.err(format!("bad core `{v}`")))? as u8
                    }
                    _ => return Err(l.err(format!("unknown poison_btb option `{k}`"))),
                }
            }
            Step::PoisonBtb {
                src,
                dst,
                reps,
                mode,
                core,
            }
        }
        "deplete_rsb" => {
            let m = match l.toks.get(1).copied() {
                None | Some("ret-loop") => DepleteMethod::RetLoop,
                Some("aex") => DepleteMethod::Aex,
                Some(t) => return Err(l.err(format!("unknown depletion method `{t}`"))),
            };
            l.no_extra(2)?;
            Step::DepleteRsb(m)
        }
        "set_reserved" => {
            let a = l.addr(1)?;
            let on = match l.tok(2, "on|off")? {
                "on" => true,
                "off" => false,
                t => return Err(l.err(format!("expected on|off, got `{t}`"))),
            };
            l.no_extra(3)?;
            Step::SetReserved(a, on)
        }
        "ibpb" => {
            l.no_extra(1)?;
            Step::Ibpb
        }
        "evict" => {
            let a = l.addr(1)?;
            let n = if l.toks.len() > 2 { l.num(2, "count")? as u32 } else { 2000 };
            l.no_extra(3)?;
            Step::Evict(a, n)
        }
        "flush_pte" => {
            let a = l.addr(1)?;
            l.no_extra(2)?;
            Step::FlushPte(a)
        }
        "preload" => {
            let a = l.addr(1)?;
            l.no_extra(2)?;
            Step::Preload(a)
        }
        "interrupt" => {
            let at = match l.tok(1, "`at` or `cycle`")? {
                "at" => InterruptAt::Addr(l.addr(2)?),
                "cycle" => InterruptAt::Cycle(l.num(2, "cycle")?),
                t => return Err(l.err(format!("expected `at` or `cycle`, got `{t}`"))),
            };
            l.no_extra(3)?;
            Step::Interrupt(at)
        }
        "flush" | "reload" => {
            if l.tok(1, "`array`")? != "array" {
                return Err(l.err("only `array` can be flushed or reloaded"));
            }
            l.no_extra(2)?;
            if l.toks[0] == "flush" {
                Step::FlushArray
            } else {
                Step::ReloadArray
            }
        }
        "eenter" => {
            l.no_extra(1)?;
            Step::Eenter
        }
        "eresume" => {
            l.no_extra(1)?;
            Step::Eresume
        }
        d => return Err(l.err(format!("unknown step `{d}`"))),
    };
    Ok(step)
}

fn parse_top(l: &Line, sc: &mut Scenario) -> Result<(), ScenarioParseError> {
    match l.toks[0] {
        "cpu" => {
            let t = l.tok(1, "cpu model")?;
            sc.cpu = Some(t.parse().map_err(|e: crate::uarch::UarchConfigError| l.err(e.to_string()))?);
            l.no_extra(2)?;
        }
        "latency" => {
            let k = l.tok(1, "latency key")?;
            if !LATENCY_KEYS.contains(&k) {
                return Err(l.err(format!("unknown latency `{k}`")));
            }
            sc.latencies.push((k.to_string(), l.num(2, "cycles")?));
            l.no_extra(3)?;
        }
        "countermeasure" => {
            let c = &mut sc.countermeasures;
            match l.tok(1, "countermeasure")? {
                "ibrs" => c.ibrs = true,
                "stibp" => c.stibp = true,
                "retpoline" => c.retpoline = true,
                "rsb-refill" => c.rsb_refill_on_enclave_entry = true,
                "ibpb" => {
                    let e = match l.tok(2, "ibpb event")? {
                        "eenter" => IbpbEvent::Eenter,
                        "eresume" => IbpbEvent::Eresume,
                        "eexit" => IbpbEvent::Eexit,
                        "aex" => IbpbEvent::Aex,
                        t => return Err(l.err(format!("unknown ibpb event `{t}`"))),
                    };
                    c.ibpb_events.push(e);
                    l.no_extra(3)?;
                    return Ok(());
                }
                t => return Err(l.err(format!("unknown countermeasure `{t}`"))),
            }
            l.no_extra(2)?;
        }
        "array" => {
            let base = match l.addr(1)? {
                Addr::Abs(a) => a,
                Addr::Sym(_) => return Err(l.err("array base must be numeric")),
            };
            let mut a = MonitoredArray {
                base,
                stride: 64,
                entries: 256,
            };
            for (k, v) in l.pairs(2)? {
                let n = parse_num(v).ok_or_else(|| l.err(format!("bad {k} `{v}`")))?;
                match k {
                    "stride" => a.stride = n,
                    "entries" => a.entries = n as usize,
                    _ => return Err(l.err(format!("unknown array option `{k}`"))),
                }
            }
            if a.stride < 64 {
                return Err(l.err("array stride must be at least one cache line"));
            }
            if a.entries != 256 {
                return Err(l.err("a monitored array has 256 entries, one per byte value"));
            }
            sc.array = Some(a);
        }
        "gadget" => {
            if l.tok(1, "`window`")? != "window" {
                return Err(l.err("expected `gadget window N ...`"));
            }
            let width = l.num(2, "window")?;
            if !(1..=8).contains(&width) {
                return Err(l.err("window must be 1..=8 bytes"));
            }
            let mut g = GadgetWindow {
                width: width as u8,
                reg_a: Reg64::Rax,
                disp_a: 0,
                reg_c: None,
                scale: 1,
                disp_c: 0,
            };
            let mut have_a = false;
            for (k, v) in l.pairs(3)? {
                let reg = || v.parse::<Reg64>().map_err(|_| l.err(format!("`{v}` is not a 64-bit register")));
                let signed = || parse_signed(v).ok_or_else(|| l.err(format!("bad {k} `{v}`")));
                match k {
                    "reg-a" => {
                        g.reg_a = reg()?;
                        have_a = true;
                    }
                    "reg-c" => g.reg_c = Some(reg()?),
                    "disp-a" => g.disp_a = signed()?,
                    "disp-c" => g.disp_c = signed()?,
                    "scale" => g.scale = signed()? as u64,
                    _ => return Err(l.err(format!("unknown gadget option `{k}`"))),
                }
            }
            if !have_a {
                return Err(l.err("gadget needs reg-a"));
            }
            if ![1, 2, 4, 8].contains(&g.scale) {
                return Err(l.err("scale must be 1, 2, 4 or 8"));
            }
            sc.gadget = Some(g);
        }
        "leak" => {
            sc.leak = Some((l.addr(1)?, l.num(2, "length")? as usize));
            l.no_extra(3)?;
        }
        "known" => {
            let a = l.addr(1)?;
            let bytes = l.toks[2..]
                .iter()
                .map(|t| u8::from_str_radix(t, 16).map_err(|_| l.err(format!("bad byte `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            sc.known = Some((a, bytes));
        }
        "seed_secret" => {
            sc.seed_secret = Some((l.addr(1)?, l.num(2, "length")? as usize, l.num(3, "seed")?));
            l.no_extra(4)?;
        }
        "retries" => {
            sc.retries = l.num(1, "retry count")? as u32;
            l.no_extra(2)?;
        }
        "budget" => {
            sc.budget = l.num(1, "cycle budget")?;
            l.no_extra(2)?;
        }
        "expect" => match l.tok(1, "`rate`, `bytes` or `unknown`")? {
            "rate" => {
                let t = l.tok(2, "rate")?;
                let r: f64 = t.parse().map_err(|_| l.err(format!("bad rate `{t}`")))?;
                sc.expect.push(Expect::Rate(r));
            }
            "bytes" => {
                let b = l.toks[2..]
                    .iter()
                    .map(|t| u8::from_str_radix(t, 16).map_err(|_| l.err(format!("bad byte `{t}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                sc.expect.push(Expect::Bytes(b));
            }
            "unknown" => sc.expect.push(Expect::Unknown),
            t => return Err(l.err(format!("unknown expectation `{t}`"))),
        },
        d => return Err(l.err(format!("unknown directive `{d}`"))),
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Setup,
    Round,
    Handler,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioParseError> {
    let mut sc = Scenario::default();
    let mut block: Option<(Block, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let l = Line {
            no: i + 1,
            toks: body.split_whitespace().collect(),
        };
        if l.toks.is_empty() {
            continue;
        }
        let opener = match l.toks[0] {
            "setup" => Some(Block::Setup),
            "round" => Some(Block::Round),
            "handler" => Some(Block::Handler),
            _ => None,
        };
        match (block, opener) {
            (Some(_), Some(_)) => return Err(l.err("blocks do not nest")),
            (None, Some(b)) => {
                l.no_extra(1)?;
                let target = match b {
                    Block::Setup => &sc.setup,
                    Block::Round => &sc.round,
                    Block::Handler => &sc.handler,
                };
                if !target.is_empty() {
                    return Err(l.err(format!("duplicate `{}` block", l.toks[0])));
                }
                block = Some((b, l.no));
            }
            (Some((b, _)), None) => {
                if l.toks[0] == "end" {
                    l.no_extra(1)?;
                    block = None;
                    continue;
                }
                let s = parse_step(&l)?;
                match b {
                    Block::Setup => sc.setup.push(s),
                    Block::Round => sc.round.push(s),
                    Block::Handler => sc.handler.push(s),
                }
            }
            (None, None) => {
                if l.toks[0] == "end" {
                    return Err(l.err("`end` without an open block"));
                }
                parse_top(&l, &mut sc)?;
            }
        }
    }
    if let Some((_, line)) = block {
        return Err(ScenarioParseError {
            line,
            msg: "block is never closed with `end`".into(),
        });
    }
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_and_options() {
        let sc = parse_scenario(
            "cpu pre-skylake\nlatency memory 300\narray 0x610000 stride 0x100\n\
             gadget window 2 reg-a r14 reg-c r15 disp-c -0x8\nleak 106500 2\nknown 1064ff 00\n\
             round\n poison_btb 0x2560 gadget 4 mode same-process core 1\n eenter\n reload array\nend\n",
        )
        .unwrap();
        assert_eq!(sc.cpu, Some(CpuModel::PreSkylake));
        assert_eq!(sc.latencies, vec![("memory".to_string(), 300)]);
        assert_eq!(sc.gadget.unwrap().disp_c, -8);
        assert_eq!(sc.gadget.unwrap().required_stride(), 0x100);
        assert_eq!(
            sc.round[0],
            Step::PoisonBtb {
                src: Addr::Abs(0x2560),
                dst: Addr::Sym("gadget".into()),
                reps: 4,
                mode: PoisonMode::SameProcess,
                core: 1
            }
        );
        assert_eq!(sc.leak, Some((Addr::Abs(0x106500), 2)));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_scenario("cpu skylake\n\nround\n  bogus\nend\n").unwrap_err();
        assert_eq!(e.line, 4);
        assert_eq!(parse_scenario("round\neenter\n").unwrap_err().line, 1);
        assert_eq!(parse_scenario("latency l4 3").unwrap_err().line, 1);
    }
}
