use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::asmparse::{InstrClass, Listing, LookupError, Reg64};

use super::btb::{Btb, LookupCtx, Rsb};
use super::cache::{line_of, CacheModel, Level, TranslationModel, Walk};
use super::config::{IbpbEvent, Latencies, UarchConfig};
use super::exec::{execute, ArchRegs, BranchKind, Flow, Port, PortError, Segments};
use super::memory::Memory;
use super::retpoline::apply_retpoline;
use super::trace::{Trace, TraceLevel};

/// Untrusted asynchronous exit pointer; never part of a program.
pub const AEP: u64 = 0x7fff_ffff_0000;
/// Default untrusted stack pointer at enclave entry.
pub const UNTRUSTED_STACK: u64 = 0x7ffd_0000_0000;
pub const SSA_FRAME_SIZE: u64 = 0x1000;
/// GPRSGX sits at the end of each SSA frame.
pub const GPRSGX_OFFSET: u64 = 3912;
pub const GPRSGX_SIZE: usize = 184;
/// Attacker memory used to build eviction sets.
pub const EVICTION_BASE: u64 = 0x5000_0000_0000;

/// GPRSGX register slots, 8 bytes each from offset 0.
pub const GPRSGX_REGS: [Reg64; 16] = [
    Reg64::Rax,
    Reg64::Rcx,
    Reg64::Rdx,
    Reg64::Rbx,
    Reg64::Rsp,
    Reg64::Rbp,
    Reg64::Rsi,
    Reg64::Rdi,
    Reg64::R8,
    Reg64::R9,
    Reg64::R10,
    Reg64::R11,
    Reg64::R12,
    Reg64::R13,
    Reg64::R14,
    Reg64::R15,
];

/// Field offsets inside GPRSGX.
pub mod gprsgx {
    pub const RFLAGS: u64 = 128;
    pub const RIP: u64 = 136;
    pub const URSP: u64 = 144;
    pub const URBP: u64 = 152;
    pub const EXITINFO: u64 = 160;
    pub const RESERVED: u64 = 164;
    pub const FSBASE: u64 = 168;
    pub const GSBASE: u64 = 176;
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("program has no .enclave range")]
    NoEnclave,
    #[error(transparent)]
    Lookup(#[from] LookupError),
    #[error("already executing inside the enclave")]
    InEnclave,
    #[error("no free SSA frame (CSSA = {0})")]
    NoFreeSsa(u32),
    #[error("no saved SSA frame to resume from")]
    NoSavedFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpuMode {
    Normal,
    Enclave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Halt {
    OutsideListing,
    OutsideEnclave,
    UnknownLeaf(u64),
}

/// Why [`Sim::run`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// EEXIT to `target`.
    Exited { target: u64 },
    /// Page fault taken through AEX.
    Fault { addr: u64, rip: u64 },
    /// Requested interrupt taken through AEX.
    Interrupted { rip: u64 },
    Halted { rip: u64, why: Halt },
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AexCause {
    PageFault(u64),
    Interrupt,
}

/// One timed access of a transient episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub addr: u64,
    pub issue: u64,
    /// Completion cycle, whether or not it beat the resolve.
    pub complete: u64,
    pub walk: Walk,
    pub level: Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransientEnd {
    Resolved,
    Fence,
    NestedIndirect,
    Fault,
    Unsupported,
    Enclu,
    OutsideListing,
    DepthLimit,
}

/// Timing of one mispredicted indirect branch and the transient path it
/// opened. All cycles are absolute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceProfile {
    pub branch: u64,
    pub predicted: u64,
    pub actual: u64,
    pub dispatch: u64,
    /// Branch target operand load; `None` for a register target.
    pub d1: Option<Access>,
    /// When the branch target operand arrives.
    pub resolve: u64,
    /// First fetch of the injected code.
    pub i1: Option<Access>,
    /// First transient load inside the enclave.
    pub d2: Option<Access>,
    /// First transient load outside the enclave.
    pub d3: Option<Access>,
    pub executed: usize,
    pub end: TransientEnd,
    /// `(cycle, addr)` of transient data fills that survived the squash.
    pub fills: Vec<(u64, u64)>,
}

impl RaceProfile {
    /// The encoding access completed before the branch resolved.
    pub fn d3_wins(&self) -> bool {
        self.d3.is_some_and(|d| self.resolve > d.complete)
    }

    pub fn window(&self) -> u64 {
        self.resolve - self.dispatch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnclaveLayout {
    pub range: (u64, u64),
    pub entry: u64,
    pub tcs: u64,
    pub ssa: u64,
    pub fs_base: u64,
    pub gs_base: u64,
}

impl EnclaveLayout {
    pub fn contains(&self, a: u64) -> bool {
        (self.range.0..self.range.1).contains(&a)
    }

    pub fn gprsgx(&self, frame: u32) -> u64 {
        self.ssa + frame as u64 * SSA_FRAME_SIZE + GPRSGX_OFFSET
    }
}

struct Env<'a> {
    cache: &'a mut CacheModel,
    xlat: &'a mut TranslationModel,
    lat: Latencies,
    rng: Option<&'a mut ChaCha8Rng>,
    jitter: u64,
}

impl Env<'_> {
    fn walk(&self, addr: u64) -> (Walk, u64) {
        let w = self.xlat.walk_kind(addr);
        (w, TranslationModel::latency(w, &self.lat))
    }

    fn line(&mut self, addr: u64) -> (Level, u64) {
        let lvl = self.cache.probe(addr);
        let mut l = CacheModel::latency(lvl, &self.lat);
        if lvl == Level::Memory && self.jitter > 0 {
            if let Some(r) = self.rng.as_deref_mut() {
                l += r.gen_range(0..=self.jitter);
            }
        }
        (lvl, l)
    }

    fn reserved(&self, addr: u64, width: u8) -> bool {
        self.xlat.is_reserved(addr) || self.xlat.is_reserved(addr + width.max(1) as u64 - 1)
    }
}

/// Architectural accesses: timed, optionally with cache effects deferred.
struct ArchPort<'a> {
    env: Env<'a>,
    mem: &'a mut Memory,
    layout: EnclaveLayout,
    enclave: bool,
    defer: bool,
    deferred: Vec<u64>,
    /// (latency, is_load, access)
    accesses: Vec<(u64, bool, (u64, Walk, Level))>,
}

impl ArchPort<'_> {
    fn touch(&mut self, addr: u64, width: u8, load: bool) -> Result<(), PortError> {
        if self.env.reserved(addr, width) {
            return Err(PortError::Fault(addr));
        }
        let (walk, wl) = self.env.walk(addr);
        let (level, ll) = self.env.line(addr);
        let last = addr + width.max(1) as u64 - 1;
        for a in [addr, last] {
            if self.defer {
                self.deferred.push(a);
            } else {
                self.env.xlat.install(a);
                self.env.cache.fill(a);
            }
        }
        self.accesses.push((wl + ll, load, (addr, walk, level)));
        Ok(())
    }

    fn shielded(&self, addr: u64) -> bool {
        !self.enclave && self.layout.contains(addr)
    }
}

impl Port for ArchPort<'_> {
    fn load(&mut self, addr: u64, width: u8) -> Result<u64, PortError> {
        self.touch(addr, width, true)?;
        if self.shielded(addr) {
            return Ok(crate::semantics::mask(width));
        }
        Ok(self.mem.read(addr, width))
    }

    fn store(&mut self, addr: u64, width: u8, v: u64) -> Result<(), PortError> {
        self.touch(addr, width, false)?;
        if !self.shielded(addr) {
            self.mem.write(addr, width, v);
        }
        Ok(())
    }

    fn clflush(&mut self, addr: u64) -> Result<(), PortError> {
        self.env.cache.flush(addr);
        Ok(())
    }
}

/// Transient accesses: stores are buffered, loads only take effect when
/// they complete before the branch resolves.
struct SpecPort<'a> {
    env: Env<'a>,
    mem: &'a Memory,
    layout: EnclaveLayout,
    enclave: bool,
    buffer: &'a mut HashMap<u64, u8>,
    t: &'a mut u64,
    resolve: u64,
    profile: &'a mut RaceProfile,
    end: TransientEnd,
}

impl Port for SpecPort<'_> {
    fn load(&mut self, addr: u64, width: u8) -> Result<u64, PortError> {
        if self.env.reserved(addr, width) {
            self.end = TransientEnd::Fault;
            return Err(PortError::Stop);
        }
        let t = *self.t;
        let (walk, wl) = self.env.walk(addr);
        let (level, ll) = self.env.line(addr);
        let done = t + wl + ll;
        let rec = Access { addr, issue: t, complete: done, walk, level };
        if self.layout.contains(addr) {
            self.profile.d2.get_or_insert(rec);
        } else {
            self.profile.d3.get_or_insert(rec);
        }
        if walk != Walk::TlbHit && t + wl < self.resolve {
            self.env.xlat.install(addr);
        }
        if done >= self.resolve {
            self.end = TransientEnd::Resolved;
            return Err(PortError::Stop);
        }
        self.env.cache.fill(addr);
        self.profile.fills.push((done, addr));
        *self.t = done;
        let mut v = 0u64;
        for i in 0..width as u64 {
            let a = addr.wrapping_add(i);
            let b = match self.buffer.get(&a) {
                Some(b) => *b,
                None if !self.enclave && self.layout.contains(a) => 0xff,
                None => self.mem.read_u8(a),
            };
            v |= (b as u64) << (8 * i);
        }
        Ok(v)
    }

    fn store(&mut self, addr: u64, width: u8, v: u64) -> Result<(), PortError> {
        if self.env.reserved(addr, width) {
            self.end = TransientEnd::Fault;
            return Err(PortError::Stop);
        }
        for i in 0..width as u64 {
            self.buffer.insert(addr.wrapping_add(i), (v >> (8 * i)) as u8);
        }
        Ok(())
    }

    fn clflush(&mut self, _addr: u64) -> Result<(), PortError> {
        Ok(())
    }
}

/// A single simulated hardware thread running enclave code, plus the shared
/// predictor and memory hierarchy the attacker manipulates.
pub struct Sim {
    pub cfg: UarchConfig,
    program: Rc<Listing>,
    layout: EnclaveLayout,
    pub mem: Memory,
    pub cache: CacheModel,
    pub xlat: TranslationModel,
    pub btb: Btb,
    pub rsb: Rsb,
    pub trace: Trace,
    /// Logical core the victim thread runs on.
    pub core: u8,
    regs: ArchRegs,
    mode: CpuMode,
    cycle: u64,
    epoch: u64,
    cssa: u32,
    ursp: u64,
    urbp: u64,
    fetch_line: Option<u64>,
    breakpoints: BTreeSet<u64>,
    interrupt_cycle: Option<u64>,
    races: Vec<RaceProfile>,
    retired: u64,
    rng: Option<ChaCha8Rng>,
}

impl Sim {
    pub fn new(program: &Listing, cfg: UarchConfig) -> Result<Sim, SimError> {
        let range = program.enclave_range.ok_or(SimError::NoEnclave)?;
        let d = &program.directives;
        let entry = program.resolve_symbol(d.entry.as_deref().unwrap_or("enclave_entry"))?;
        let ssa = d.ssa.unwrap_or(range.1 - cfg.ssa_per_tcs as u64 * SSA_FRAME_SIZE);
        let tcs = d.tcs.unwrap_or(ssa - 0x1000);
        let layout = EnclaveLayout {
            range,
            entry,
            tcs,
            ssa,
            fs_base: 0,
            gs_base: d.gsbase.unwrap_or(0),
        };
        let mut mem = Memory::new(d.fills.clone());
        for (addr, bytes) in d.data.iter().chain(&d.secrets) {
            mem.write_bytes(*addr, bytes);
        }
        let program = if cfg.countermeasures.retpoline {
            apply_retpoline(program)
        } else {
            program.clone()
        };
        let mut regs = ArchRegs::default();
        regs.set(Reg64::Rsp, UNTRUSTED_STACK);
        let rng = (cfg.jitter > 0).then(|| ChaCha8Rng::seed_from_u64(cfg.jitter_seed));
        Ok(Sim {
            btb: Btb::new(cfg.btb_index_bits),
            rsb: Rsb::new(cfg.rsb_entries),
            cfg,
            program: Rc::new(program),
            layout,
            mem,
            cache: CacheModel::default(),
            xlat: TranslationModel::default(),
            trace: Trace::default(),
            core: 0,
            regs,
            mode: CpuMode::Normal,
            cycle: 0,
            epoch: 0,
            cssa: 0,
            ursp: 0,
            urbp: 0,
            fetch_line: None,
            breakpoints: BTreeSet::new(),
            interrupt_cycle: None,
            races: Vec::new(),
            retired: 0,
            rng,
        })
    }

    pub fn program(&self) -> &Listing {
        &self.program
    }

    pub fn layout(&self) -> &EnclaveLayout {
        &self.layout
    }

    pub fn regs(&self) -> &ArchRegs {
        &self.regs
    }

    pub fn reg(&self, r: Reg64) -> u64 {
        self.regs.get(r)
    }

    pub fn set_reg(&mut self, r: Reg64, v: u64) {
        self.regs.set(r, v);
    }

    pub fn mode(&self) -> CpuMode {
        self.mode
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn cssa(&self) -> u32 {
        self.cssa
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    /// Race profiles recorded since the last call.
    pub fn take_races(&mut self) -> Vec<RaceProfile> {
        std::mem::take(&mut self.races)
    }

    fn env(&mut self) -> (Env<'_>, &mut Memory) {
        (
            Env {
                cache: &mut self.cache,
                xlat: &mut self.xlat,
                lat: self.cfg.latencies,
                rng: self.rng.as_mut(),
                jitter: self.cfg.jitter,
            },
            &mut self.mem,
        )
    }

    fn segments(&self) -> Segments {
        Segments {
            fs: self.layout.fs_base,
            gs: self.layout.gs_base,
        }
    }

    fn ibpb_on(&mut self, ev: IbpbEvent) {
        if self.cfg.countermeasures.ibpb_events.contains(&ev) {
            self.btb.clear();
            self.trace.record(TraceLevel::Events, self.cycle, "ibpb", 0, || format!("{ev:?}").to_lowercase());
        }
    }

    fn on_enclave_entry(&mut self) {
        self.mode = CpuMode::Enclave;
        self.epoch += 1;
        self.fetch_line = None;
        if self.cfg.countermeasures.rsb_refill_on_enclave_entry {
            self.rsb.refill(AEP);
        }
    }

    fn on_enclave_exit(&mut self) {
        self.mode = CpuMode::Normal;
        self.fetch_line = None;
        self.xlat.flush_range(self.layout.range.0, self.layout.range.1);
    }

    // ---- enclave transitions

    pub fn eenter(&mut self) -> Result<(), SimError> {
        if self.mode == CpuMode::Enclave {
            return Err(SimError::InEnclave);
        }
        if self.cssa >= self.cfg.ssa_per_tcs {
            return Err(SimError::NoFreeSsa(self.cssa));
        }
        self.ursp = self.regs.get(Reg64::Rsp);
        self.urbp = self.regs.get(Reg64::Rbp);
        self.regs.set(Reg64::Rax, self.cssa as u64);
        self.regs.set(Reg64::Rcx, AEP);
        self.regs.rip = self.layout.entry;
        self.on_enclave_entry();
        self.ibpb_on(IbpbEvent::Eenter);
        let cssa = self.cssa;
        self.trace.record(TraceLevel::Events, self.cycle, "eenter", self.layout.entry, || format!("cssa={cssa}"));
        Ok(())
    }

    pub fn eresume(&mut self) -> Result<(), SimError> {
        if self.mode == CpuMode::Enclave {
            return Err(SimError::InEnclave);
        }
        if self.cssa == 0 {
            return Err(SimError::NoSavedFrame);
        }
        self.cssa -= 1;
        let g = self.layout.gprsgx(self.cssa);
        let mut regs = ArchRegs::default();
        for (i, r) in GPRSGX_REGS.iter().enumerate() {
            regs.set(*r, self.mem.read(g + 8 * i as u64, 8));
        }
        regs.flags = self.mem.read(g + gprsgx::RFLAGS, 8);
        regs.rip = self.mem.read(g + gprsgx::RIP, 8);
        self.regs = regs;
        self.on_enclave_entry();
        self.ibpb_on(IbpbEvent::Eresume);
        let cssa = self.cssa;
        self.trace.record(TraceLevel::Events, self.cycle, "eresume", regs.rip, || format!("cssa={cssa}"));
        Ok(())
    }

    fn eexit(&mut self, target: u64) {
        self.on_enclave_exit();
        self.regs.rip = target;
        self.ibpb_on(IbpbEvent::Eexit);
        self.trace.record(TraceLevel::Events, self.cycle, "eexit", target, String::new);
    }

    fn aex(&mut self, cause: AexCause) {
        let g = self.layout.gprsgx(self.cssa);
        let r = self.regs;
        self.mem.write(g - 4, 4, 0);
        for (i, reg) in GPRSGX_REGS.iter().enumerate() {
            self.mem.write(g + 8 * i as u64, 8, r.get(*reg));
        }
        let exitinfo = match cause {
            AexCause::PageFault(_) => 0x8000_030e,
            AexCause::Interrupt => 0,
        };
        self.mem.write(g + gprsgx::RFLAGS, 8, r.flags);
        self.mem.write(g + gprsgx::RIP, 8, r.rip);
        self.mem.write(g + gprsgx::URSP, 8, self.ursp);
        self.mem.write(g + gprsgx::URBP, 8, self.urbp);
        self.mem.write(g + gprsgx::EXITINFO, 4, exitinfo);
        self.mem.write(g + gprsgx::RESERVED, 4, 0);
        self.mem.write(g + gprsgx::FSBASE, 8, self.layout.fs_base);
        self.mem.write(g + gprsgx::GSBASE, 8, self.layout.gs_base);
        let mut a = line_of(g - 4);
        while a < g + GPRSGX_SIZE as u64 {
            self.cache.fill(a);
            a += 64;
        }
        self.cssa += 1;
        let mut n = ArchRegs::default();
        n.set(Reg64::Rax, 3);
        n.set(Reg64::Rbx, self.layout.tcs);
        n.set(Reg64::Rcx, AEP);
        n.set(Reg64::Rsp, self.ursp);
        n.set(Reg64::Rbp, self.urbp);
        n.rip = AEP;
        self.regs = n;
        self.on_enclave_exit();
        self.ibpb_on(IbpbEvent::Aex);
        self.trace.record(TraceLevel::Events, self.cycle, "aex", r.rip, || match cause {
            AexCause::PageFault(a) => format!("page-fault addr={a:#x}"),
            AexCause::Interrupt => "interrupt".to_string(),
        });
    }

    /// Take an interrupt just before the enclave executes `addr`.
    pub fn interrupt_at(&mut self, addr: u64) {
        self.breakpoints.insert(addr);
    }

    /// Take an interrupt at the first enclave instruction dispatched at or
    /// after `cycle`.
    pub fn interrupt_at_cycle(&mut self, cycle: u64) {
        self.interrupt_cycle = Some(cycle);
    }

    // ---- attacker primitives

    /// Train the BTB from attacker code on `core`.
    pub fn poison(&mut self, src: u64, dst: u64, reps: u32, core: u8) {
        for _ in 0..reps.max(1) {
            self.btb.update(src, dst, core, false, self.epoch);
        }
        self.trace.record(TraceLevel::Events, self.cycle, "poison", src, || format!("target={dst:#x} core={core}"));
    }

    pub fn deplete_rsb(&mut self) {
        self.rsb.clear();
    }

    pub fn ibpb(&mut self) {
        self.btb.clear();
    }

    /// Touch `count` congruent lines so `addr`'s line leaves every level.
    pub fn evict(&mut self, addr: u64, count: u32) {
        let stride = self.cache.congruence_stride();
        let off = line_of(addr) % stride;
        for i in 0..count as u64 {
            self.cache.fill(EVICTION_BASE + off + i * stride);
        }
    }

    pub fn flush_pte(&mut self, addr: u64) {
        self.xlat.flush_pte(addr);
    }

    pub fn set_reserved(&mut self, addr: u64, on: bool) {
        self.xlat.set_reserved(addr, on);
    }

    /// Attacker clflush; the attacker's own translation stays warm.
    pub fn clflush(&mut self, addr: u64) {
        self.cache.flush(addr);
        self.xlat.install(addr);
    }

    /// Attacker load: returns its latency and leaves the line cached.
    pub fn timed_access(&mut self, addr: u64) -> u64 {
        let (mut env, _) = self.env();
        let (_, wl) = env.walk(addr);
        let (_, ll) = env.line(addr);
        env.xlat.install(addr);
        env.cache.fill(addr);
        wl + ll
    }

    pub fn preload(&mut self, addr: u64) {
        self.xlat.install(addr);
        self.cache.fill(addr);
    }

    // ---- execution

    pub fn run(&mut self, budget: u64) -> Stop {
        let limit = self.cycle.saturating_add(budget);
        while self.cycle < limit {
            if let Some(s) = self.step() {
                return s;
            }
        }
        Stop::Budget
    }

    fn predict(&mut self, addr: u64, kind: BranchKind) -> Option<u64> {
        let cm = &self.cfg.countermeasures;
        let mut ctx = LookupCtx {
            core: self.core,
            enclave: self.mode == CpuMode::Enclave,
            ibrs: cm.ibrs,
            min_epoch: self.epoch,
            stibp: cm.stibp,
            exact_source: None,
        };
        match kind {
            BranchKind::Return => match self.rsb.pop() {
                Some(a) => Some(a),
                None if self.cfg.cpu.rsb_fallback() => {
                    if self.cfg.ret_poison_requires_exact_match {
                        ctx.exact_source = Some(addr);
                    }
                    self.btb.predict(addr, &ctx)
                }
                None => None,
            },
            _ => self.btb.predict(addr, &ctx),
        }
    }

    /// Execute one instruction; `Some` when execution has to stop.
    pub fn step(&mut self) -> Option<Stop> {
        let rip = self.regs.rip;
        let enclave = self.mode == CpuMode::Enclave;
        let timer = self.interrupt_cycle.is_some_and(|c| self.cycle >= c);
        if enclave && (timer || self.breakpoints.remove(&rip)) {
            if timer {
                self.interrupt_cycle = None;
            }
            self.aex(AexCause::Interrupt);
            return Some(Stop::Interrupted { rip });
        }
        let program = self.program.clone();
        let Some(ins) = program.at(rip) else {
            return Some(Stop::Halted { rip, why: Halt::OutsideListing });
        };
        if enclave && !self.layout.contains(rip) {
            return Some(Stop::Halted { rip, why: Halt::OutsideEnclave });
        }
        if self.xlat.is_reserved(rip) {
            self.aex(AexCause::PageFault(rip));
            return Some(Stop::Fault { addr: rip, rip });
        }
        if self.fetch_line != Some(line_of(rip)) {
            let (mut env, _) = self.env();
            let (_, wl) = env.walk(rip);
            let (_, ll) = env.line(rip);
            env.xlat.install(rip);
            env.cache.fill(rip);
            self.cycle += wl + ll;
            self.fetch_line = Some(line_of(rip));
        }
        let t0 = self.cycle;
        let next = program.fallthrough(rip);
        let mut regs = self.regs;
        let seg = self.segments();
        let layout = self.layout;
        let defer = ins.class.is_indirect_branch();
        let (res, accesses, deferred) = {
            let (env, mem) = self.env();
            let mut port = ArchPort {
                env,
                mem,
                layout,
                enclave,
                defer,
                deferred: Vec::new(),
                accesses: Vec::new(),
            };
            let r = execute(ins, next, &mut regs, &mut port, &seg);
            (r, port.accesses, port.deferred)
        };
        let flow = match res {
            Ok(f) => f,
            Err(e) => {
                let addr = match e {
                    PortError::Fault(a) => a,
                    PortError::Stop => rip,
                };
                self.aex(AexCause::PageFault(addr));
                return Some(Stop::Fault { addr, rip });
            }
        };
        self.trace.record(TraceLevel::Full, t0, "retire", rip, || ins.to_string());
        let total: u64 = accesses.iter().map(|a| a.0).sum();
        self.cycle = t0 + 1 + total;
        self.retired += 1;
        match flow {
            Flow::Branch { kind, target } => {
                if kind.is_indirect() {
                    let first = accesses.iter().find(|a| a.1);
                    let d1 = first.map_or(0, |a| a.0);
                    let d1_access = first.map(|&(l, _, (addr, walk, level))| Access {
                        addr,
                        issue: t0,
                        complete: t0 + l,
                        walk,
                        level,
                    });
                    let resolve = t0 + d1;
                    let predicted = self.predict(rip, kind);
                    self.trace.record(TraceLevel::Events, t0, "predict", rip, || match predicted {
                        Some(p) => format!("predicted={p:#x} actual={target:#x} resolve=+{d1}"),
                        None => format!("none actual={target:#x} resolve=+{d1}"),
                    });
                    if let Some(p) = predicted {
                        if p != target && self.cfg.speculate {
                            let mut prof = self.transient(p, regs, t0, resolve, rip, target);
                            prof.d1 = d1_access;
                            self.races.push(prof);
                        }
                    }
                    if predicted != Some(target) {
                        self.trace.record(TraceLevel::Events, self.cycle, "retire", rip, || {
                            format!("target={target:#x}")
                        });
                    }
                    for a in deferred {
                        self.xlat.install(a);
                        self.cache.fill(a);
                    }
                    self.btb.update(rip, target, self.core, enclave, self.epoch);
                }
                if matches!(kind, BranchKind::Call | BranchKind::IndirectCall) && target != next {
                    self.rsb.push(next);
                }
                regs.rip = target;
                self.regs = regs;
            }
            Flow::Enclu => {
                self.regs = regs;
                self.regs.rip = next;
                let leaf = regs.get(Reg64::Rax);
                if !enclave || leaf != 4 {
                    return Some(Stop::Halted { rip, why: Halt::UnknownLeaf(leaf) });
                }
                let target = regs.get(Reg64::Rbx);
                self.eexit(target);
                return Some(Stop::Exited { target });
            }
            Flow::Next | Flow::Fence | Flow::Unsupported => {
                regs.rip = next;
                self.regs = regs;
            }
        }
        None
    }

    fn transient(&mut self, start: u64, regs: ArchRegs, t0: u64, resolve: u64, branch: u64, actual: u64) -> RaceProfile {
        let mut prof = RaceProfile {
            branch,
            predicted: start,
            actual,
            dispatch: t0,
            d1: None,
            resolve,
            i1: None,
            d2: None,
            d3: None,
            executed: 0,
            end: TransientEnd::DepthLimit,
            fills: Vec::new(),
        };
        let program = self.program.clone();
        let layout = self.layout;
        let enclave = self.mode == CpuMode::Enclave;
        let seg = self.segments();
        let mut shadow = regs;
        shadow.rip = start;
        let mut buffer = HashMap::new();
        let mut t = t0 + 1;
        let mut line = None;
        for _ in 0..self.cfg.speculation_depth {
            if t >= resolve {
                prof.end = TransientEnd::Resolved;
                break;
            }
            let pc = shadow.rip;
            let Some(ins) = program.at(pc) else {
                prof.end = TransientEnd::OutsideListing;
                break;
            };
            if enclave && !layout.contains(pc) {
                prof.end = TransientEnd::OutsideListing;
                break;
            }
            if line != Some(line_of(pc)) {
                if self.xlat.is_reserved(pc) {
                    prof.end = TransientEnd::Fault;
                    break;
                }
                let (mut env, _) = self.env();
                let (walk, wl) = env.walk(pc);
                let (level, ll) = env.line(pc);
                let done = t + wl + ll;
                prof.i1.get_or_insert(Access { addr: pc, issue: t, complete: done, walk, level });
                if walk != Walk::TlbHit && t + wl < resolve {
                    env.xlat.install(pc);
                }
                if done >= resolve {
                    prof.end = TransientEnd::Resolved;
                    break;
                }
                env.cache.fill(pc);
                t = done;
                line = Some(line_of(pc));
            }
            let stop = match ins.class {
                InstrClass::Serialize => Some(TransientEnd::Fence),
                InstrClass::Enclu => Some(TransientEnd::Enclu),
                InstrClass::Unsupported => Some(TransientEnd::Unsupported),
                c if c.is_indirect_branch() => Some(TransientEnd::NestedIndirect),
                _ => None,
            };
            if let Some(e) = stop {
                prof.end = e;
                break;
            }
            self.trace.record(TraceLevel::Full, t, "transient", pc, || ins.to_string());
            let next = program.fallthrough(pc);
            let (res, end) = {
                let (env, mem) = self.env();
                let mut port = SpecPort {
                    env,
                    mem,
                    layout,
                    enclave,
                    buffer: &mut buffer,
                    t: &mut t,
                    resolve,
                    profile: &mut prof,
                    end: TransientEnd::Resolved,
                };
                let r = execute(ins, next, &mut shadow, &mut port, &seg);
                (r, port.end)
            };
            match res {
                Ok(flow) => {
                    shadow.rip = match flow {
                        Flow::Branch { target, .. } => target,
                        _ => next,
                    };
                    prof.executed += 1;
                    t += 1;
                }
                Err(_) => {
                    prof.end = end;
                    break;
                }
            }
        }
        for &(c, a) in &prof.fills {
            self.trace.record(TraceLevel::Events, c, "fill", a, || "transient".to_string());
        }
        let (executed, end) = (prof.executed, prof.end);
        self.trace.record(TraceLevel::Events, resolve, "squash", branch, || {
            format!("from={start:#x} executed={executed} end={end:?}")
        });
        prof
    }
}
