//! `btilab`: gadget scanning, attack simulation, demos and countermeasure
//! evaluation from the command line.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use btilab::asmparse::{parse_listing, Listing};
use btilab::harness::{
    countermeasure_matrix, default_matrix, key_demo, parse_scenario, read_ssa_registers, run_scenario_traced,
    ssa_demo, steal_key_demo, two_byte_demo, AttackResult, HarnessError, MatrixRow, Scenario,
};
use btilab::scan::{scan_type1, scan_type2, GadgetReport, ReportFormat};
use btilab::symex::Mode;
use btilab::uarch::{CpuModel, IbpbEvent, TraceLevel, UarchConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::{read, FileConfig};

const LATENCY_KEYS: [&str; 6] = ["l1", "l2", "llc", "memory", "cached-walk", "memory-walk"];

#[derive(Parser)]
#[command(name = "btilab", version, about = "Enclave gadget scanner and branch-target-injection simulator")]
struct Cli {
    /// TOML config file ([entry], [explore], [scan2], [uarch] tables).
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the main output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    #[value(alias = "structured")]
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Type-I scan: indirect branches reached with attacker-controlled registers.
    Scan(ScanArgs),
    /// Type-II scan: a load whose result feeds a nearby memory access.
    Scan2(Scan2Args),
    /// Run an attack scenario against a simulator program.
    Simulate(SimulateArgs),
    /// Read a parked thread's saved registers out of its SSA frame.
    DemoSsa(DemoArgs),
    /// Extract a key the victim copies to its stack.
    DemoKey(KeyArgs),
    /// Run a scenario once per countermeasure configuration.
    EvalMitigations(EvalArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ecall,
    Oret,
    Both,
}

#[derive(Args)]
struct ScanArgs {
    listing: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    /// Start exploration at this symbol instead of the entry point.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    entry: Option<String>,
    #[arg(long)]
    max_states: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    loop_bound: Option<u32>,
    /// Exit with status 1 if any gadget is found.
    #[arg(long)]
    expect_clean: bool,
}

#[derive(Args)]
struct Scan2Args {
    listing: PathBuf,
    /// Maximum instructions from the first load to the dependent access.
    #[arg(long)]
    window: Option<usize>,
    /// Only report gadgets with a third register in the second access.
    #[arg(long = "require-regC", alias = "require-regc")]
    require_regc: bool,
    #[arg(long)]
    expect_clean: bool,
}

#[derive(Args, Default)]
struct SimFlags {
    #[arg(long)]
    cpu: Option<CpuModel>,
    /// Latency override, `key=cycles` (l1, l2, llc, memory, cached-walk, memory-walk).
    #[arg(long = "latency", value_name = "KEY=CYCLES")]
    latencies: Vec<String>,
    /// TOML file of latency overrides.
    #[arg(long)]
    latency_config: Option<PathBuf>,
    #[arg(long)]
    ibrs: bool,
    #[arg(long)]
    stibp: bool,
    #[arg(long)]
    retpoline: bool,
    /// Issue IBPB at this transition (eenter, eresume, eexit, aex); repeatable.
    #[arg(long, value_enum)]
    ibpb: Vec<IbpbArg>,
    #[arg(long)]
    rsb_refill: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum IbpbArg {
    Eenter,
    Eresume,
    Eexit,
    Aex,
}

impl From<IbpbArg> for IbpbEvent {
    fn from(a: IbpbArg) -> Self {
        match a {
            IbpbArg::Eenter => IbpbEvent::Eenter,
            IbpbArg::Eresume => IbpbEvent::Eresume,
            IbpbArg::Eexit => IbpbEvent::Eexit,
            IbpbArg::Aex => IbpbEvent::Aex,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceArg {
    Off,
    Events,
    Full,
}

#[derive(Args)]
struct SimulateArgs {
    program: PathBuf,
    scenario: PathBuf,
    #[command(flatten)]
    flags: SimFlags,
    /// Write the event trace to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TraceArg::Events)]
    trace_level: TraceArg,
}

#[derive(Args)]
struct DemoArgs {
    /// Derive the victim's secret from this seed instead of the built-in one.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    flags: SimFlags,
}

#[derive(Args)]
struct KeyArgs {
    #[command(flatten)]
    demo: DemoArgs,
    /// Victim wipes its stack copy before the vulnerable call.
    #[arg(long)]
    zeroized: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Program and scenario; the two-byte demo when omitted.
    #[arg(num_args = 2, value_names = ["PROGRAM", "SCENARIO"])]
    inputs: Vec<PathBuf>,
    /// `default` or a TOML file of `[[cell]]` tables.
    #[arg(long, default_value = "default")]
    matrix: String,
}

enum Failure {
    Usage(String),
    Limit(String),
}

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure::Usage(s)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Budget(_) | HarnessError::FaultLoop(_) => Failure::Limit(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

/// Successful command output plus the exit status it warrants.
struct Outcome {
    text: String,
    code: u8,
    note: Option<String>,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, code: 0, note: None }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(out) => {
            if let Some(n) = &out.note {
                eprintln!("btilab: {n}");
            }
            match &cli.output {
                Some(p) => {
                    if let Err(e) = std::fs::write(p, &out.text) {
                        eprintln!("btilab: {}: {e}", p.display());
                        return ExitCode::from(2);
                    }
                }
                None => print!("{}", out.text),
            }
            ExitCode::from(out.code)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("btilab: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Limit(m)) => {
            eprintln!("btilab: limit hit: {m}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome, Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Scan(a) => cmd_scan(a, file, cli.format),
        Command::Scan2(a) => cmd_scan2(a, file, cli.format),
        Command::Simulate(a) => cmd_simulate(a, file, cli.format),
        Command::DemoSsa(a) => cmd_demo_ssa(a, file, cli.format),
        Command::DemoKey(a) => cmd_demo_key(a, file, cli.format),
        Command::EvalMitigations(a) => cmd_eval(a, file, cli.format),
    }
}

fn load_listing(path: &Path) -> Result<Listing, String> {
    parse_listing(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    parse_scenario(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn corpus_id(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn report_format(f: Format) -> ReportFormat {
    match f {
        Format::Text => ReportFormat::Text,
        Format::Json => ReportFormat::Structured,
    }
}

fn cmd_scan(a: &ScanArgs, file: FileConfig, format: Format) -> Result<Outcome, Failure> {
    let listing = load_listing(&a.listing)?;
    let mut em = file.entry;
    let mut xcfg = file.explore;
    if let Some(e) = &a.entry {
        em.entry_symbol = e.clone();
    }
    if let Some(n) = a.max_states {
        xcfg.max_states = n;
    }
    if let Some(n) = a.max_steps {
        xcfg.max_steps = n;
    }
    if let Some(n) = a.loop_bound {
        xcfg.loop_bound = n;
    }
    xcfg.validate().map_err(|e| e.to_string())?;

    let mut gadgets = Vec::new();
    let mut limit = false;
    let mut note = None;
    if !listing.instructions.is_empty() {
        let modes = match a.mode {
            ModeArg::Ecall => vec![Mode::ECall],
            ModeArg::Oret => vec![Mode::ORet],
            ModeArg::Both => vec![Mode::ECall, Mode::ORet],
        };
        for mode in modes {
            // Without an OCALL stub there is no ORet path to explore.
            if mode == Mode::ORet
                && a.mode == ModeArg::Both
                && a.start.is_none()
                && listing.resolve_symbol(&em.ocall_symbol).is_err()
            {
                note = Some(format!("no `{}` symbol; ORet scan skipped", em.ocall_symbol));
                continue;
            }
            let scan = scan_type1(&listing, &em, mode, a.start.as_deref(), &xcfg)
                .map_err(|e| format!("{}: {e}", a.listing.display()))?;
            limit |= scan.summary.limit_hit;
            gadgets.extend(scan.gadgets);
        }
    }
    let report = GadgetReport::new(&corpus_id(&a.listing), gadgets, Vec::new());
    let mut out = Outcome::ok(report.emit(report_format(format)));
    out.note = note;
    if a.expect_clean && !report.is_empty() {
        out.code = 1;
    } else if limit {
        out.code = 3;
        out.note = Some(format!("exploration stopped at max-states = {}; report is partial", xcfg.max_states));
    }
    Ok(out)
}

fn cmd_scan2(a: &Scan2Args, file: FileConfig, format: Format) -> Result<Outcome, Failure> {
    let listing = load_listing(&a.listing)?;
    let mut cfg = file.scan2;
    if let Some(w) = a.window {
        cfg.window = w;
    }
    cfg.require_regc |= a.require_regc;
    let gadgets = scan_type2(&listing, &cfg).map_err(|e| format!("{}: {e}", a.listing.display()))?;
    let report = GadgetReport::new(&corpus_id(&a.listing), Vec::new(), gadgets);
    let mut out = Outcome::ok(report.emit(report_format(format)));
    if a.expect_clean && !report.is_empty() {
        out.code = 1;
    }
    Ok(out)
}

/// Overlay command-line simulator flags on a scenario, so that they win over
/// both the config file and the scenario's own directives.
fn apply_flags(sc: &mut Scenario, f: &SimFlags) -> Result<(), String> {
    if let Some(cpu) = f.cpu {
        sc.cpu = Some(cpu);
    }
    if let Some(p) = &f.latency_config {
        let table: toml::Table = toml::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
        for (k, v) in table {
            let v = v.as_integer().filter(|v| *v >= 0).ok_or_else(|| format!("{}: `{k}` must be a cycle count", p.display()))?;
            sc.latencies.push((latency_key(&k)?, v as u64));
        }
    }
    for kv in &f.latencies {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("--latency `{kv}`: expected KEY=CYCLES"))?;
        let v: u64 = v.trim().parse().map_err(|_| format!("--latency `{kv}`: bad cycle count"))?;
        sc.latencies.push((latency_key(k.trim())?, v));
    }
    let c = &mut sc.countermeasures;
    c.ibrs |= f.ibrs;
    c.stibp |= f.stibp;
    c.retpoline |= f.retpoline;
    c.rsb_refill_on_enclave_entry |= f.rsb_refill;
    for e in &f.ibpb {
        let e = IbpbEvent::from(*e);
        if !c.ibpb_events.contains(&e) {
            c.ibpb_events.push(e);
        }
    }
    Ok(())
}

fn latency_key(k: &str) -> Result<String, String> {
    let k = k.replace('_', "-");
    if LATENCY_KEYS.contains(&k.as_str()) {
        Ok(k)
    } else {
        Err(format!("unknown latency `{k}` (expected one of {})", LATENCY_KEYS.join(", ")))
    }
}

fn hex_bytes(b: &[Option<u8>]) -> String {
    b.iter().map(|b| b.map_or("??".into(), |b| format!("{b:02x}"))).collect::<Vec<_>>().join(" ")
}

fn result_text(r: &AttackResult, expect: Option<bool>) -> String {
    let mut s = String::new();
    writeln!(s, "start: {:#x}", r.start).unwrap();
    writeln!(s, "recovered: {}", hex_bytes(&r.recovered)).unwrap();
    writeln!(s, "truth: {}", r.truth_hex()).unwrap();
    writeln!(s, "success-rate: {}", r.success_rate).unwrap();
    writeln!(s, "attempts: {}", r.attempts.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")).unwrap();
    writeln!(s, "squashes: {}", r.squashes).unwrap();
    writeln!(s, "cycles: {}", r.cycles).unwrap();
    if let Some(m) = expect {
        writeln!(s, "expect: {}", if m { "met" } else { "not met" }).unwrap();
    }
    s
}

fn result_json(r: &AttackResult, expect: Option<bool>) -> serde_json::Value {
    let mut v = serde_json::to_value(r).expect("result serializes");
    v["expect_met"] = json!(expect);
    v
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn run(program: &Listing, sc: &Scenario, base: &UarchConfig, level: TraceLevel) -> Result<AttackResult, Failure> {
    Ok(run_scenario_traced(program, sc, &sc.configure(base), level)?)
}

fn cmd_simulate(a: &SimulateArgs, file: FileConfig, format: Format) -> Result<Outcome, Failure> {
    let program = load_listing(&a.program)?;
    let mut sc = load_scenario(&a.scenario)?;
    apply_flags(&mut sc, &a.flags)?;
    let level = match (a.trace.is_some(), a.trace_level) {
        (false, _) | (_, TraceArg::Off) => TraceLevel::Off,
        (true, TraceArg::Events) => TraceLevel::Events,
        (true, TraceArg::Full) => TraceLevel::Full,
    };
    let r = run(&program, &sc, &file.uarch, level)?;
    if let Some(p) = &a.trace {
        std::fs::write(p, r.trace.render()).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    let expect = r.meets(&sc.expect);
    Ok(Outcome::ok(match format {
        Format::Text => result_text(&r, expect),
        Format::Json => pretty(&result_json(&r, expect)),
    }))
}

fn cmd_demo_ssa(a: &DemoArgs, file: FileConfig, format: Format) -> Result<Outcome, Failure> {
    let (program, mut sc) = ssa_demo(a.seed);
    apply_flags(&mut sc, &a.flags)?;
    let snap = read_ssa_registers(&program, &sc, &sc.configure(&file.uarch))?;
    let expect = snap.result.meets(&sc.expect);
    Ok(Outcome::ok(match format {
        Format::Text => {
            let mut s = String::new();
            for (name, v) in &snap.fields {
                match v {
                    Some(v) => writeln!(s, "{name}: {v:#018x}").unwrap(),
                    None => writeln!(s, "{name}: unknown").unwrap(),
                }
            }
            s.push_str(&result_text(&snap.result, expect));
            s
        }
        Format::Json => {
            let fields: serde_json::Map<String, serde_json::Value> =
                snap.fields.iter().map(|(n, v)| (n.clone(), json!(v))).collect();
            pretty(&json!({ "registers": fields, "result": result_json(&snap.result, expect) }))
        }
    }))
}

fn cmd_demo_key(a: &KeyArgs, file: FileConfig, format: Format) -> Result<Outcome, Failure> {
    let (program, mut sc) = key_demo(a.demo.seed, a.zeroized);
    apply_flags(&mut sc, &a.demo.flags)?;
    let r = steal_key_demo(&program, &sc, &sc.configure(&file.uarch))?;
    let expect = r.meets(&sc.expect);
    Ok(Outcome::ok(match format {
        Format::Text => result_text(&r, expect),
        Format::Json => pretty(&result_json(&r, expect)),
    }))
}

fn cmd_eval(a: &EvalArgs, file: FileConfig, format: Format) -> Result<Outcome, Failure> {
    let (program, sc) = match a.inputs.as_slice() {
        [] => two_byte_demo(),
        [p, s] => (load_listing(p)?, load_scenario(s)?),
        _ => return Err(Failure::Usage("expected PROGRAM and SCENARIO".into())),
    };
    let cells = if a.matrix == "default" {
        default_matrix()
    } else {
        let p = Path::new(&a.matrix);
        config::matrix_from_toml(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?
    };
    let rows = countermeasure_matrix(&program, &sc, &file.uarch, &cells)?;
    Ok(Outcome::ok(match format {
        Format::Text => matrix_text(&rows),
        Format::Json => pretty(&serde_json::to_value(&rows).expect("rows serialize")),
    }))
}

fn matrix_text(rows: &[MatrixRow]) -> String {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:w$} | success-rate | recovered\n", "cell");
    for r in rows {
        writeln!(s, "{:w$} | {:<12} | {}", r.name, r.success_rate, r.recovered).unwrap();
    }
    s
}
