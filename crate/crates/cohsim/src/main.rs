//! Command-line driver: single runs, baseline-vs-priority comparisons,
//! synthetic trace generation, exhaustive protocol checking, and flit-log
//! latency audits.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 simulation
//! abort (deadlock or protocol failure), 3 checker-found violation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use cohsim::checker::{self, CheckOptions};
use cohsim::config::SystemConfig;
use cohsim::metrics::{compare, Report, Stat};
use cohsim::phase::{decode_tag, OuterPhase};
use cohsim::protocol::Mutation;
use cohsim::sim::{self, SimError};
use cohsim::types::Mode;
use cohsim::workload::{format_trace, generate, parse_trace, GenParams, Pattern, TraceOp};

#[derive(Parser)]
#[command(
    name = "cohsim",
    version,
    about = "Cycle-driven simulator of a 16-core mesh multiprocessor with \
             directory coherence and phase-priority arbitration"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one trace and write a stats report.
    Run(RunArgs),
    /// Run the same trace under baseline and priority arbitration and
    /// report the deltas.
    Compare(CompareArgs),
    /// Generate a synthetic trace file.
    GenTrace(GenTraceArgs),
    /// Exhaustively explore a small model of the protocol and verify the
    /// ownership, data-value, and phase-numbering properties.
    Check(CheckArgs),
    /// Summarize in-network latencies from a flit log (read-only).
    Replay(ReplayArgs),
}

/// Every configuration field can be set from the command line; flags
/// override values loaded from `--config`.
#[derive(Args, Clone, Default)]
struct ConfigOverrides {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long)]
    mesh_x: Option<usize>,
    #[arg(long)]
    mesh_y: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    l1_size: Option<usize>,
    #[arg(long)]
    l1_assoc: Option<usize>,
    #[arg(long)]
    l1_latency: Option<u32>,
    #[arg(long)]
    l1_mshrs: Option<usize>,
    #[arg(long)]
    l2_size: Option<usize>,
    #[arg(long)]
    l2_assoc: Option<usize>,
    #[arg(long)]
    l2_latency: Option<u32>,
    #[arg(long)]
    vcs: Option<usize>,
    #[arg(long)]
    vc_depth: Option<usize>,
    #[arg(long)]
    flit_bits: Option<usize>,
    #[arg(long)]
    router_pipeline: Option<u32>,
    #[arg(long)]
    link_latency: Option<u32>,
    #[arg(long)]
    mem_controllers: Option<usize>,
    #[arg(long)]
    mem_latency: Option<u32>,
    #[arg(long)]
    starvation_threshold: Option<u32>,
    #[arg(long)]
    inner_buffer_entries: Option<usize>,
    #[arg(long)]
    drain_limit: Option<u64>,
    /// Arbitration mode: baseline | ppb.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    e_link: Option<f64>,
    #[arg(long)]
    e_buf_write: Option<f64>,
    #[arg(long)]
    e_buf_read: Option<f64>,
    #[arg(long)]
    e_arb: Option<f64>,
    #[arg(long)]
    e_xbar: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Trace file, one reference per line: "tick core R|W 0xADDR".
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
    /// Report stem: writes <STEM>.json and <STEM>.csv.
    #[arg(long, value_name = "STEM")]
    out: Option<PathBuf>,
    /// Write one line per delivered message for `replay`.
    #[arg(long, value_name = "PATH")]
    flit_log: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct CompareArgs {
    /// Trace file fed identically to both runs.
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
    /// Output path for the comparison report (JSON).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct GenTraceArgs {
    /// uniform | hotspot | producer_consumer | private.
    #[arg(long, default_value = "uniform")]
    pattern: String,
    /// Total references across all cores.
    #[arg(long, default_value_t = 10_000)]
    refs: usize,
    #[arg(long, default_value_t = 16)]
    cores: usize,
    #[arg(long, default_value_t = 64)]
    block_size: u64,
    /// Footprint in blocks.
    #[arg(long, default_value_t = 4096)]
    blocks: u64,
    /// Size of the shared hot set (hotspot pattern).
    #[arg(long, default_value_t = 64)]
    hot_blocks: u64,
    /// Fraction of references aimed at the hot set.
    #[arg(long, default_value_t = 0.3)]
    hot_frac: f64,
    /// Fraction of references that are stores.
    #[arg(long, default_value_t = 0.3)]
    write_frac: f64,
    /// Mean issue gap in ticks between one core's references.
    #[arg(long, default_value_t = 4)]
    gap: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Number of cores in the small model (exhaustive bound: 4).
    #[arg(long, default_value_t = 2)]
    cores: usize,
    /// Number of blocks (exhaustive bound: 3).
    #[arg(long, default_value_t = 2)]
    blocks: u64,
    /// Ops per core in the generated program (exhaustive bound: 4).
    #[arg(long, default_value_t = 2)]
    ops: usize,
    /// Arbitration mode: baseline | ppb.
    #[arg(long, default_value = "baseline")]
    mode: String,
    /// Abort exploration beyond this many distinct states.
    #[arg(long, default_value_t = 50_000_000)]
    max_states: u64,
    /// Inject a fault (drop invalidations that race a read fill) into a
    /// fixed four-core, one-block model and prove the checker reports it;
    /// the size flags above are ignored.
    #[arg(long)]
    drop_inv: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Flit log produced by `run --flit-log`.
    #[arg(long, value_name = "PATH")]
    log: PathBuf,
}

struct CliError {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: 1,
        msg: msg.into(),
    }
}

fn sim_error(e: SimError) -> CliError {
    let code = match e {
        SimError::BadCore { .. } => 1,
        _ => 2,
    };
    CliError {
        code,
        msg: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::GenTrace(a) => cmd_gen_trace(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn build_config(o: &ConfigOverrides) -> Result<SystemConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => SystemConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => SystemConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),+ $(,)?) => {
            $( if let Some(v) = o.$field { cfg.$field = v; } )+
        };
    }
    apply!(
        cores,
        mesh_x,
        mesh_y,
        block_size,
        l1_size,
        l1_assoc,
        l1_latency,
        l1_mshrs,
        l2_size,
        l2_assoc,
        l2_latency,
        vcs,
        vc_depth,
        flit_bits,
        router_pipeline,
        link_latency,
        mem_controllers,
        mem_latency,
        starvation_threshold,
        inner_buffer_entries,
        drain_limit,
        seed,
        e_link,
        e_buf_write,
        e_buf_read,
        e_arb,
        e_xbar,
    );
    if let Some(m) = &o.mode {
        cfg.mode = Mode::from_str(m).map_err(usage)?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_trace(path: &PathBuf) -> Result<Vec<TraceOp>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read trace {}: {e}", path.display())))?;
    parse_trace(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let cfg = build_config(&a.overrides)?;
    let trace = load_trace(&a.trace)?;
    let report = if let Some(log_path) = &a.flit_log {
        let (report, log) = sim::run_logged(&cfg, &trace).map_err(sim_error)?;
        let mut text = String::new();
        for rec in &log {
            let _ = writeln!(text, "{rec}");
        }
        write_file(log_path, &text)?;
        report
    } else {
        sim::run(&cfg, &trace).map_err(sim_error)?
    };
    if let Some(stem) = &a.out {
        let mut json = stem.clone();
        json.set_extension("json");
        let mut csv = stem.clone();
        csv.set_extension("csv");
        write_file(&json, &report.to_json())?;
        write_file(&csv, &report.write_csv())?;
    }
    print!("{}", summarize(&report));
    Ok(())
}

fn summarize(r: &Report) -> String {
    let mut s = String::new();
    let mean = |st: &Stat| st.mean().map_or("n/a".into(), |m| format!("{m:.1}"));
    let _ = writeln!(
        s,
        "mode={} cycles={} ops={} (loads {}, stores {}) hits={} misses={} evictions={}",
        r.mode, r.cycles, r.ops_issued, r.loads, r.stores, r.l1_hits, r.l1_misses, r.evictions
    );
    let _ = writeln!(
        s,
        "txns={} latency mean={} max={} | l2_stalls={} unnecessary_transients={}",
        r.txns_completed,
        mean(&r.txn_latency),
        r.txn_latency.max,
        r.l2_stalls,
        r.unnecessary_transients
    );
    let _ = writeln!(
        s,
        "noc: msgs={} flits={}/{} zero_hop={} max_arb_wait={} peak_link_util={:.3}",
        r.msgs_delivered,
        r.flits_injected,
        r.flits_ejected,
        r.zero_hop_msgs,
        r.max_arb_wait,
        r.peak_link_utilization
    );
    for (class, st) in &r.noc_by_class {
        let _ = writeln!(
            s,
            "  class {class}: n={} delay mean={} max={}",
            st.count,
            mean(st),
            st.max
        );
    }
    let _ = writeln!(s, "energy total={:.1}", r.energy.total);
    s
}

fn cmd_compare(a: CompareArgs) -> Result<(), CliError> {
    let mut cfg = build_config(&a.overrides)?;
    let trace = load_trace(&a.trace)?;
    cfg.mode = Mode::Baseline;
    let base = sim::run(&cfg, &trace).map_err(sim_error)?;
    cfg.mode = Mode::Ppb;
    let other = sim::run(&cfg, &trace).map_err(sim_error)?;
    let cmp = compare(&base, &other).map_err(|e| CliError {
        code: 2,
        msg: e.to_string(),
    })?;
    if let Some(path) = &a.out {
        write_file(path, &cmp.to_json())?;
    }
    print!("{}", cmp.render());
    Ok(())
}

fn cmd_gen_trace(a: GenTraceArgs) -> Result<(), CliError> {
    let pattern = Pattern::from_str(&a.pattern).map_err(usage)?;
    let params = GenParams {
        pattern,
        refs: a.refs,
        cores: a.cores,
        block_size: a.block_size,
        blocks: a.blocks,
        hot_blocks: a.hot_blocks,
        hot_frac: a.hot_frac,
        write_frac: a.write_frac,
        gap: a.gap,
        seed: a.seed,
    };
    let ops = generate(&params).map_err(|e| usage(e.to_string()))?;
    let text = format_trace(&ops);
    match &a.out {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<(), CliError> {
    if a.cores == 0 || a.cores > 4 {
        return Err(usage(format!(
            "--cores {} exceeds the exhaustive bound (1..=4)",
            a.cores
        )));
    }
    if a.blocks == 0 || a.blocks > 3 {
        return Err(usage(format!(
            "--blocks {} exceeds the exhaustive bound (1..=3)",
            a.blocks
        )));
    }
    if a.ops == 0 || a.ops > 4 {
        return Err(usage(format!(
            "--ops {} exceeds the exhaustive bound (1..=4)",
            a.ops
        )));
    }
    let mode = Mode::from_str(&a.mode).map_err(usage)?;
    let opts = if a.drop_inv {
        CheckOptions {
            mode,
            mutation: Mutation::DropInvDuringFill,
            max_states: a.max_states,
            ..checker::race_options()
        }
    } else {
        CheckOptions {
            cores: a.cores,
            blocks: a.blocks,
            ops: a.ops,
            mode,
            mutation: Mutation::None,
            max_states: a.max_states,
            program: None,
        }
    };
    let report = checker::check(&opts);
    println!(
        "explored {} states, {} transitions ({} racing fills observed)",
        report.states, report.transitions, report.race_fills
    );
    if report.bound_hit {
        return Err(CliError {
            code: 2,
            msg: format!("state bound {} hit before exhausting the space", a.max_states),
        });
    }
    match report.violation {
        Some(v) => {
            print!("{v}");
            Err(CliError {
                code: 3,
                msg: "property violation found".into(),
            })
        }
        None => {
            println!("all reachable states satisfy the checked properties");
            Ok(())
        }
    }
}

fn cmd_replay(a: ReplayArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.log)
        .map_err(|e| usage(format!("cannot read log {}: {e}", a.log.display())))?;
    let mut by_kind: BTreeMap<String, Stat> = BTreeMap::new();
    let mut by_class: BTreeMap<&'static str, Stat> = BTreeMap::new();
    let mut by_hops: BTreeMap<u64, Stat> = BTreeMap::new();
    let mut total = Stat::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || usage(format!("{}:{}: malformed log line", a.log.display(), lineno + 1));
        let mut eject = None;
        let mut kind = None;
        let mut tag: Option<Option<u8>> = None;
        let mut enq = None;
        let mut hops = None;
        for (i, tok) in line.split_whitespace().enumerate() {
            match (i, tok.split_once('=')) {
                (0, None) => eject = Some(tok.parse::<u64>().map_err(|_| bad())?),
                (3, None) => kind = Some(tok.to_string()),
                (_, Some(("tag", v))) => {
                    tag = Some(if v == "-" {
                        None
                    } else {
                        let raw = v.strip_prefix("0x").ok_or_else(bad)?;
                        Some(u8::from_str_radix(raw, 16).map_err(|_| bad())?)
                    });
                }
                (_, Some(("enq", v))) => enq = Some(v.parse::<u64>().map_err(|_| bad())?),
                (_, Some(("hops", v))) => hops = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let (eject, kind, tag, enq, hops) = match (eject, kind, tag, enq, hops) {
            (Some(a), Some(b), Some(c), Some(d), Some(e)) => (a, b, c, d, e),
            _ => return Err(bad()),
        };
        let delay = eject.checked_sub(enq).ok_or_else(bad)?;
        total.record(delay);
        by_kind.entry(kind).or_default().record(delay);
        let class = match tag.map(decode_tag) {
            None => "Untagged",
            Some(t) => match t.outer {
                OuterPhase::Untagged => "Untagged",
                OuterPhase::Request => "Request",
                OuterPhase::Ordered => "Ordered",
                OuterPhase::Memory => "Memory",
            },
        };
        by_class.entry(class).or_default().record(delay);
        by_hops.entry(hops).or_default().record(delay);
    }
    let mean = |st: &Stat| st.mean().map_or("n/a".into(), |m| format!("{m:.1}"));
    println!(
        "{} deliveries | delay mean={} min={} max={}",
        total.count,
        mean(&total),
        if total.count == 0 { 0 } else { total.min },
        total.max
    );
    println!("by class:");
    for (class, st) in &by_class {
        println!(
            "  {class:<9} n={:<8} mean={:<8} max={}",
            st.count,
            mean(st),
            st.max
        );
    }
    println!("by kind:");
    for (kind, st) in &by_kind {
        println!(
            "  {kind:<14} n={:<8} mean={:<8} max={}",
            st.count,
            mean(st),
            st.max
        );
    }
    println!("by hops:");
    for (hops, st) in &by_hops {
        println!(
            "  {hops:<2} n={:<8} mean={:<8} max={}",
            st.count,
            mean(st),
            st.max
        );
    }
    Ok(())
}
