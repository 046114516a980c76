//! End-to-end acceptance gates: protocol safety, priority-tag semantics,
//! latency calibration, directional arbitration effects, and conservation
//! bookkeeping. Each gate prints one PASS/FAIL line; the test fails if
//! any gate fails.

use std::cmp::Ordering;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cohsim::checker::{self, CheckOptions, CheckReport, Program};
use cohsim::config::SystemConfig;
use cohsim::metrics::Report;
use cohsim::noc::network::Network;
use cohsim::phase::{compare_priority, decode_tag, encode_tag};
use cohsim::protocol::l1::{CoreOp, OpKind};
use cohsim::protocol::{Message, MessageKind};
use cohsim::sim;
use cohsim::types::{Mode, NodeId};
use cohsim::workload::{generate, GenParams, Pattern, TraceOp};

/// Collected PASS/FAIL lines plus every report produced anywhere in the
/// suite, so the cross-cutting gates (starvation bound, conservation) can
/// sweep all runs.
struct Suite {
    lines: Vec<(bool, String)>,
    runs: Vec<(String, Report)>,
}

impl Suite {
    fn gate(&mut self, name: &str, outcome: Result<String, String>) {
        match outcome {
            Ok(detail) => self.lines.push((true, format!("PASS {name}: {detail}"))),
            Err(detail) => self.lines.push((false, format!("FAIL {name}: {detail}"))),
        }
    }

    fn track(&mut self, label: impl Into<String>, report: Report) -> &Report {
        self.runs.push((label.into(), report));
        &self.runs.last().unwrap().1
    }
}

fn cfg(mode: Mode, seed: u64) -> SystemConfig {
    SystemConfig {
        mode,
        seed,
        ..SystemConfig::default()
    }
}

// ---------------------------------------------------------------------
// Gate 1/2 helpers: exhaustive exploration inputs.

/// Three cores contending over two blocks with a write on each block and
/// reads crossing them — small enough to exhaust in seconds, rich enough
/// to reach every fill/forward/invalidate race the protocol has.
fn three_core_program() -> Program {
    let w = |block: u64, value: u64| CoreOp {
        kind: OpKind::Store,
        block,
        value,
    };
    let r = |block: u64| CoreOp {
        kind: OpKind::Load,
        block,
        value: 0,
    };
    vec![
        vec![w(0, 1)],
        vec![r(0), w(1, 2)],
        vec![r(1), r(0)],
    ]
}

struct Exploration {
    what: String,
    report: CheckReport,
    secs: f64,
}

fn explore(what: &str, opts: CheckOptions) -> Exploration {
    let start = Instant::now();
    let report = checker::check(&opts);
    Exploration {
        what: what.to_string(),
        report,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn gate_protocol_safety(explorations: &[Exploration]) -> Result<String, String> {
    let mut parts = Vec::new();
    for e in explorations {
        if let Some(v) = &e.report.violation {
            return Err(format!("{}: {}", e.what, v));
        }
        if e.report.bound_hit {
            return Err(format!("{}: state bound hit before exhaustion", e.what));
        }
        if e.secs > 300.0 {
            return Err(format!("{}: took {:.0}s (budget 300s)", e.what, e.secs));
        }
        parts.push(format!("{} {} states {:.1}s", e.what, e.report.states, e.secs));
    }
    let races: u64 = explorations.iter().map(|e| e.report.race_fills).sum();
    if races == 0 {
        return Err("no invalidation-during-fill race was ever reached".into());
    }
    Ok(format!(
        "no coherence, value, or deadlock violations; {races} racing fills covered ({})",
        parts.join("; ")
    ))
}

fn gate_serialization_numbering(explorations: &[Exploration]) -> Result<String, String> {
    // The explorer re-derives every block's serialization count as a ghost
    // variable and faults any tagged message whose sequence number is not
    // the successor (mod 64) of the previous one for that address; a clean
    // ppb-mode exhaustion is the proof.
    let ppb: Vec<&Exploration> = explorations
        .iter()
        .filter(|e| e.what.contains("ppb"))
        .collect();
    if ppb.is_empty() {
        return Err("no priority-mode explorations ran".into());
    }
    for e in &ppb {
        if let Some(v) = &e.report.violation {
            return Err(format!("{}: {}", e.what, v));
        }
    }
    let states: u64 = ppb.iter().map(|e| e.report.states).sum();
    Ok(format!(
        "sequence numbers consecutive (mod 64) per address in serialization order across {states} explored states"
    ))
}

// ---------------------------------------------------------------------
// Gate 3: the arbiter's comparator against an independent statement of
// the three rules.

fn rule_oracle(a: u8, b: u8) -> Ordering {
    let (ao, ai) = (a >> 6, i16::from(a & 0x3f));
    let (bo, bi) = (b >> 6, i16::from(b & 0x3f));
    if ao != bo {
        // Rule 1: the later (larger) coarse phase wins.
        return ao.cmp(&bo);
    }
    if ao != 2 {
        // Rule 2: equal coarse phases carry no ordering information
        // unless they are post-serialization.
        return Ordering::Equal;
    }
    // Rule 3: post-serialization messages compare sequence numbers in a
    // modular half-window; the antipode is a tie.
    match (64 + bi - ai) % 64 {
        0 | 32 => Ordering::Equal,
        1..=31 => Ordering::Greater,
        _ => Ordering::Less,
    }
}

fn gate_comparator() -> Result<String, String> {
    for byte in 0..=255u8 {
        let round = encode_tag(decode_tag(byte));
        if round != byte {
            return Err(format!("byte {byte:#04x} re-encodes as {round:#04x}"));
        }
    }
    let mut checked = 0u32;
    for a in 0..=255u8 {
        for b in 0..=255u8 {
            let got = compare_priority(decode_tag(a), decode_tag(b));
            let want = rule_oracle(a, b);
            if got != want {
                return Err(format!(
                    "tags {a:#04x} vs {b:#04x}: comparator says {got:?}, rules say {want:?}"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} tag pairs match the three-rule oracle exactly"))
}

// ---------------------------------------------------------------------
// Gate 4: zero-load fabric latency.

fn gate_zero_load() -> Result<String, String> {
    for mode in [Mode::Baseline, Mode::Ppb] {
        // Destinations 1..3 tiles east of tile 0: 1, 2, 3 hops.
        for (dst, hops) in [(1u16, 1u64), (2, 2), (3, 3)] {
            let mut net = Network::new(&cfg(mode, 0));
            net.send(
                Message::new(1, MessageKind::GetS, NodeId::L1(0), NodeId::Bank(dst), 0x40),
                1,
            );
            let mut got = Vec::new();
            for now in 1..200 {
                got.extend(net.phase_arrivals(now));
                net.phase_transfer(now);
                if !got.is_empty() {
                    break;
                }
            }
            let d = got
                .first()
                .ok_or_else(|| format!("{mode} {hops}-hop packet never arrived"))?;
            if d.hops != hops || d.eject - d.enqueue != 6 * hops {
                return Err(format!(
                    "{mode} {hops}-hop single-flit packet took {} cycles over {} hops (want {})",
                    d.eject - d.enqueue,
                    d.hops,
                    6 * hops
                ));
            }
            if !net.quiescent() {
                return Err(format!("{mode} fabric not quiescent after delivery"));
            }
        }
    }
    Ok("single-flit latency is exactly 6 cycles/hop for 1, 2, 3 hops in both modes".into())
}

// ---------------------------------------------------------------------
// Gate 5: directional effect under hot contention; gate 8 reuses the
// seed-1 runs for byte-level determinism.

fn hotspot_params(seed: u64) -> GenParams {
    GenParams {
        pattern: Pattern::Hotspot,
        refs: 120_000,
        cores: 16,
        block_size: 64,
        blocks: 4096,
        hot_blocks: 64,
        hot_frac: 1.0,
        write_frac: 0.3,
        gap: 1,
        seed,
    }
}

/// Mean in-fabric delay of every post-serialization and memory-phase
/// message kind, reconstructed from per-kind stats so the baseline (which
/// tags nothing) aggregates the same population as the priority mode.
fn ordered_and_memory_mean(r: &Report) -> f64 {
    const KINDS: [&str; 11] = [
        "Data",
        "DataExcl",
        "Inv",
        "InvAck",
        "FwdGetS",
        "FwdGetM",
        "Unblock",
        "WBAck",
        "MemRead",
        "MemWriteBack",
        "MemData",
    ];
    let (mut sum, mut count) = (0u64, 0u64);
    for kind in KINDS {
        if let Some(s) = r.noc_by_kind.get(kind) {
            sum += s.sum;
            count += s.count;
        }
    }
    assert!(count > 0, "no post-serialization traffic recorded");
    sum as f64 / count as f64
}

struct HotspotOutcome {
    seed: u64,
    base: Report,
    ppb: Report,
}

fn gate_contention_relief(outcomes: &[HotspotOutcome]) -> Result<String, String> {
    let mut strict_transients = 0usize;
    let mut strict_stalls = 0usize;
    let mut pct_t = Vec::new();
    let mut pct_s = Vec::new();
    for o in outcomes {
        let (bt, pt) = (o.base.unnecessary_transients, o.ppb.unnecessary_transients);
        let (bs, ps) = (o.base.l2_stalls, o.ppb.l2_stalls);
        if pt > bt {
            return Err(format!("seed {}: transients rose {bt} -> {pt}", o.seed));
        }
        if ps > bs {
            return Err(format!("seed {}: stall cycles rose {bs} -> {ps}", o.seed));
        }
        let (bm, pm) = (
            ordered_and_memory_mean(&o.base),
            ordered_and_memory_mean(&o.ppb),
        );
        if pm >= bm {
            return Err(format!(
                "seed {}: ordered/memory mean fabric delay {:.3} -> {:.3} (not reduced)",
                o.seed, bm, pm
            ));
        }
        if pt < bt {
            strict_transients += 1;
        }
        if ps < bs {
            strict_stalls += 1;
        }
        pct_t.push(100.0 * (bt - pt) as f64 / bt.max(1) as f64);
        pct_s.push(100.0 * (bs - ps) as f64 / bs.max(1) as f64);
    }
    let n = outcomes.len();
    if strict_transients < 4 || strict_stalls < 4 {
        return Err(format!(
            "strict reductions on only {strict_transients}/{n} (transients) and {strict_stalls}/{n} (stall cycles) seeds; need 4"
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(format!(
        "over {n} seeds: transients -{:.1}% mean (strictly lower on {strict_transients}), stall cycles -{:.2}% mean (strictly lower on {strict_stalls}), ordered/memory fabric delay lower on all",
        mean(&pct_t),
        mean(&pct_s),
    ))
}

// ---------------------------------------------------------------------
// Gate 6: without contention, arbitration priority must be invisible.

fn gate_neutrality(suite: &mut Suite) -> Result<String, String> {
    let params = GenParams {
        pattern: Pattern::Private,
        refs: 8_000,
        seed: 3,
        ..GenParams::default()
    };
    let trace = generate(&params).map_err(|e| e.to_string())?;
    let base = sim::run(&cfg(Mode::Baseline, 3), &trace).map_err(|e| e.to_string())?;
    let ppb = sim::run(&cfg(Mode::Ppb, 3), &trace).map_err(|e| e.to_string())?;
    if base.noc_delay_hist != ppb.noc_delay_hist {
        return Err("fabric delay histograms differ on a contention-free workload".into());
    }
    if base.txn_latency != ppb.txn_latency {
        return Err("transaction latency stats differ on a contention-free workload".into());
    }
    // The only legitimate differences are labels: the mode name and the
    // per-class breakdown keys (one mode tags traffic, the other does
    // not). Totals across classes must still agree.
    let class_total = |r: &Report| -> (u64, u64) {
        r.noc_by_class
            .values()
            .fold((0, 0), |(c, s), st| (c + st.count, s + st.sum))
    };
    if class_total(&base) != class_total(&ppb) {
        return Err("per-class delay totals differ on a contention-free workload".into());
    }
    let mut a = serde_json::to_value(&base).map_err(|e| e.to_string())?;
    let mut b = serde_json::to_value(&ppb).map_err(|e| e.to_string())?;
    for v in [&mut a, &mut b] {
        v["mode"] = serde_json::Value::Null;
        v["noc_by_class"] = serde_json::Value::Null;
    }
    let verdict = if a == b {
        Ok(format!(
            "contention-free runs identical in everything but labels ({} ops, {} cycles, equal delay histograms)",
            base.ops_issued, base.cycles
        ))
    } else {
        Err("reports differ beyond labels on a contention-free workload".into())
    };
    suite.track("neutrality/baseline", base);
    suite.track("neutrality/ppb", ppb);
    verdict
}

// ---------------------------------------------------------------------
// Gate 7 and 9 sweep every tracked run.

fn gate_starvation_bound(suite: &Suite) -> Result<String, String> {
    // Promotion threshold plus the worst case already in flight at the
    // grant: up to 8 candidates x 5 flits each.
    let bound = u64::from(SystemConfig::default().starvation_threshold) + 8 * 5;
    let mut worst = (0u64, "");
    for (label, r) in &suite.runs {
        if r.max_arb_wait > worst.0 {
            worst = (r.max_arb_wait, label);
        }
        if r.max_arb_wait > bound {
            return Err(format!(
                "{label}: arbitration wait age reached {} (bound {bound})",
                r.max_arb_wait
            ));
        }
    }
    Ok(format!(
        "worst arbitration wait age {} ({}) <= {bound} across {} runs",
        worst.0,
        worst.1,
        suite.runs.len()
    ))
}

fn gate_conservation(suite: &Suite) -> Result<String, String> {
    for (label, r) in &suite.runs {
        if r.flits_injected != r.flits_ejected {
            return Err(format!(
                "{label}: {} flits injected but {} ejected",
                r.flits_injected, r.flits_ejected
            ));
        }
        if r.msgs_sent != r.msgs_delivered {
            return Err(format!(
                "{label}: {} messages sent but {} delivered",
                r.msgs_sent, r.msgs_delivered
            ));
        }
    }
    // Every run that returns a report also drained: the engine refuses to
    // finish while any miss register, busy directory entry, queue, or
    // in-fabric flit remains, so a returned report certifies empty MSHRs
    // and no Busy entries.
    Ok(format!(
        "flits injected = ejected and messages sent = delivered in {}/{} runs; all drained to empty MSHRs and idle directories",
        suite.runs.len(),
        suite.runs.len()
    ))
}

// ---------------------------------------------------------------------
// Gate 10: a directed invalidation-overtakes-fill race.

/// Builds episodes in which a reader three hops from a block's home bank
/// receives its five-flit data fill while a writer's single-flit
/// invalidation — serialized just after the read — chases it down the
/// same path. The invalidation can overtake the fill's tail only through
/// buffer-credit bubbles, which is precisely the reordering priority
/// arbitration is meant to suppress.
fn directed_race_trace(seed: u64) -> Vec<TraceOp> {
    // (home bank, reader, writer, first sharer, second sharer): reader and
    // writer both three hops from the home so the invalidation trails the
    // data onto the same route.
    const EPISODES: [(u64, usize, usize, usize, usize); 4] = [
        (5, 12, 3, 4, 6),
        (6, 13, 0, 7, 10),
        (9, 2, 15, 8, 13),
        (10, 1, 12, 11, 14),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops = Vec::new();
    for e in 0..24u64 {
        let (home, reader, writer, s1, s2) = EPISODES[(e % 4) as usize];
        let block = home + 16 * (e + 1);
        let addr = block * 64;
        let t0 = 100 + e * 800;
        let jitter: u64 = rng.random_range(1..8);
        // Two loads settle the block into the shared state at its home.
        ops.push(TraceOp { tick: t0, core: s1, kind: OpKind::Load, addr });
        ops.push(TraceOp { tick: t0 + 100, core: s2, kind: OpKind::Load, addr });
        // The reader's fill and the writer's invalidation race.
        ops.push(TraceOp { tick: t0 + 400, core: reader, kind: OpKind::Load, addr });
        ops.push(TraceOp { tick: t0 + 400 + jitter, core: writer, kind: OpKind::Store, addr });
    }
    ops.sort_by_key(|o| (o.tick, o.core));
    ops
}

fn gate_directed_race(suite: &mut Suite) -> Result<String, String> {
    let mut pairs = Vec::new();
    for seed in [1u64, 2, 4, 7, 8] {
        let trace = directed_race_trace(seed);
        let base = sim::run(&cfg(Mode::Baseline, seed), &trace).map_err(|e| e.to_string())?;
        let ppb = sim::run(&cfg(Mode::Ppb, seed), &trace).map_err(|e| e.to_string())?;
        let (bt, pt) = (base.unnecessary_transients, ppb.unnecessary_transients);
        suite.track(format!("race/seed{seed}/baseline"), base);
        suite.track(format!("race/seed{seed}/ppb"), ppb);
        if bt == 0 {
            return Err(format!(
                "seed {seed}: round-robin arbitration let no invalidation overtake a fill"
            ));
        }
        if pt > bt {
            return Err(format!(
                "seed {seed}: priority arbitration raised overtakes {bt} -> {pt}"
            ));
        }
        pairs.push(format!("seed {seed}: {bt} -> {pt}"));
    }
    Ok(format!(
        "invalidation overtook an in-flight fill under round-robin on every seed and never more often under priority ({})",
        pairs.join(", ")
    ))
}

// ---------------------------------------------------------------------

#[test]
fn acceptance() {
    let mut suite = Suite {
        lines: Vec::new(),
        runs: Vec::new(),
    };

    // Exhaustive explorations feed the first two gates.
    let explorations = vec![
        explore(
            "2-core/1-block baseline",
            CheckOptions {
                cores: 2,
                blocks: 1,
                ops: 2,
                ..CheckOptions::default()
            },
        ),
        explore(
            "2-core/1-block ppb",
            CheckOptions {
                cores: 2,
                blocks: 1,
                ops: 2,
                mode: Mode::Ppb,
                ..CheckOptions::default()
            },
        ),
        explore(
            "3-core/2-block baseline",
            CheckOptions {
                cores: 3,
                blocks: 2,
                ops: 2,
                program: Some(three_core_program()),
                ..CheckOptions::default()
            },
        ),
        explore(
            "3-core/2-block ppb",
            CheckOptions {
                cores: 3,
                blocks: 2,
                ops: 2,
                mode: Mode::Ppb,
                program: Some(three_core_program()),
                ..CheckOptions::default()
            },
        ),
    ];
    suite.gate(
        "protocol safety (exhaustive interleavings)",
        gate_protocol_safety(&explorations),
    );
    suite.gate(
        "serialization numbering",
        gate_serialization_numbering(&explorations),
    );
    suite.gate("priority comparator", gate_comparator());
    suite.gate("zero-load latency", gate_zero_load());

    // Hot contention runs; seed 1 runs twice per mode for the
    // determinism gate.
    let mut outcomes = Vec::new();
    let mut determinism: Result<String, String> = Ok(String::new());
    for seed in [1u64, 2, 4, 7, 8] {
        let trace = generate(&hotspot_params(seed)).expect("hotspot generation");
        let run_mode = |mode: Mode| sim::run_logged(&cfg(mode, seed), &trace);
        let (base, ppb);
        if seed == 1 {
            let (b1, bl1) = run_mode(Mode::Baseline).expect("baseline run");
            let (b2, bl2) = run_mode(Mode::Baseline).expect("baseline rerun");
            let (p1, pl1) = run_mode(Mode::Ppb).expect("ppb run");
            let (p2, pl2) = run_mode(Mode::Ppb).expect("ppb rerun");
            let log = |l: &[sim::DeliveryRecord]| {
                l.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
            };
            determinism = if b1.to_json() != b2.to_json() || p1.to_json() != p2.to_json() {
                Err("repeated runs produced different reports".into())
            } else if log(&bl1) != log(&bl2) || log(&pl1) != log(&pl2) {
                Err("repeated runs produced different flit logs".into())
            } else {
                Ok(format!(
                    "repeated runs byte-identical: reports and {}-line flit logs, both modes",
                    bl1.len()
                ))
            };
            (base, ppb) = (b1, p1);
        } else {
            (base, ppb) = (
                run_mode(Mode::Baseline).expect("baseline run").0,
                run_mode(Mode::Ppb).expect("ppb run").0,
            );
        }
        suite.track(format!("hotspot/seed{seed}/baseline"), base.clone());
        suite.track(format!("hotspot/seed{seed}/ppb"), ppb.clone());
        outcomes.push(HotspotOutcome { seed, base, ppb });
    }
    suite.gate("contention relief", gate_contention_relief(&outcomes));

    let neutrality = gate_neutrality(&mut suite);
    suite.gate("neutrality without contention", neutrality);

    let race = gate_directed_race(&mut suite);

    // Cross-cutting sweeps over every tracked run (hotspot, neutrality,
    // directed race).
    let starvation = gate_starvation_bound(&suite);
    suite.gate("starvation bound", starvation);
    suite.gate("determinism", determinism);
    let conservation = gate_conservation(&suite);
    suite.gate("conservation", conservation);
    suite.gate("directed invalidation race", race);

    let mut failed = 0;
    println!();
    for (ok, line) in &suite.lines {
        println!("{line}");
        if !ok {
            failed += 1;
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance gate(s) failed");
}
