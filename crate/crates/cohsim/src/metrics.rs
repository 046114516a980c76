//! Run reports: what the simulator measured, how to serialize it, and how
//! to compare two runs of the same trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Running min/mean/max over a stream of samples.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Stat {
    pub count: u64,
    pub sum: u64,
    pub min: u64,
    pub max: u64,
}

impl Stat {
    pub fn record(&mut self, sample: u64) {
        if self.count == 0 {
            self.min = sample;
            self.max = sample;
        } else {
            self.min = self.min.min(sample);
            self.max = self.max.max(sample);
        }
        self.count += 1;
        self.sum += sample;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }
}

/// Energy proxy: weighted event counts, in arbitrary units.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Energy {
    pub link: f64,
    pub buf_write: f64,
    pub buf_read: f64,
    pub arb: f64,
    pub xbar: f64,
    pub total: f64,
}

/// Everything one run reports. Serialized as JSON; `write_csv` flattens
/// the scalar fields.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Report {
    pub mode: String,
    pub seed: u64,
    /// Fingerprint of the input (trace plus mode-independent config);
    /// two runs are comparable only when these match.
    pub trace_fingerprint: String,
    /// Fingerprint of the execution (retire stream); identical runs are
    /// byte-identical here.
    pub exec_fingerprint: String,
    pub cycles: u64,
    pub drain_cycles: u64,

    pub ops_issued: u64,
    pub loads: u64,
    pub stores: u64,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub evictions: u64,

    pub txns_completed: u64,
    /// Issue-to-retire latency of core transactions.
    pub txn_latency: Stat,
    /// Aggregate cycles charged at controllers (cache and memory access
    /// latencies) across all transactions.
    pub controller_cycles: u64,
    /// Aggregate cycles messages spent waiting in endpoint input queues.
    pub queue_cycles: u64,
    /// Aggregate cycles messages spent in the fabric.
    pub noc_cycles: u64,

    /// Coherence messages that landed inside another transaction's open
    /// window at an L1, forcing an extra transient state there.
    pub unnecessary_transients: u64,
    /// Cycles directory banks spent with their head request blocked on a
    /// mid-transaction block.
    pub l2_stalls: u64,
    /// Distinct requests that experienced at least one such blocked cycle.
    pub l2_stall_events: u64,

    pub msgs_sent: u64,
    pub msgs_delivered: u64,
    pub sent_by_kind: BTreeMap<String, u64>,

    /// Fabric delay (enqueue to tail ejection) per message kind.
    pub noc_by_kind: BTreeMap<String, Stat>,
    /// Fabric delay per priority class.
    pub noc_by_class: BTreeMap<String, Stat>,
    /// Fabric delay histogram: delay -> messages.
    pub noc_delay_hist: BTreeMap<u64, u64>,

    pub flits_injected: u64,
    pub flits_ejected: u64,
    pub zero_hop_msgs: u64,
    /// Flits carried per directed link over the whole run.
    pub link_flits: BTreeMap<String, u64>,
    /// Busiest link's flits per cycle.
    pub peak_link_utilization: f64,

    /// Most decisions any candidate lost while bidding at one
    /// arbitration point before being granted.
    pub max_arb_wait: u64,
    /// Mean lost-decision count over all grants.
    pub mean_arb_wait: f64,

    pub energy: Energy,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Report, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Flat `metric,value` rows for the scalar fields.
    pub fn write_csv(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("mode".into(), self.mode.clone()),
            ("seed".into(), self.seed.to_string()),
            ("trace_fingerprint".into(), self.trace_fingerprint.clone()),
            ("exec_fingerprint".into(), self.exec_fingerprint.clone()),
            ("cycles".into(), self.cycles.to_string()),
            ("drain_cycles".into(), self.drain_cycles.to_string()),
            ("ops_issued".into(), self.ops_issued.to_string()),
            ("loads".into(), self.loads.to_string()),
            ("stores".into(), self.stores.to_string()),
            ("l1_hits".into(), self.l1_hits.to_string()),
            ("l1_misses".into(), self.l1_misses.to_string()),
            ("evictions".into(), self.evictions.to_string()),
            ("txns_completed".into(), self.txns_completed.to_string()),
            (
                "txn_latency_mean".into(),
                fmt_opt(self.txn_latency.mean()),
            ),
            ("txn_latency_max".into(), self.txn_latency.max.to_string()),
            ("controller_cycles".into(), self.controller_cycles.to_string()),
            ("queue_cycles".into(), self.queue_cycles.to_string()),
            ("noc_cycles".into(), self.noc_cycles.to_string()),
            (
                "unnecessary_transients".into(),
                self.unnecessary_transients.to_string(),
            ),
            ("l2_stalls".into(), self.l2_stalls.to_string()),
            ("l2_stall_events".into(), self.l2_stall_events.to_string()),
            ("msgs_sent".into(), self.msgs_sent.to_string()),
            ("msgs_delivered".into(), self.msgs_delivered.to_string()),
            ("flits_injected".into(), self.flits_injected.to_string()),
            ("flits_ejected".into(), self.flits_ejected.to_string()),
            ("zero_hop_msgs".into(), self.zero_hop_msgs.to_string()),
            (
                "peak_link_utilization".into(),
                format!("{:.6}", self.peak_link_utilization),
            ),
            ("max_arb_wait".into(), self.max_arb_wait.to_string()),
            ("mean_arb_wait".into(), format!("{:.6}", self.mean_arb_wait)),
            ("energy_total".into(), format!("{:.3}", self.energy.total)),
        ];
        for (k, s) in &self.noc_by_class {
            rows.push((format!("noc_delay_mean[{k}]"), fmt_opt(s.mean())));
        }
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            out.push_str(&k);
            out.push(',');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
}

/// One compared metric: raw values and the relative change. `delta_pct`
/// is `(base - other) / base * 100` — positive means `other` reduced the
/// metric — and `None` when the baseline is zero.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub base: f64,
    pub other: f64,
    pub delta_pct: Option<f64>,
}

/// Side-by-side result of two runs over the same trace.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub base_mode: String,
    pub other_mode: String,
    pub trace_fingerprint: String,
    pub rows: Vec<Comparison>,
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<34} {:>14} {:>14} {:>10}\n",
            "metric", self.base_mode, self.other_mode, "change"
        );
        for r in &self.rows {
            let delta = r
                .delta_pct
                .map(|d| format!("{d:+.2}%"))
                .unwrap_or_else(|| "n/a".into());
            out.push_str(&format!(
                "{:<34} {:>14.3} {:>14.3} {:>10}\n",
                r.metric, r.base, r.other, delta
            ));
        }
        out
    }
}

#[derive(Error, Debug)]
pub enum CompareError {
    #[error(
        "runs are not comparable: trace fingerprints differ ({base} vs {other}); \
         compare runs of the same trace and configuration"
    )]
    TraceMismatch { base: String, other: String },
}

/// Compares two runs of the same trace (typically baseline vs tagged).
pub fn compare(base: &Report, other: &Report) -> Result<CompareReport, CompareError> {
    if base.trace_fingerprint != other.trace_fingerprint {
        return Err(CompareError::TraceMismatch {
            base: base.trace_fingerprint.clone(),
            other: other.trace_fingerprint.clone(),
        });
    }
    let mut rows = Vec::new();
    let mut push = |metric: &str, b: f64, o: f64| {
        let delta_pct = (b != 0.0).then(|| (b - o) / b * 100.0);
        rows.push(Comparison {
            metric: metric.into(),
            base: b,
            other: o,
            delta_pct,
        });
    };
    push("cycles", base.cycles as f64, other.cycles as f64);
    push(
        "txn_latency_mean",
        base.txn_latency.mean().unwrap_or(0.0),
        other.txn_latency.mean().unwrap_or(0.0),
    );
    push(
        "txn_latency_max",
        base.txn_latency.max as f64,
        other.txn_latency.max as f64,
    );
    push(
        "unnecessary_transients",
        base.unnecessary_transients as f64,
        other.unnecessary_transients as f64,
    );
    push("l2_stalls", base.l2_stalls as f64, other.l2_stalls as f64);
    push(
        "noc_cycles",
        base.noc_cycles as f64,
        other.noc_cycles as f64,
    );
    push(
        "queue_cycles",
        base.queue_cycles as f64,
        other.queue_cycles as f64,
    );
    push(
        "max_arb_wait",
        base.max_arb_wait as f64,
        other.max_arb_wait as f64,
    );
    push(
        "energy_total",
        base.energy.total,
        other.energy.total,
    );
    for class in ["Request", "Ordered", "Memory", "Untagged"] {
        let b = base.noc_by_class.get(class).and_then(|s| s.mean());
        let o = other.noc_by_class.get(class).and_then(|s| s.mean());
        if let (Some(b), Some(o)) = (b, o) {
            push(&format!("noc_delay_mean[{class}]"), b, o);
        }
    }
    Ok(CompareReport {
        base_mode: base.mode.clone(),
        other_mode: other.mode.clone(),
        trace_fingerprint: base.trace_fingerprint.clone(),
        rows,
    })
}

/// FNV-1a over arbitrary bytes; the building block for fingerprints.
#[derive(Clone, Copy, Debug)]
pub struct Fingerprint(u64);

impl Fingerprint {
    pub fn new() -> Fingerprint {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }

    pub fn push_bytes(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn push_u64(&mut self, v: u64) {
        self.push_bytes(&v.to_le_bytes());
    }

    pub fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_tracks_min_mean_max() {
        let mut s = Stat::default();
        assert_eq!(s.mean(), None);
        for v in [4, 2, 9] {
            s.record(v);
        }
        assert_eq!(s.min, 2);
        assert_eq!(s.max, 9);
        assert_eq!(s.mean(), Some(5.0));
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut r = Report {
            mode: "baseline".into(),
            cycles: 123,
            ..Report::default()
        };
        r.txn_latency.record(10);
        r.noc_by_kind.insert("GetS".into(), r.txn_latency);
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = Report::default().write_csv();
        assert!(csv.starts_with("metric,value\n"));
        assert!(csv.contains("\ncycles,0\n"));
        assert!(csv.contains("txn_latency_mean,n/a"));
    }

    #[test]
    fn compare_refuses_different_traces() {
        let a = Report {
            trace_fingerprint: "aa".into(),
            ..Report::default()
        };
        let b = Report {
            trace_fingerprint: "bb".into(),
            ..Report::default()
        };
        assert!(compare(&a, &b).is_err());
    }

    #[test]
    fn compare_reports_reductions_as_positive() {
        let mut a = Report {
            trace_fingerprint: "aa".into(),
            mode: "baseline".into(),
            cycles: 200,
            l2_stalls: 10,
            ..Report::default()
        };
        let mut b = a.clone();
        b.mode = "ppb".into();
        b.cycles = 100;
        b.l2_stalls = 0;
        a.txn_latency.record(10);
        b.txn_latency.record(5);
        let cmp = compare(&a, &b).unwrap();
        let row = |m: &str| cmp.rows.iter().find(|r| r.metric == m).unwrap().clone();
        assert_eq!(row("cycles").delta_pct, Some(50.0));
        assert_eq!(row("l2_stalls").delta_pct, Some(100.0));
        assert_eq!(row("txn_latency_mean").delta_pct, Some(50.0));
        // Zero baseline: no percentage.
        assert_eq!(row("unnecessary_transients").delta_pct, None);
        assert!(cmp.render().contains("+50.00%"));
    }

    #[test]
    fn fingerprints_are_order_sensitive() {
        let mut a = Fingerprint::new();
        a.push_u64(1);
        a.push_u64(2);
        let mut b = Fingerprint::new();
        b.push_u64(2);
        b.push_u64(1);
        assert_ne!(a.hex(), b.hex());
        assert_eq!(a.hex().len(), 16);
    }
}
