//! Trace input and synthetic workload generation.
//!
//! Trace format: one memory reference per line, `tick core R|W 0xADDR`,
//! with `#` comments and blank lines ignored. Ticks are the earliest cycle
//! the core may issue the reference; each core issues its own references
//! in file order, one outstanding at a time.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::protocol::l1::OpKind;
use crate::types::Cycle;

/// One parsed trace line.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TraceOp {
    pub tick: Cycle,
    pub core: usize,
    pub kind: OpKind,
    pub addr: u64,
}

#[derive(Error, Debug)]
pub enum WorkloadError {
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Parses a whole trace file.
pub fn parse_trace(text: &str) -> Result<Vec<TraceOp>, WorkloadError> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |reason: String| WorkloadError::Parse {
            line: i + 1,
            reason,
        };
        let mut parts = line.split_whitespace();
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| fail(format!("missing {what}")))
        };
        let tick: Cycle = next("tick")?
            .parse()
            .map_err(|e| fail(format!("bad tick: {e}")))?;
        let core: usize = next("core")?
            .parse()
            .map_err(|e| fail(format!("bad core: {e}")))?;
        let kind = match next("operation")? {
            "R" | "r" => OpKind::Load,
            "W" | "w" => OpKind::Store,
            other => return Err(fail(format!("operation must be R or W, got {other:?}"))),
        };
        let addr_s = next("address")?;
        let addr = addr_s
            .strip_prefix("0x")
            .or_else(|| addr_s.strip_prefix("0X"))
            .ok_or_else(|| fail(format!("address must start with 0x, got {addr_s:?}")))
            .and_then(|h| {
                u64::from_str_radix(h, 16).map_err(|e| fail(format!("bad address: {e}")))
            })?;
        if parts.next().is_some() {
            return Err(fail("trailing fields".into()));
        }
        ops.push(TraceOp {
            tick,
            core,
            kind,
            addr,
        });
    }
    Ok(ops)
}

/// Renders ops back into the line format (inverse of [`parse_trace`]).
pub fn format_trace(ops: &[TraceOp]) -> String {
    let mut out = String::with_capacity(ops.len() * 24);
    for op in ops {
        let k = match op.kind {
            OpKind::Load => 'R',
            OpKind::Store => 'W',
        };
        writeln!(out, "{} {} {} {:#x}", op.tick, op.core, k, op.addr).unwrap();
    }
    out
}

/// Built-in reference patterns.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Pattern {
    /// Every core picks blocks uniformly from the shared range.
    Uniform,
    /// A fraction of references concentrate on a small hot block set
    /// shared by all cores; the rest go to the cold range.
    Hotspot,
    /// Core pairs alternate: the producer writes a block set, its consumer
    /// reads the same blocks.
    ProducerConsumer,
    /// Each core touches only its own block range, with issue slots
    /// staggered so that no two transactions are ever in flight at once —
    /// a zero-contention floor.
    Private,
}

impl FromStr for Pattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Pattern, String> {
        match s {
            "uniform" => Ok(Pattern::Uniform),
            "hotspot" => Ok(Pattern::Hotspot),
            "producer_consumer" | "producer-consumer" => Ok(Pattern::ProducerConsumer),
            "private" => Ok(Pattern::Private),
            other => Err(format!(
                "unknown pattern {other:?} (uniform, hotspot, producer_consumer, private)"
            )),
        }
    }
}

impl Pattern {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pattern::Uniform => "uniform",
            Pattern::Hotspot => "hotspot",
            Pattern::ProducerConsumer => "producer_consumer",
            Pattern::Private => "private",
        }
    }
}

/// Generation knobs. `blocks` is the shared address range in cache blocks;
/// addresses are `block_index * block_size`.
#[derive(Clone, Debug)]
pub struct GenParams {
    pub pattern: Pattern,
    pub refs: usize,
    pub cores: usize,
    pub block_size: u64,
    pub blocks: u64,
    pub hot_blocks: u64,
    /// Fraction of references sent to the hot set (hotspot pattern).
    pub hot_frac: f64,
    /// Fraction of references that are stores.
    pub write_frac: f64,
    /// Mean gap in ticks between consecutive references of one core.
    pub gap: u64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> GenParams {
        GenParams {
            pattern: Pattern::Uniform,
            refs: 10_000,
            cores: 16,
            block_size: 64,
            blocks: 4096,
            hot_blocks: 64,
            hot_frac: 0.3,
            write_frac: 0.3,
            gap: 4,
            seed: 1,
        }
    }
}

/// Generates a deterministic trace; the same parameters always produce the
/// same bytes.
pub fn generate(p: &GenParams) -> Result<Vec<TraceOp>, WorkloadError> {
    if p.cores == 0 || p.refs == 0 || p.blocks == 0 {
        return Err(WorkloadError::Invalid(
            "cores, refs, and blocks must be nonzero".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p.write_frac) || !(0.0..=1.0).contains(&p.hot_frac) {
        return Err(WorkloadError::Invalid(
            "write_frac and hot_frac must be within [0, 1]".into(),
        ));
    }
    if p.pattern == Pattern::Hotspot && p.hot_blocks > p.blocks {
        return Err(WorkloadError::Invalid(
            "hot_blocks exceeds the block range".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut ops = Vec::with_capacity(p.refs);
    let addr = |block: u64| block * p.block_size;

    match p.pattern {
        Pattern::Uniform => {
            let mut ticks = vec![0u64; p.cores];
            for _ in 0..p.refs {
                let core = rng.random_range(0..p.cores);
                ticks[core] += rng.random_range(1..=p.gap.max(1) * 2);
                let block = rng.random_range(0..p.blocks);
                let kind = if rng.random_bool(p.write_frac) {
                    OpKind::Store
                } else {
                    OpKind::Load
                };
                ops.push(TraceOp {
                    tick: ticks[core],
                    core,
                    kind,
                    addr: addr(block),
                });
            }
        }
        Pattern::Hotspot => {
            let mut ticks = vec![0u64; p.cores];
            let cold = p.hot_blocks..p.blocks;
            for _ in 0..p.refs {
                let core = rng.random_range(0..p.cores);
                ticks[core] += rng.random_range(1..=p.gap.max(1) * 2);
                let block = if rng.random_bool(p.hot_frac) {
                    rng.random_range(0..p.hot_blocks)
                } else if cold.is_empty() {
                    rng.random_range(0..p.blocks)
                } else {
                    rng.random_range(cold.clone())
                };
                let kind = if rng.random_bool(p.write_frac) {
                    OpKind::Store
                } else {
                    OpKind::Load
                };
                ops.push(TraceOp {
                    tick: ticks[core],
                    core,
                    kind,
                    addr: addr(block),
                });
            }
        }
        Pattern::ProducerConsumer => {
            if p.cores < 2 {
                return Err(WorkloadError::Invalid(
                    "producer_consumer needs at least 2 cores".into(),
                ));
            }
            // Pair core c with c + cores/2; each pair owns a block slice.
            let pairs = p.cores / 2;
            let slice = (p.blocks / pairs as u64).max(1);
            let mut tick = 0u64;
            let rounds = p.refs / (2 * pairs) + 1;
            'outer: for round in 0..rounds {
                for pair in 0..pairs {
                    let base = pair as u64 * slice;
                    let block = base + (round as u64 % slice);
                    let producer = pair;
                    let consumer = pair + pairs;
                    tick += rng.random_range(1..=p.gap.max(1) * 2);
                    ops.push(TraceOp {
                        tick,
                        core: producer,
                        kind: OpKind::Store,
                        addr: addr(block),
                    });
                    if ops.len() >= p.refs {
                        break 'outer;
                    }
                    // The consumer reads after the producer's write window.
                    ops.push(TraceOp {
                        tick: tick + p.gap.max(1) * 4,
                        core: consumer,
                        kind: OpKind::Load,
                        addr: addr(block),
                    });
                    if ops.len() >= p.refs {
                        break 'outer;
                    }
                }
            }
        }
        Pattern::Private => {
            // Issue slots are globally serialized: reference k of core c
            // goes in slot k*cores + c, with a window long enough for any
            // transaction (memory round trip included) to finish before
            // the next slot opens.
            let window = 700u64.max(p.gap);
            let per_core = p.refs / p.cores + usize::from(p.refs % p.cores != 0);
            let range = (p.blocks / p.cores as u64).max(1);
            let mut produced = 0;
            'done: for k in 0..per_core {
                for core in 0..p.cores {
                    if produced == p.refs {
                        break 'done;
                    }
                    let slot = (k * p.cores + core) as u64;
                    let block = core as u64 * range + (k as u64 % range);
                    let kind = if k % 3 == 2 {
                        OpKind::Store
                    } else {
                        OpKind::Load
                    };
                    ops.push(TraceOp {
                        tick: 1 + slot * window,
                        core,
                        kind,
                        addr: addr(block),
                    });
                    produced += 1;
                }
            }
        }
    }

    ops.sort_by_key(|o| (o.tick, o.core));
    Ok(ops)
}
