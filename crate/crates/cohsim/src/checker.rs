//! Exhaustive safety checker for the coherence protocol.
//!
//! Explores every reachable state of a small system — a few cores with
//! short fixed programs, one home bank, one memory controller — under
//! fully nondeterministic, unordered message delivery. The same controller
//! transition tables as the timing simulator are driven here without a
//! clock, so anything proven holds for the tables themselves, not for one
//! particular timing.
//!
//! Checked on every reachable state:
//! - single-writer / multiple-reader: at most one L1 holds E/M per block,
//!   and never alongside other stable copies;
//! - data-value coherence: loads return the latest store in serialization
//!   order (tracked by ghost variables pinned at serialization time);
//! - stable-state agreement between L1 copies, directory records, and the
//!   L2 data image whenever the block is not mid-transaction;
//! - tagged mode: sequence numbers issued per block are consecutive and
//!   never duplicated among live transactions;
//! - no illegal state/message combinations (controller bug rows);
//! - termination: every execution can finish all programs with empty
//!   channels and quiescent controllers (otherwise the shortest deadlock
//!   path is reported).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use crate::protocol::directory::{Bank, DirState};
use crate::protocol::l1::{
    CoreOp, CoreOpStatus, EvictMshr, FetchMshr, L1Cache, MshrEntry, OpKind, Probe, StableState,
};
use crate::protocol::memory::MemoryCtrl;
use crate::protocol::{
    Effects, GrantSource, Message, Mutation, ProtocolEvent, SerializedAction,
};
use crate::types::{Block, Mode, NodeId, TxnId};

/// Per-core programs: `program[core]` is that core's op sequence.
pub type Program = Vec<Vec<CoreOp>>;

/// Offset separating eviction transaction ids from request ids.
const EVICT_TXN_BASE: TxnId = 1_000_000;

/// What to explore and how hard.
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub cores: usize,
    pub blocks: u64,
    /// Ops per core when generating the default program.
    pub ops: usize,
    pub mode: Mode,
    pub mutation: Mutation,
    /// Abort exploration beyond this many distinct states.
    pub max_states: u64,
    /// Explicit program; otherwise [`default_program`] is used.
    pub program: Option<Program>,
}

impl Default for CheckOptions {
    fn default() -> CheckOptions {
        CheckOptions {
            cores: 2,
            blocks: 2,
            ops: 2,
            mode: Mode::Baseline,
            mutation: Mutation::None,
            max_states: 50_000_000,
            program: None,
        }
    }
}

/// Deterministic contention-heavy program: at step `j` every core touches
/// block `j % blocks`, alternating stores and loads by core/step parity.
/// Store values are unique across the whole program.
pub fn default_program(cores: usize, blocks: u64, ops: usize) -> Program {
    (0..cores)
        .map(|c| {
            (0..ops)
                .map(|j| CoreOp {
                    kind: if (c + j) % 2 == 0 {
                        OpKind::Store
                    } else {
                        OpKind::Load
                    },
                    block: (j as u64) % blocks,
                    value: 1 + (c * ops + j) as u64,
                })
                .collect()
        })
        .collect()
}

/// Three readers and a writer on one block: the smallest program that
/// drives an invalidation into a read fill still in flight. Options pair
/// it with four cores and one block.
pub fn race_options() -> CheckOptions {
    let read = CoreOp {
        kind: OpKind::Load,
        block: 0,
        value: 0,
    };
    let write = CoreOp {
        kind: OpKind::Store,
        block: 0,
        value: 7,
    };
    CheckOptions {
        cores: 4,
        blocks: 1,
        ops: 1,
        program: Some(vec![vec![read], vec![read], vec![read], vec![write]]),
        ..CheckOptions::default()
    }
}

/// A found property violation with the shortest event path leading to it.
#[derive(Clone, Debug)]
pub struct Violation {
    pub desc: String,
    pub trace: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "violation: {}", self.desc)?;
        for (i, step) in self.trace.iter().enumerate() {
            writeln!(f, "  {:>3}. {step}", i + 1)?;
        }
        Ok(())
    }
}

/// Outcome of an exploration.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub passed: bool,
    pub states: u64,
    pub transitions: u64,
    /// Exploration hit `max_states` before exhausting the space.
    pub bound_hit: bool,
    pub violation: Option<Violation>,
    /// Times an invalidation caught a read fill mid-flight anywhere in the
    /// explored space (sanity signal that the interesting race is covered).
    pub race_fills: u64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
struct CoreState {
    pc: usize,
    pending: Option<(TxnId, CoreOp)>,
}

/// Ghost (history) variables used by the value and numbering oracles.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
struct Ghosts {
    /// Latest store per block in serialization order (0 = initial).
    last_store: BTreeMap<Block, u64>,
    /// Read transactions whose return value was pinned at serialization.
    expected: BTreeMap<TxnId, u64>,
    /// Read transactions whose value will be pinned by the owner's answer.
    expected_from_owner: BTreeSet<TxnId>,
    /// Serializations per block (for checking issued sequence numbers).
    ser_count: BTreeMap<Block, u64>,
    /// Sequence numbers of live transactions, keyed (block, txn).
    active_inner: BTreeMap<(Block, TxnId), u8>,
}

/// One complete system state.
#[derive(Clone, Debug)]
struct World {
    cores: Vec<CoreState>,
    l1s: Vec<L1Cache>,
    bank: Bank,
    mem: MemoryCtrl,
    /// Unordered channels: a sorted multiset of in-flight messages per
    /// (src, dst) pair. Empty channels are removed.
    channels: BTreeMap<(NodeId, NodeId), Vec<Message>>,
    ghosts: Ghosts,
}

#[derive(Clone, PartialEq, Eq, Debug)]
enum Transition {
    Issue { core: usize },
    Evict { core: usize, block: Block },
    Deliver { key: (NodeId, NodeId), idx: usize },
}

impl World {
    fn new(opts: &CheckOptions) -> World {
        let ways = opts.blocks as usize + 1;
        let mshr_cap = opts.blocks as usize + 2;
        World {
            cores: vec![
                CoreState {
                    pc: 0,
                    pending: None
                };
                opts.cores
            ],
            l1s: (0..opts.cores)
                .map(|c| {
                    let mut l1 = L1Cache::new(c, 1, ways, mshr_cap, 1);
                    l1.set_mutation(opts.mutation);
                    l1
                })
                .collect(),
            bank: Bank::new(0, 32, 1),
            mem: MemoryCtrl::new(0),
            channels: BTreeMap::new(),
            ghosts: Ghosts::default(),
        }
    }

    fn push_msgs(&mut self, msgs: Vec<Message>) {
        for m in msgs {
            let v = self.channels.entry((m.src, m.dst)).or_default();
            v.push(m);
            v.sort_unstable();
        }
    }

    /// All transitions enabled in this state, in a fixed order.
    fn enabled(&self, prog: &Program) -> Vec<Transition> {
        let mut ts = Vec::new();
        for (c, core) in self.cores.iter().enumerate() {
            if core.pending.is_none() && core.pc < prog[c].len() {
                // Pre-filter the guaranteed-retry case (block in flight).
                let op = prog[c][core.pc];
                if self.l1s[c].mshr_view(op.block).is_none() {
                    ts.push(Transition::Issue { core: c });
                }
            }
        }
        for (c, l1) in self.l1s.iter().enumerate() {
            let blocks: Vec<Block> = l1.stable_lines().map(|(b, _, _)| b).collect();
            for b in blocks {
                ts.push(Transition::Evict { core: c, block: b });
            }
        }
        for (key, msgs) in &self.channels {
            for idx in 0..msgs.len() {
                // Identical in-flight copies are interchangeable; explore one.
                if idx > 0 && msgs[idx] == msgs[idx - 1] {
                    continue;
                }
                if matches!(key.1, NodeId::Bank(_)) && self.bank.would_stall(&msgs[idx]) {
                    continue;
                }
                ts.push(Transition::Deliver { key: *key, idx });
            }
        }
        ts
    }

    fn describe(&self, t: &Transition, prog: &Program) -> String {
        match t {
            Transition::Issue { core } => {
                let op = prog[*core][self.cores[*core].pc];
                format!(
                    "core {core} issues {:?} block {:#x} (value {})",
                    op.kind, op.block, op.value
                )
            }
            Transition::Evict { core, block } => format!("core {core} evicts block {block:#x}"),
            Transition::Deliver { key, idx } => {
                let m = &self.channels[key][*idx];
                format!(
                    "deliver {} {} -> {} block {:#x} (txn {})",
                    m.kind, m.src, m.dst, m.block, m.txn
                )
            }
        }
    }

    /// Apply one transition; `Err` is a violation description.
    fn apply(&mut self, t: &Transition, prog: &Program, mode: Mode, stats: &mut Stats) -> Result<(), String> {
        match t {
            Transition::Issue { core } => {
                let c = *core;
                let pc = self.cores[c].pc;
                let op = prog[c][pc];
                // Unique across cores even when per-core op counts differ.
                let before: usize = prog[..c].iter().map(|p| p.len()).sum();
                let txn = 1 + (before + pc) as TxnId;
                let nblocks = 64; // id spacing only; must exceed any block index
                let mut evict_txn =
                    |b: Block| EVICT_TXN_BASE + (c as u64) * nblocks + b;
                let (status, fx) =
                    self.l1s[c].handle_core_op(op, txn, &mut evict_txn, 0, mode);
                match status {
                    CoreOpStatus::Hit { .. } => {
                        self.cores[c].pc += 1;
                    }
                    CoreOpStatus::Miss => {
                        self.cores[c].pending = Some((txn, op));
                    }
                    CoreOpStatus::Retry => {}
                }
                self.absorb(fx, mode, stats)
            }
            Transition::Evict { core, block } => {
                let c = *core;
                let etxn = EVICT_TXN_BASE + (c as u64) * 64 + *block;
                if let Some(fx) = self.l1s[c].evict_block(*block, etxn, 0, mode) {
                    self.absorb(fx, mode, stats)
                } else {
                    Ok(())
                }
            }
            Transition::Deliver { key, idx } => {
                let msg = {
                    let v = self.channels.get_mut(key).expect("channel exists");
                    let m = v.remove(*idx);
                    if v.is_empty() {
                        self.channels.remove(key);
                    }
                    m
                };
                let fx = match msg.dst {
                    NodeId::L1(c) => self.l1s[c as usize]
                        .handle_message(&msg, 0, mode)
                        .map_err(|e| e.to_string())?,
                    NodeId::Bank(_) => match self
                        .bank
                        .handle_message(&msg, mode)
                        .map_err(|e| e.to_string())?
                    {
                        crate::protocol::directory::DirOutcome::Done(fx) => fx,
                        crate::protocol::directory::DirOutcome::Stall => {
                            return Err(format!(
                                "message stalled past its delivery guard: {} for {:#x}",
                                msg.kind, msg.block
                            ))
                        }
                    },
                    NodeId::Mem(_) => self.mem.handle_message(&msg).map_err(|e| e.to_string())?,
                };
                self.absorb(fx, mode, stats)
            }
        }
    }

    /// Route produced messages and fold events into ghosts and oracles.
    fn absorb(&mut self, fx: Effects, mode: Mode, stats: &mut Stats) -> Result<(), String> {
        for ev in &fx.events {
            match *ev {
                ProtocolEvent::Serialized {
                    txn,
                    block,
                    inner,
                    action,
                } => {
                    let last = self.ghosts.last_store.get(&block).copied().unwrap_or(0);
                    match action {
                        SerializedAction::Read(GrantSource::L2Direct { value }) => {
                            if value != last {
                                return Err(format!(
                                    "read of block {block:#x} serialized against value {value}, \
                                     but the latest store wrote {last}"
                                ));
                            }
                            self.ghosts.expected.insert(txn, value);
                        }
                        SerializedAction::Read(GrantSource::Owner) => {
                            self.ghosts.expected_from_owner.insert(txn);
                        }
                        SerializedAction::Read(GrantSource::Memory) => {
                            if last != 0 {
                                return Err(format!(
                                    "block {block:#x} fetched from memory although a store \
                                     ({last}) was already serialized"
                                ));
                            }
                            self.ghosts.expected.insert(txn, self.mem.value(block));
                        }
                        SerializedAction::Write(GrantSource::L2Direct { value }) => {
                            if value != last {
                                return Err(format!(
                                    "write grant for block {block:#x} carries {value}, \
                                     but the latest store wrote {last}"
                                ));
                            }
                        }
                        SerializedAction::Write(GrantSource::Memory) if last != 0 => {
                            return Err(format!(
                                "block {block:#x} fetched from memory although a store \
                                 ({last}) was already serialized"
                            ));
                        }
                        SerializedAction::Write(_) | SerializedAction::Writeback => {}
                    }
                    // Sequence-number oracle.
                    let count = self.ghosts.ser_count.entry(block).or_insert(0);
                    match (mode, inner) {
                        (Mode::Baseline, None) => {}
                        (Mode::Ppb, Some(i)) => {
                            let want = (*count % 64) as u8;
                            if i != want {
                                return Err(format!(
                                    "block {block:#x} serialization {} numbered {i}, expected {want}",
                                    *count
                                ));
                            }
                            let dup = self
                                .ghosts
                                .active_inner
                                .iter()
                                .any(|((b, _), li)| *b == block && *li == i);
                            if dup {
                                return Err(format!(
                                    "sequence number {i} for block {block:#x} issued while \
                                     still live on another transaction"
                                ));
                            }
                            self.ghosts.active_inner.insert((block, txn), i);
                        }
                        (m, i) => {
                            return Err(format!(
                                "mode {m:?} but serialization numbered {i:?}"
                            ));
                        }
                    }
                    *count += 1;
                }
                ProtocolEvent::OwnerSupplied { txn, block, value } => {
                    if self.ghosts.expected_from_owner.remove(&txn) {
                        let last = self.ghosts.last_store.get(&block).copied().unwrap_or(0);
                        if value != last {
                            return Err(format!(
                                "owner supplied {value} for block {block:#x}, but the latest \
                                 store wrote {last}"
                            ));
                        }
                        self.ghosts.expected.insert(txn, value);
                    }
                }
                ProtocolEvent::LoadRetired {
                    core,
                    txn,
                    block,
                    value,
                } => {
                    if let Some(exp) = self.ghosts.expected.remove(&txn) {
                        if value != exp {
                            return Err(format!(
                                "core {core} load of block {block:#x} returned {value}, \
                                 expected {exp} (txn {txn})"
                            ));
                        }
                    } else {
                        let last = self.ghosts.last_store.get(&block).copied().unwrap_or(0);
                        if value != last {
                            return Err(format!(
                                "core {core} load hit on block {block:#x} returned {value}, \
                                 but the latest store wrote {last}"
                            ));
                        }
                    }
                    if let Some((ptxn, _)) = self.cores[core].pending {
                        if ptxn == txn {
                            self.cores[core].pending = None;
                            self.cores[core].pc += 1;
                        }
                    }
                }
                ProtocolEvent::StoreRetired {
                    core, txn, block, value, ..
                } => {
                    self.ghosts.last_store.insert(block, value);
                    if let Some((ptxn, _)) = self.cores[core].pending {
                        if ptxn == txn {
                            self.cores[core].pending = None;
                            self.cores[core].pc += 1;
                        }
                    }
                }
                ProtocolEvent::InvWhileFilling { .. } => {
                    stats.race_fills += 1;
                }
                ProtocolEvent::FwdHeldAtL1 { .. } => {}
                ProtocolEvent::EvictDone { txn, block, .. }
                | ProtocolEvent::TxnClosed { txn, block } => {
                    self.ghosts.active_inner.remove(&(block, txn));
                }
            }
        }
        self.push_msgs(fx.msgs);
        Ok(())
    }

    /// Whole-state invariants, independent of how the state was reached.
    fn check_state(&self, blocks: u64) -> Option<String> {
        for block in 0..blocks {
            let mut owners: Vec<usize> = Vec::new();
            let mut sharers: Vec<usize> = Vec::new();
            for (c, l1) in self.l1s.iter().enumerate() {
                match l1.probe(block) {
                    Probe::Stable(StableState::E, _) | Probe::Stable(StableState::M, _) => {
                        owners.push(c)
                    }
                    Probe::Stable(StableState::S, _) => sharers.push(c),
                    _ => {}
                }
            }
            if owners.len() > 1 {
                return Some(format!(
                    "block {block:#x} owned (E/M) by multiple cores: {owners:?}"
                ));
            }
            if owners.len() == 1 && !sharers.is_empty() {
                return Some(format!(
                    "block {block:#x} owned by core {} while shared by {sharers:?}",
                    owners[0]
                ));
            }

            let entry = self.bank.entry(block);
            let busy = entry.map(|e| e.state.is_busy()).unwrap_or(false);
            if busy {
                continue;
            }
            for (c, l1) in self.l1s.iter().enumerate() {
                match l1.probe(block) {
                    Probe::Stable(StableState::S, v) => {
                        let e = match entry {
                            Some(e) => e,
                            None => {
                                return Some(format!(
                                    "core {c} holds block {block:#x} S but the directory has \
                                     no record"
                                ))
                            }
                        };
                        if !e.l2_valid || e.l2_value != v {
                            return Some(format!(
                                "core {c} S copy of block {block:#x} is {v} but the L2 holds \
                                 {:?}",
                                (e.l2_valid, e.l2_value)
                            ));
                        }
                        if !e.sharers.contains(&c) {
                            return Some(format!(
                                "core {c} holds block {block:#x} S but is not a recorded sharer"
                            ));
                        }
                    }
                    Probe::Stable(StableState::E, v) => {
                        let e = entry.expect("owned block must have a record");
                        if e.owner != Some(c) {
                            return Some(format!(
                                "core {c} holds block {block:#x} E but the directory owner \
                                 is {:?}",
                                e.owner
                            ));
                        }
                        if !e.l2_valid || e.l2_value != v {
                            return Some(format!(
                                "core {c} E copy of block {block:#x} is {v} but the L2 holds \
                                 {:?}",
                                (e.l2_valid, e.l2_value)
                            ));
                        }
                    }
                    Probe::Stable(StableState::M, _) => {
                        let e = entry.expect("owned block must have a record");
                        if e.owner != Some(c) {
                            return Some(format!(
                                "core {c} holds block {block:#x} M but the directory owner \
                                 is {:?}",
                                e.owner
                            ));
                        }
                    }
                    _ => {}
                }
            }
        }
        None
    }

    /// True when every program finished and nothing is in flight.
    fn terminal_ok(&self, prog: &Program) -> bool {
        self.cores
            .iter()
            .enumerate()
            .all(|(c, s)| s.pending.is_none() && s.pc == prog[c].len())
            && self.channels.is_empty()
            && self.l1s.iter().all(|l| l.quiescent())
            && self.bank.quiescent()
    }

    fn fingerprint(&self) -> u128 {
        let mut bytes = Vec::with_capacity(512);
        self.canon(&mut bytes);
        let h1 = fnv1a(&bytes, 0xcbf2_9ce4_8422_2325);
        let h2 = fnv1a(&bytes, 0x6c62_272e_07bb_0142);
        ((h1 as u128) << 64) | h2 as u128
    }

    fn canon(&self, out: &mut Vec<u8>) {
        for cs in &self.cores {
            push_u64(out, cs.pc as u64);
            match &cs.pending {
                None => out.push(0),
                Some((txn, op)) => {
                    out.push(1);
                    push_u64(out, *txn);
                    canon_op(out, op);
                }
            }
        }
        for l1 in &self.l1s {
            let mut lines: Vec<_> = l1.stable_lines().collect();
            lines.sort_unstable();
            push_u64(out, lines.len() as u64);
            for (b, st, v) in lines {
                push_u64(out, b);
                out.push(st as u8);
                push_u64(out, v);
            }
            push_u64(out, l1.mshr_len() as u64);
            for (b, entry) in l1.mshrs() {
                push_u64(out, *b);
                match entry {
                    MshrEntry::Fetch(f) => canon_fetch(out, f),
                    MshrEntry::Evict(e) => canon_evict(out, e),
                }
            }
        }
        for (b, e) in self.bank.entries() {
            push_u64(out, *b);
            canon_dir_state(out, &e.state);
            push_u64(out, e.sharers.len() as u64);
            for s in &e.sharers {
                push_u64(out, *s as u64);
            }
            match e.owner {
                None => out.push(0),
                Some(o) => {
                    out.push(1);
                    push_u64(out, o as u64);
                }
            }
            out.push(e.l2_valid as u8);
            push_u64(out, e.l2_value);
            out.push(e.dirty as u8);
            push_u64(out, e.inflight.len() as u64);
            for (t, c) in &e.inflight {
                push_u64(out, *t);
                push_u64(out, *c as u64);
            }
        }
        out.push(0xfe);
        for (addr, last) in self.bank.inner_entries() {
            push_u64(out, addr);
            out.push(last);
        }
        out.push(0xfd);
        for ((src, dst), msgs) in &self.channels {
            canon_node(out, *src);
            canon_node(out, *dst);
            push_u64(out, msgs.len() as u64);
            for m in msgs {
                canon_msg(out, m);
            }
        }
        out.push(0xfc);
        for (b, v) in &self.ghosts.last_store {
            push_u64(out, *b);
            push_u64(out, *v);
        }
        for (t, v) in &self.ghosts.expected {
            push_u64(out, *t);
            push_u64(out, *v);
        }
        for t in &self.ghosts.expected_from_owner {
            push_u64(out, *t);
        }
        for (b, n) in &self.ghosts.ser_count {
            push_u64(out, *b);
            push_u64(out, *n);
        }
        for ((b, t), i) in &self.ghosts.active_inner {
            push_u64(out, *b);
            push_u64(out, *t);
            out.push(*i);
        }
    }
}

#[derive(Default)]
struct Stats {
    race_fills: u64,
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn canon_op(out: &mut Vec<u8>, op: &CoreOp) {
    out.push(match op.kind {
        OpKind::Load => 0,
        OpKind::Store => 1,
    });
    push_u64(out, op.block);
    push_u64(out, op.value);
}

fn canon_node(out: &mut Vec<u8>, n: NodeId) {
    match n {
        NodeId::L1(i) => {
            out.push(0);
            push_u64(out, i as u64);
        }
        NodeId::Bank(i) => {
            out.push(1);
            push_u64(out, i as u64);
        }
        NodeId::Mem(i) => {
            out.push(2);
            push_u64(out, i as u64);
        }
    }
}

fn canon_msg(out: &mut Vec<u8>, m: &Message) {
    push_u64(out, m.txn);
    out.push(m.kind as u8);
    canon_node(out, m.src);
    canon_node(out, m.dst);
    push_u64(out, m.block);
    push_u64(out, m.value);
    out.push(m.ack_count);
    match m.requestor {
        None => out.push(0),
        Some(r) => {
            out.push(1);
            canon_node(out, r);
        }
    }
    match m.tag {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            out.push(crate::phase::encode_tag(t));
        }
    }
}

fn canon_fetch(out: &mut Vec<u8>, f: &FetchMshr) {
    out.push(0);
    out.push(f.state as u8);
    canon_op(out, &f.op);
    push_u64(out, f.txn);
    match f.acks_needed {
        None => out.push(0xff),
        Some(n) => out.push(n),
    }
    out.push(f.acks_got);
    out.push(f.inv_while_filling as u8);
    match &f.held_fwd {
        None => out.push(0),
        Some(m) => {
            out.push(1);
            canon_msg(out, m);
        }
    }
    out.push(f.reserved as u8);
}

fn canon_evict(out: &mut Vec<u8>, e: &EvictMshr) {
    out.push(1);
    out.push(e.state as u8);
    push_u64(out, e.txn);
    push_u64(out, e.value);
}

fn canon_dir_state(out: &mut Vec<u8>, s: &DirState) {
    use crate::protocol::directory::{BusyMeta, MemFill, PendingCommit};
    let meta = |out: &mut Vec<u8>, m: &BusyMeta| {
        push_u64(out, m.txn);
        push_u64(out, m.requestor as u64);
        out.push(m.need_unblock as u8);
        out.push(m.need_wbcopy as u8);
        match &m.commit {
            PendingCommit::ToShared {
                requestor,
                prev_owner,
            } => {
                out.push(0);
                push_u64(out, *requestor as u64);
                push_u64(out, *prev_owner as u64);
            }
            PendingCommit::ToExclusive { requestor } => {
                out.push(1);
                push_u64(out, *requestor as u64);
            }
        }
        out.push(m.inner.map(|i| i + 1).unwrap_or(0));
    };
    let fill = |out: &mut Vec<u8>, m: &MemFill| {
        push_u64(out, m.txn);
        push_u64(out, m.requestor as u64);
        out.push(m.read as u8);
        out.push(m.inner.map(|i| i + 1).unwrap_or(0));
    };
    match s {
        DirState::Invalid => out.push(0),
        DirState::Shared => out.push(1),
        DirState::Exclusive => out.push(2),
        DirState::BusyRd(m) => {
            out.push(3);
            meta(out, m);
        }
        DirState::BusyWr(m) => {
            out.push(4);
            meta(out, m);
        }
        DirState::BusyWb(m) => {
            out.push(5);
            meta(out, m);
        }
        DirState::BusyMem(m) => {
            out.push(6);
            fill(out, m);
        }
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = seed;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Frame {
    world: World,
    ts: Vec<Transition>,
    next: usize,
}

/// Explore every reachable state of the configured small system.
pub fn check(opts: &CheckOptions) -> CheckReport {
    let prog = opts
        .program
        .clone()
        .unwrap_or_else(|| default_program(opts.cores, opts.blocks, opts.ops));
    assert_eq!(prog.len(), opts.cores, "one program per core");
    assert!(
        opts.blocks <= 32,
        "checker geometry assumes a handful of blocks"
    );

    let mut stats = Stats::default();
    let init = World::new(opts);
    if let Some(desc) = init.check_state(opts.blocks) {
        return violation_report(opts, &prog, desc.clone(), 1, 0, stats);
    }

    let mut visited: HashSet<u128> = HashSet::new();
    visited.insert(init.fingerprint());
    let init_ts = init.enabled(&prog);
    let mut stack = vec![Frame {
        world: init,
        ts: init_ts,
        next: 0,
    }];
    let mut states: u64 = 1;
    let mut transitions: u64 = 0;

    while let Some(top) = stack.last_mut() {
        if top.next >= top.ts.len() {
            if top.ts.is_empty() && !top.world.terminal_ok(&prog) {
                return violation_report(
                    opts,
                    &prog,
                    "deadlock: no transition enabled but the system is not done".into(),
                    states,
                    transitions,
                    stats,
                );
            }
            stack.pop();
            continue;
        }
        let t = top.ts[top.next].clone();
        top.next += 1;
        let mut child = top.world.clone();
        transitions += 1;
        if let Err(desc) = child.apply(&t, &prog, opts.mode, &mut stats) {
            return violation_report(opts, &prog, desc, states, transitions, stats);
        }
        let fp = child.fingerprint();
        if !visited.insert(fp) {
            continue;
        }
        states += 1;
        if states > opts.max_states {
            return CheckReport {
                passed: false,
                states,
                transitions,
                bound_hit: true,
                violation: None,
                race_fills: stats.race_fills,
            };
        }
        if let Some(desc) = child.check_state(opts.blocks) {
            return violation_report(opts, &prog, desc, states, transitions, stats);
        }
        let ts = child.enabled(&prog);
        stack.push(Frame {
            world: child,
            ts,
            next: 0,
        });
    }

    CheckReport {
        passed: true,
        states,
        transitions,
        bound_hit: false,
        violation: None,
        race_fills: stats.race_fills,
    }
}

/// Re-explore breadth-first to attach a shortest event path to a failure.
fn violation_report(
    opts: &CheckOptions,
    prog: &Program,
    dfs_desc: String,
    states: u64,
    transitions: u64,
    stats: Stats,
) -> CheckReport {
    let (desc, trace) = bfs_shortest_violation(opts, prog).unwrap_or((dfs_desc, Vec::new()));
    CheckReport {
        passed: false,
        states,
        transitions,
        bound_hit: false,
        violation: Some(Violation { desc, trace }),
        race_fills: stats.race_fills,
    }
}

fn bfs_shortest_violation(opts: &CheckOptions, prog: &Program) -> Option<(String, Vec<String>)> {
    let mut stats = Stats::default();
    let init = World::new(opts);
    let init_fp = init.fingerprint();
    if let Some(desc) = init.check_state(opts.blocks) {
        return Some((desc, Vec::new()));
    }
    let mut parents: HashMap<u128, (u128, String)> = HashMap::new();
    let mut queue: VecDeque<World> = VecDeque::new();
    queue.push_back(init);
    let mut seen: HashSet<u128> = HashSet::new();
    seen.insert(init_fp);
    let mut expanded: u64 = 0;

    let path_to = |parents: &HashMap<u128, (u128, String)>, mut fp: u128| -> Vec<String> {
        let mut steps = Vec::new();
        while let Some((p, desc)) = parents.get(&fp) {
            steps.push(desc.clone());
            fp = *p;
        }
        steps.reverse();
        steps
    };

    while let Some(w) = queue.pop_front() {
        expanded += 1;
        if expanded > opts.max_states {
            return None;
        }
        let fp = w.fingerprint();
        let ts = w.enabled(prog);
        if ts.is_empty() && !w.terminal_ok(prog) {
            return Some((
                "deadlock: no transition enabled but the system is not done".into(),
                path_to(&parents, fp),
            ));
        }
        for t in &ts {
            let mut child = w.clone();
            let step = w.describe(t, prog);
            if let Err(desc) = child.apply(t, prog, opts.mode, &mut stats) {
                let mut trace = path_to(&parents, fp);
                trace.push(step);
                return Some((desc, trace));
            }
            let cfp = child.fingerprint();
            if !seen.insert(cfp) {
                continue;
            }
            if let Some(desc) = child.check_state(opts.blocks) {
                let mut trace = path_to(&parents, fp);
                trace.push(step);
                return Some((desc, trace));
            }
            parents.insert(cfp, (fp, step));
            queue.push_back(child);
        }
    }
    None
}
