//! Cycle-driven timing engine: trace-fed cores, protocol controllers, and
//! the mesh fabric advance in a fixed in-cycle phase order, so a run is a
//! pure function of (config, trace).
//!
//! Phases within one cycle:
//! 1. fabric arrivals land in endpoint input queues;
//! 2. each controller (cache, directory bank, memory) consumes at most one
//!    message per input queue. A directory bank has two queues mirroring
//!    the fabric's class split — requests, and responses which can never
//!    wait behind them — and leaves a request queued while its target
//!    block is mid-transaction (counted as an L2 stall);
//! 3. each core issues at most one trace reference (one outstanding miss
//!    per core);
//! 4. messages whose controller latency elapsed enter the fabric, then
//!    every injection interface and router advances one cycle.
//!
//! The run ends when the trace, all queues, and the fabric are empty; if
//! nothing moves for the configured drain limit, the run aborts with a
//! deadlock report.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::config::SystemConfig;
use crate::metrics::{Energy, Fingerprint, Report};
use crate::noc::Network;
use crate::phase::{encode_tag, OuterPhase, PhaseTag};
use crate::protocol::directory::{Bank, DirOutcome};
use crate::protocol::l1::{CoreOp, CoreOpStatus, L1Cache, OpKind, StableState};
use crate::protocol::memory::MemoryCtrl;
use crate::protocol::{Effects, Message, Mutation, ProtocolEvent};
use crate::types::{Block, Cycle, Mode, NodeId, TxnId};
use crate::workload::TraceOp;

#[derive(Error, Debug)]
pub enum SimError {
    /// A controller saw a state/message combination that cannot occur in
    /// a correct run; the simulated hardware is broken, not the workload.
    #[error("protocol failure at cycle {cycle}: {detail}")]
    Protocol { cycle: Cycle, detail: String },
    /// No component made progress for the configured drain limit.
    #[error("deadlock at cycle {cycle}: {detail}")]
    Deadlock { cycle: Cycle, detail: String },
    #[error("trace references core {core}, but the system has {cores}")]
    BadCore { core: usize, cores: usize },
}

/// One delivered message, as written to the flit log: enough to audit
/// in-network latency per message kind and priority class after the fact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub eject: Cycle,
    pub enqueue: Cycle,
    /// `None` for same-tile messages, which never enter the fabric.
    pub inject: Option<Cycle>,
    pub hops: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: crate::protocol::MessageKind,
    pub block: Block,
    pub tag: Option<PhaseTag>,
}

impl std::fmt::Display for DeliveryRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} {} {} block={:#x} tag={} enq={} inj={} hops={}",
            self.eject,
            self.src,
            self.dst,
            self.kind,
            self.block,
            match self.tag {
                Some(t) => format!("{:#04x}", encode_tag(t)),
                None => "-".into(),
            },
            self.enqueue,
            match self.inject {
                Some(c) => c.to_string(),
                None => "-".into(),
            },
            self.hops,
        )
    }
}

/// Between-runs check interval for the ownership invariant scan.
const INVARIANT_SCAN_INTERVAL: Cycle = 8_192;

struct CorePending {
    txn: TxnId,
    issued: Cycle,
}

type InQueue = VecDeque<(Message, Cycle)>;

struct Engine {
    cfg: SystemConfig,
    mode: Mode,
    net: Network,
    l1s: Vec<L1Cache>,
    banks: Vec<Bank>,
    mems: Vec<MemoryCtrl>,
    l1_q: Vec<InQueue>,
    bank_req_q: Vec<InQueue>,
    bank_resp_q: Vec<InQueue>,
    mem_q: Vec<InQueue>,
    /// Heads already counted as stalled (one count per queued message).
    bank_stall_counted: Vec<bool>,
    out_delay: BTreeMap<Cycle, Vec<Message>>,
    trace_q: Vec<VecDeque<TraceOp>>,
    pending: Vec<Option<CorePending>>,
    next_txn: TxnId,
    store_seq: u64,
    report: Report,
    exec_fp: Fingerprint,
    last_retire: Cycle,
    last_activity: Cycle,
    log: Option<Vec<DeliveryRecord>>,
}

/// Runs a trace to completion and reports what happened.
pub fn run(cfg: &SystemConfig, trace: &[TraceOp]) -> Result<Report, SimError> {
    run_with(cfg, trace, Mutation::None)
}

/// [`run`] with a protocol mutation enabled; exists so tests can prove the
/// engine detects broken hardware instead of silently hanging.
pub fn run_with(
    cfg: &SystemConfig,
    trace: &[TraceOp],
    mutation: Mutation,
) -> Result<Report, SimError> {
    let mut eng = Engine::new(cfg, trace, mutation)?;
    eng.run()?;
    Ok(eng.finish(trace))
}

/// [`run`], additionally returning every message delivery in delivery
/// order (the flit log fed to `replay` and determinism checks).
pub fn run_logged(
    cfg: &SystemConfig,
    trace: &[TraceOp],
) -> Result<(Report, Vec<DeliveryRecord>), SimError> {
    let mut eng = Engine::new(cfg, trace, Mutation::None)?;
    eng.log = Some(Vec::new());
    eng.run()?;
    let log = eng.log.take().unwrap_or_default();
    Ok((eng.finish(trace), log))
}

impl Engine {
    fn new(cfg: &SystemConfig, trace: &[TraceOp], mutation: Mutation) -> Result<Engine, SimError> {
        let cores = cfg.cores;
        let mut trace_q: Vec<VecDeque<TraceOp>> = vec![VecDeque::new(); cores];
        for op in trace {
            if op.core >= cores {
                return Err(SimError::BadCore {
                    core: op.core,
                    cores,
                });
            }
            trace_q[op.core].push_back(*op);
        }
        let l1s = (0..cores)
            .map(|c| {
                let mut l1 = L1Cache::new(c, cfg.l1_sets(), cfg.l1_assoc, cfg.l1_mshrs, cores as u64);
                l1.set_mutation(mutation);
                l1
            })
            .collect();
        let banks = (0..cores)
            .map(|b| Bank::new(b, cfg.inner_buffer_entries, cfg.mem_controllers as u64))
            .collect();
        let mems = (0..cfg.mem_controllers)
            .map(MemoryCtrl::new)
            .collect();
        let mut report = Report {
            mode: cfg.mode.as_str().into(),
            seed: cfg.seed,
            ..Report::default()
        };
        report.trace_fingerprint = trace_fingerprint(cfg, trace);
        Ok(Engine {
            cfg: cfg.clone(),
            mode: cfg.mode,
            net: Network::new(cfg),
            l1s,
            banks,
            mems,
            l1_q: vec![InQueue::new(); cores],
            bank_req_q: vec![InQueue::new(); cores],
            bank_resp_q: vec![InQueue::new(); cores],
            mem_q: vec![InQueue::new(); cfg.mem_controllers],
            bank_stall_counted: vec![false; cores],
            out_delay: BTreeMap::new(),
            trace_q,
            pending: (0..cores).map(|_| None).collect(),
            next_txn: 1,
            store_seq: 0,
            report,
            exec_fp: Fingerprint::new(),
            last_retire: 0,
            last_activity: 0,
            log: None,
        })
    }

    fn run(&mut self) -> Result<(), SimError> {
        if self.done() {
            // Nothing to simulate; the report stays all zeros.
            return Ok(());
        }
        let drain_limit = self.cfg.drain_limit;
        let mut now: Cycle = 1;
        loop {
            self.arrivals(now);
            self.controllers(now)?;
            self.cores(now)?;
            self.transfer(now);

            if now % INVARIANT_SCAN_INTERVAL == 0 {
                self.ownership_scan(now)?;
            }
            if self.done() {
                self.ownership_scan(now)?;
                self.report.cycles = now;
                return Ok(());
            }
            if let Some(skip) = self.idle_skip_target(now) {
                // Nothing in flight and the next trace tick is far away:
                // jump straight to it.
                self.last_activity = skip - 1;
                now = skip;
                continue;
            }
            if now.saturating_sub(self.last_activity) > drain_limit {
                return Err(SimError::Deadlock {
                    cycle: now,
                    detail: self.deadlock_detail(),
                });
            }
            now += 1;
        }
    }

    /// Phase 1: land fabric deliveries in endpoint queues.
    fn arrivals(&mut self, now: Cycle) {
        for d in self.net.phase_arrivals(now) {
            let delay = d.eject - d.enqueue;
            self.report.noc_cycles += delay;
            self.report
                .noc_by_kind
                .entry(d.msg.kind.as_str().into())
                .or_default()
                .record(delay);
            let class = match d.msg.tag {
                None => "Untagged",
                Some(t) => match t.outer {
                    OuterPhase::Untagged => "Untagged",
                    OuterPhase::Request => "Request",
                    OuterPhase::Ordered => "Ordered",
                    OuterPhase::Memory => "Memory",
                },
            };
            self.report
                .noc_by_class
                .entry(class.into())
                .or_default()
                .record(delay);
            *self.report.noc_delay_hist.entry(delay).or_insert(0) += 1;
            self.report.msgs_delivered += 1;
            self.last_activity = now;
            if let Some(log) = self.log.as_mut() {
                log.push(DeliveryRecord {
                    eject: d.eject,
                    enqueue: d.enqueue,
                    inject: d.inject,
                    hops: d.hops,
                    src: d.msg.src,
                    dst: d.msg.dst,
                    kind: d.msg.kind,
                    block: d.msg.block,
                    tag: d.msg.tag,
                });
            }
            match d.msg.dst {
                NodeId::L1(c) => self.l1_q[c as usize].push_back((d.msg, now)),
                NodeId::Bank(b) => {
                    let q = if matches!(crate::noc::vnet_of(d.msg.kind), crate::noc::Vnet::Request)
                    {
                        &mut self.bank_req_q[b as usize]
                    } else {
                        &mut self.bank_resp_q[b as usize]
                    };
                    q.push_back((d.msg, now));
                }
                NodeId::Mem(m) => self.mem_q[m as usize].push_back((d.msg, now)),
            }
        }
    }

    /// Phase 2: every controller consumes at most one message.
    fn controllers(&mut self, now: Cycle) -> Result<(), SimError> {
        let l1_lat = self.cfg.l1_latency as u64;
        let l2_lat = self.cfg.l2_latency as u64;
        let mem_lat = self.cfg.mem_latency as u64;

        for c in 0..self.l1s.len() {
            let Some((msg, enq)) = self.l1_q[c].pop_front() else {
                continue;
            };
            self.report.queue_cycles += now - enq;
            self.report.controller_cycles += l1_lat;
            self.last_activity = now;
            let fx = self.l1s[c]
                .handle_message(&msg, now, self.mode)
                .map_err(|e| SimError::Protocol {
                    cycle: now,
                    detail: format!("{} handling {}: {e}", NodeId::L1(c as u16), msg.kind),
                })?;
            self.absorb(fx, now, now + l1_lat);
        }

        for b in 0..self.banks.len() {
            // Responses first: they complete work and can never stall.
            if let Some((msg, enq)) = self.bank_resp_q[b].pop_front() {
                self.report.queue_cycles += now - enq;
                self.report.controller_cycles += l2_lat;
                self.last_activity = now;
                let fx = self.bank_handle(b, &msg, now)?;
                self.absorb(fx, now, now + l2_lat);
            }
            let stall = match self.bank_req_q[b].front() {
                Some((msg, _)) => self.banks[b].would_stall(msg),
                None => continue,
            };
            if stall {
                self.report.l2_stalls += 1;
                if !self.bank_stall_counted[b] {
                    self.report.l2_stall_events += 1;
                    self.bank_stall_counted[b] = true;
                }
                continue;
            }
            self.bank_stall_counted[b] = false;
            let (msg, enq) = self.bank_req_q[b].pop_front().expect("head peeked");
            self.report.queue_cycles += now - enq;
            self.report.controller_cycles += l2_lat;
            self.last_activity = now;
            let fx = self.bank_handle(b, &msg, now)?;
            self.absorb(fx, now, now + l2_lat);
        }

        for m in 0..self.mems.len() {
            let Some((msg, enq)) = self.mem_q[m].pop_front() else {
                continue;
            };
            self.report.queue_cycles += now - enq;
            self.last_activity = now;
            let fx = self.mems[m]
                .handle_message(&msg)
                .map_err(|e| SimError::Protocol {
                    cycle: now,
                    detail: format!("{} handling {}: {e}", NodeId::Mem(m as u16), msg.kind),
                })?;
            // Only an access that answers (a read) pays the array latency.
            let ready = if fx.msgs.is_empty() {
                self.report.controller_cycles += 1;
                now + 1
            } else {
                self.report.controller_cycles += mem_lat;
                now + mem_lat
            };
            self.absorb(fx, now, ready);
        }
        Ok(())
    }

    /// One bank message, with stalls already ruled out by the caller.
    fn bank_handle(&mut self, b: usize, msg: &Message, now: Cycle) -> Result<Effects, SimError> {
        let outcome = self.banks[b]
            .handle_message(msg, self.mode)
            .map_err(|e| SimError::Protocol {
                cycle: now,
                detail: format!("{} handling {}: {e}", NodeId::Bank(b as u16), msg.kind),
            })?;
        match outcome {
            DirOutcome::Done(fx) => Ok(fx),
            DirOutcome::Stall => Err(SimError::Protocol {
                cycle: now,
                detail: format!(
                    "{} stalled a message its guard admitted: {} for {:#x}",
                    NodeId::Bank(b as u16),
                    msg.kind,
                    msg.block
                ),
            }),
        }
    }

    /// Phase 3: cores issue trace references.
    fn cores(&mut self, now: Cycle) -> Result<(), SimError> {
        let l1_lat = self.cfg.l1_latency as u64;
        for c in 0..self.l1s.len() {
            if self.pending[c].is_some() {
                continue;
            }
            let Some(&front) = self.trace_q[c].front() else {
                continue;
            };
            if front.tick > now {
                continue;
            }
            let block = front.addr / self.cfg.block_size as u64;
            let value = match front.kind {
                OpKind::Load => 0,
                OpKind::Store => {
                    self.store_seq += 1;
                    self.store_seq
                }
            };
            let op = CoreOp {
                kind: front.kind,
                block,
                value,
            };
            let txn = self.next_txn;
            self.next_txn += 1;
            let mut next_evict_txn = self.next_txn;
            let (status, fx) = self.l1s[c].handle_core_op(
                op,
                txn,
                &mut |_| {
                    let t = next_evict_txn;
                    next_evict_txn += 1;
                    t
                },
                now,
                self.mode,
            );
            self.next_txn = next_evict_txn;
            match status {
                CoreOpStatus::Hit { .. } => {
                    self.trace_q[c].pop_front();
                    self.report.ops_issued += 1;
                    self.report.l1_hits += 1;
                    self.count_op(front.kind);
                    self.report.txn_latency.record(l1_lat);
                    self.report.txns_completed += 1;
                    self.last_retire = now;
                    self.last_activity = now;
                }
                CoreOpStatus::Miss => {
                    self.trace_q[c].pop_front();
                    self.report.ops_issued += 1;
                    self.report.l1_misses += 1;
                    self.count_op(front.kind);
                    self.pending[c] = Some(CorePending { txn, issued: now });
                    self.last_activity = now;
                }
                CoreOpStatus::Retry => {}
            }
            self.absorb(fx, now, now + l1_lat);
        }
        Ok(())
    }

    /// Phase 4: release due messages into the fabric and advance it.
    fn transfer(&mut self, now: Cycle) {
        for msg in self.out_delay.remove(&now).unwrap_or_default() {
            self.report.msgs_sent += 1;
            *self
                .report
                .sent_by_kind
                .entry(msg.kind.as_str().into())
                .or_insert(0) += 1;
            self.last_activity = now;
            self.net.send(msg, now);
        }
        self.net.phase_transfer(now);
    }

    /// Fold controller output into the engine: messages are released after
    /// the controller's latency; events update cores and counters.
    fn absorb(&mut self, fx: Effects, now: Cycle, ready: Cycle) {
        if !fx.msgs.is_empty() {
            self.out_delay.entry(ready).or_default().extend(fx.msgs);
        }
        for ev in fx.events {
            match ev {
                ProtocolEvent::LoadRetired {
                    core,
                    txn,
                    block,
                    value,
                }
                | ProtocolEvent::StoreRetired {
                    core,
                    txn,
                    block,
                    value,
                } => {
                    self.exec_fp.push_u64(now);
                    self.exec_fp.push_u64(core as u64);
                    self.exec_fp.push_u64(txn);
                    self.exec_fp.push_u64(block);
                    self.exec_fp.push_u64(value);
                    if let Some(p) = &self.pending[core] {
                        if p.txn == txn {
                            self.report.txn_latency.record(now - p.issued);
                            self.report.txns_completed += 1;
                            self.pending[core] = None;
                            self.last_retire = now;
                        }
                    }
                }
                // Both events mean another transaction's message landed
                // inside this L1's open transaction window, forcing an
                // extra transient state the block-owner view never needs.
                ProtocolEvent::InvWhileFilling { .. } | ProtocolEvent::FwdHeldAtL1 { .. } => {
                    self.report.unnecessary_transients += 1;
                }
                ProtocolEvent::EvictDone { .. } => {
                    self.report.evictions += 1;
                }
                ProtocolEvent::Serialized { .. }
                | ProtocolEvent::OwnerSupplied { .. }
                | ProtocolEvent::TxnClosed { .. } => {}
            }
        }
    }

    fn count_op(&mut self, kind: OpKind) {
        match kind {
            OpKind::Load => self.report.loads += 1,
            OpKind::Store => self.report.stores += 1,
        }
    }

    fn done(&self) -> bool {
        self.trace_q.iter().all(|q| q.is_empty())
            && self.pending.iter().all(|p| p.is_none())
            && self.l1_q.iter().all(|q| q.is_empty())
            && self.bank_req_q.iter().all(|q| q.is_empty())
            && self.bank_resp_q.iter().all(|q| q.is_empty())
            && self.mem_q.iter().all(|q| q.is_empty())
            && self.out_delay.is_empty()
            && self.net.quiescent()
            && self.l1s.iter().all(|l| l.quiescent())
            && self.banks.iter().all(|b| b.quiescent())
    }

    /// With nothing in flight and all cores waiting on future ticks, the
    /// first cycle at which anything can happen again.
    fn idle_skip_target(&self, now: Cycle) -> Option<Cycle> {
        let system_idle = self.pending.iter().all(|p| p.is_none())
            && self.l1_q.iter().all(|q| q.is_empty())
            && self.bank_req_q.iter().all(|q| q.is_empty())
            && self.bank_resp_q.iter().all(|q| q.is_empty())
            && self.mem_q.iter().all(|q| q.is_empty())
            && self.out_delay.is_empty()
            && self.net.quiescent();
        if !system_idle {
            return None;
        }
        let next_tick = self
            .trace_q
            .iter()
            .filter_map(|q| q.front())
            .map(|op| op.tick)
            .min()?;
        (next_tick > now + 1).then_some(next_tick)
    }

    /// Single-owner scan: across all caches, a block has at most one E/M
    /// holder and owned blocks have no other stable copies.
    fn ownership_scan(&self, now: Cycle) -> Result<(), SimError> {
        let mut holders: BTreeMap<Block, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (c, l1) in self.l1s.iter().enumerate() {
            for (block, state, _) in l1.stable_lines() {
                let e = holders.entry(block).or_default();
                match state {
                    StableState::E | StableState::M => e.0.push(c),
                    StableState::S => e.1.push(c),
                }
            }
        }
        for (block, (owners, sharers)) in holders {
            if owners.len() > 1 || (!owners.is_empty() && !sharers.is_empty()) {
                return Err(SimError::Protocol {
                    cycle: now,
                    detail: format!(
                        "block {block:#x} held E/M by {owners:?} alongside S by {sharers:?}"
                    ),
                });
            }
        }
        Ok(())
    }

    fn deadlock_detail(&self) -> String {
        let stuck_cores: Vec<usize> = self
            .pending
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.as_ref().map(|_| c))
            .collect();
        let busy_banks: Vec<usize> = self
            .banks
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.quiescent())
            .map(|(i, _)| i)
            .collect();
        let queued: usize = self
            .bank_req_q
            .iter()
            .chain(self.bank_resp_q.iter())
            .chain(self.l1_q.iter())
            .chain(self.mem_q.iter())
            .map(|q| q.len())
            .sum();
        format!(
            "no progress: cores waiting {stuck_cores:?}, busy banks {busy_banks:?}, \
             {queued} queued messages, fabric {}",
            if self.net.quiescent() {
                "empty"
            } else {
                "occupied"
            }
        )
    }

    fn finish(mut self, _trace: &[TraceOp]) -> Report {
        let cycles = self.report.cycles.max(1);
        let ns = &self.net.stats;
        self.report.flits_injected = ns.injected_flits;
        self.report.flits_ejected = ns.ejected_flits;
        self.report.zero_hop_msgs = ns.zero_hop_msgs;
        self.report.max_arb_wait = ns.max_wait;
        self.report.mean_arb_wait = if ns.wait_samples > 0 {
            ns.wait_sum as f64 / ns.wait_samples as f64
        } else {
            0.0
        };
        let mut peak = 0f64;
        for (&(tile, port), &flits) in &ns.link_flits {
            let dir = match port {
                crate::noc::NORTH => 'N',
                crate::noc::EAST => 'E',
                crate::noc::SOUTH => 'S',
                _ => 'W',
            };
            self.report
                .link_flits
                .insert(format!("t{tile}:{dir}"), flits);
            peak = peak.max(flits as f64 / cycles as f64);
        }
        self.report.peak_link_utilization = peak;
        let e = Energy {
            link: ns.link_traversals as f64 * self.cfg.e_link,
            buf_write: ns.buffer_writes as f64 * self.cfg.e_buf_write,
            buf_read: ns.buffer_reads as f64 * self.cfg.e_buf_read,
            arb: ns.arb_grants as f64 * self.cfg.e_arb,
            xbar: ns.xbar_traversals as f64 * self.cfg.e_xbar,
            total: 0.0,
        };
        self.report.energy = Energy {
            total: e.link + e.buf_write + e.buf_read + e.arb + e.xbar,
            ..e
        };
        self.report.drain_cycles = self.report.cycles.saturating_sub(self.last_retire);
        self.report.exec_fingerprint = self.exec_fp.hex();
        self.report
    }
}

/// Hash of the inputs that make two runs comparable: the trace itself and
/// every config field that changes behavior except the arbitration mode.
fn trace_fingerprint(cfg: &SystemConfig, trace: &[TraceOp]) -> String {
    let mut fp = Fingerprint::new();
    for v in [
        cfg.cores as u64,
        cfg.mesh_x as u64,
        cfg.mesh_y as u64,
        cfg.block_size as u64,
        cfg.l1_size as u64,
        cfg.l1_assoc as u64,
        cfg.l1_latency as u64,
        cfg.l1_mshrs as u64,
        cfg.l2_latency as u64,
        cfg.vcs as u64,
        cfg.vc_depth as u64,
        cfg.flit_bits as u64,
        cfg.link_latency as u64,
        cfg.mem_controllers as u64,
        cfg.mem_latency as u64,
        cfg.starvation_threshold as u64,
        cfg.inner_buffer_entries as u64,
    ] {
        fp.push_u64(v);
    }
    for op in trace {
        fp.push_u64(op.tick);
        fp.push_u64(op.core as u64);
        fp.push_u64(matches!(op.kind, OpKind::Store) as u64);
        fp.push_u64(op.addr);
    }
    fp.hex()
}
