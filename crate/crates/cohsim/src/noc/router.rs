//! Per-router and per-injection-interface state.
//!
//! The cycle logic lives in [`super::network`], which needs simultaneous
//! access to neighboring routers (credit return, downstream VC peeks);
//! this module holds the data and the small local helpers.

use std::collections::VecDeque;

use crate::types::Cycle;

use super::{Flit, PORTS};

/// One virtual-channel buffer on one input port.
///
/// `route`/`out_vc` describe the packet currently resident in the buffer
/// (set by the route-compute and VC-allocation stages of its head flit,
/// cleared when its tail departs); wormhole switching guarantees at most
/// one packet is resident at a time.
#[derive(Clone, Debug)]
pub struct InputVc {
    pub q: VecDeque<Flit>,
    /// Output port chosen for the resident packet.
    pub route: Option<usize>,
    /// Cycle route compute ran; VC allocation may run strictly later.
    pub rc_cycle: Cycle,
    /// Downstream VC granted to the resident packet.
    pub out_vc: Option<usize>,
    /// Cycle VC allocation ran; switch allocation may run strictly later.
    pub va_cycle: Cycle,
    /// VC-allocation decisions the resident head lost while bidding; the
    /// starvation override reads this as the wait age.
    pub va_lost: u64,
    /// Switch decisions the current front flit lost while bidding.
    pub sa_lost: u64,
    /// Flits committed by the upstream switch but not yet arrived. Guards
    /// VC reallocation: a buffer is reusable only when empty *and* nothing
    /// is still on the wire toward it.
    pub inflight: u32,
}

impl InputVc {
    pub fn new() -> InputVc {
        InputVc {
            q: VecDeque::new(),
            route: None,
            rc_cycle: 0,
            out_vc: None,
            va_cycle: 0,
            va_lost: 0,
            sa_lost: 0,
            inflight: 0,
        }
    }

    /// Free for allocation to a new packet.
    pub fn idle(&self) -> bool {
        self.q.is_empty() && self.route.is_none() && self.out_vc.is_none() && self.inflight == 0
    }
}

impl Default for InputVc {
    fn default() -> Self {
        InputVc::new()
    }
}

/// One mesh router: input buffers plus the credit and allocation state of
/// its output side.
#[derive(Clone, Debug)]
pub struct Router {
    pub tile: usize,
    /// `inputs[port][vc]`.
    pub inputs: Vec<Vec<InputVc>>,
    /// Free buffer slots in the downstream router, per `[output][vc]`.
    pub credits: Vec<Vec<u32>>,
    /// Packet currently holding the downstream VC, per `[output][vc]`.
    pub vc_owner: Vec<Vec<Option<u64>>>,
    /// Rotation pointers over flattened input slots, per output port.
    pub rr_va: Vec<usize>,
    pub rr_sa: Vec<usize>,
}

impl Router {
    pub fn new(tile: usize, vcs: usize, vc_depth: u32) -> Router {
        Router {
            tile,
            inputs: (0..PORTS)
                .map(|_| (0..vcs).map(|_| InputVc::new()).collect())
                .collect(),
            credits: (0..PORTS).map(|_| vec![vc_depth; vcs]).collect(),
            vc_owner: (0..PORTS).map(|_| vec![None; vcs]).collect(),
            rr_va: vec![0; PORTS],
            rr_sa: vec![0; PORTS],
        }
    }

    /// Flattened arbitration slot index for `(port, vc)`.
    pub fn slot(vcs: usize, port: usize, vc: usize) -> usize {
        port * vcs + vc
    }

    pub fn empty(&self) -> bool {
        self.inputs
            .iter()
            .all(|port| port.iter().all(|vc| vc.q.is_empty() && vc.inflight == 0))
    }
}

/// A packet waiting at an injection interface.
#[derive(Clone, Copy, Debug)]
pub struct PendingPkt {
    pub pkt: u64,
    pub enqueue: Cycle,
    /// Arrival order for first-come tie-breaking.
    pub rank: u64,
    /// Injection decisions this packet lost while a local VC was free.
    pub lost: u64,
}

/// A packet mid-injection: flits stream one per cycle into `vc`.
#[derive(Clone, Copy, Debug)]
pub struct ActiveInject {
    pub pkt: u64,
    pub vc: usize,
    pub next_flit: usize,
}

/// Injection interface shared by the endpoints of one tile. Applies
/// phase-priority arbitration to choose which queued message enters the
/// fabric next; a started packet streams to its tail without preemption.
#[derive(Clone, Debug, Default)]
pub struct Ni {
    pub pending: VecDeque<PendingPkt>,
    pub active: Option<ActiveInject>,
    pub next_rank: u64,
}

impl Ni {
    pub fn idle(&self) -> bool {
        self.pending.is_empty() && self.active.is_none()
    }
}
