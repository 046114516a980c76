//! The mesh fabric: owns every router and injection interface, moves
//! flits between them, and reports per-message timing to the caller.
//!
//! Cycle contract with the simulation engine:
//! - [`Network::phase_arrivals`] runs first in a cycle. It lands flits that
//!   finished their link traversal, returns credits, and yields messages
//!   whose tail flit reached its destination tile (ejection bypasses the
//!   router pipeline: the sink is always ready).
//! - [`Network::phase_transfer`] runs late in the cycle, after controllers
//!   have produced new messages via [`Network::send`]. Every injection
//!   interface moves at most one flit, then every router (row-major) runs
//!   its switch-allocation, VC-allocation, and route-compute stages.
//!
//! Stage timing per hop, with arrival in cycle `a`: route compute in `a`,
//! VC allocation in `a+1`, switch allocation in `a+2`, traversal in `a+3`,
//! then the link; with 2-cycle links the next arrival is `a+6`.

use std::collections::BTreeMap;

use crate::config::SystemConfig;
use crate::protocol::Message;
use crate::types::{Cycle, NodeId};

use super::arbiter::{pick, Candidate, TieBreak};
use super::router::{ActiveInject, Ni, PendingPkt, Router};
use super::{
    hop_count, neighbor, opposite, vnet_of, Flit, FlitType, PacketState, EAST, LOCAL, NORTH,
    PORTS, SOUTH, WEST,
};

const DIRS: [usize; 4] = [NORTH, EAST, SOUTH, WEST];

/// A message handed back to the caller with its fabric timing.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub msg: Message,
    /// Cycle the message was handed to the injection interface.
    pub enqueue: Cycle,
    /// Cycle the head flit entered the fabric (`None` for same-tile
    /// messages, which never touch a router).
    pub inject: Option<Cycle>,
    /// Cycle the tail flit left the fabric.
    pub eject: Cycle,
    pub hops: u64,
}

/// Aggregate fabric counters (all modes, all traffic).
#[derive(Clone, Debug, Default)]
pub struct NetStats {
    pub sent_pkts: u64,
    pub injected_pkts: u64,
    pub ejected_pkts: u64,
    pub injected_flits: u64,
    pub ejected_flits: u64,
    pub zero_hop_msgs: u64,
    pub buffer_writes: u64,
    pub buffer_reads: u64,
    pub arb_grants: u64,
    pub xbar_traversals: u64,
    pub link_traversals: u64,
    /// Flits carried per directed link, keyed (tile, output port).
    pub link_flits: BTreeMap<(usize, usize), u64>,
    /// Most decisions any candidate lost while bidding at any
    /// arbitration point.
    pub max_wait: u64,
    /// Sum and count of winners' waits, for mean grant latency.
    pub wait_sum: u64,
    pub wait_samples: u64,
}

enum NetEvent {
    Arrive {
        tile: usize,
        port: usize,
        vc: usize,
        flit: Flit,
    },
    Credit {
        tile: usize,
        port: usize,
        vc: usize,
    },
}

/// The whole fabric.
pub struct Network {
    cols: usize,
    rows: usize,
    vcs: usize,
    vc_depth: usize,
    threshold: u64,
    link_latency: u64,
    payload_flits: usize,
    mem_tiles: Vec<usize>,
    routers: Vec<Router>,
    nis: Vec<Ni>,
    packets: Vec<PacketState>,
    events: BTreeMap<Cycle, Vec<NetEvent>>,
    /// Same-tile messages ready for handoff, keyed by delivery cycle.
    zero_hop: BTreeMap<Cycle, Vec<u64>>,
    pub stats: NetStats,
}

impl Network {
    pub fn new(cfg: &SystemConfig) -> Network {
        let tiles = cfg.mesh_x * cfg.mesh_y;
        Network {
            cols: cfg.mesh_x,
            rows: cfg.mesh_y,
            vcs: cfg.vcs,
            vc_depth: cfg.vc_depth,
            threshold: cfg.starvation_threshold as u64,
            link_latency: cfg.link_latency as u64,
            payload_flits: 512 / cfg.flit_bits,
            mem_tiles: cfg.mem_tiles(),
            routers: (0..tiles)
                .map(|t| Router::new(t, cfg.vcs, cfg.vc_depth as u32))
                .collect(),
            nis: vec![Ni::default(); tiles],
            packets: Vec::new(),
            events: BTreeMap::new(),
            zero_hop: BTreeMap::new(),
            stats: NetStats::default(),
        }
    }

    /// Tile hosting a node. Cores and banks live on their own tile;
    /// memory controllers share the corner tiles.
    pub fn tile_of(&self, node: NodeId) -> usize {
        match node {
            NodeId::L1(i) | NodeId::Bank(i) => i as usize,
            NodeId::Mem(i) => self.mem_tiles[i as usize],
        }
    }

    /// Manhattan hop count a message will travel.
    pub fn hops(&self, msg: &Message) -> u64 {
        hop_count(self.cols, self.tile_of(msg.src), self.tile_of(msg.dst))
    }

    /// Queue a message for injection. Called any time before
    /// [`Network::phase_transfer`] of the same cycle.
    pub fn send(&mut self, msg: Message, now: Cycle) {
        let src_tile = self.tile_of(msg.src);
        let dst_tile = self.tile_of(msg.dst);
        let len_flits = if msg.kind.carries_data() {
            1 + self.payload_flits
        } else {
            1
        };
        let id = self.packets.len() as u64;
        self.packets.push(PacketState {
            msg,
            src_tile,
            dst_tile,
            len_flits,
            flits_injected: 0,
            flits_ejected: 0,
            enqueue_cycle: now,
            inject_cycle: None,
        });
        self.stats.sent_pkts += 1;
        if src_tile == dst_tile {
            // Same-tile traffic skips the fabric; handed over next cycle.
            self.stats.zero_hop_msgs += 1;
            self.zero_hop.entry(now + 1).or_default().push(id);
        } else {
            let ni = &mut self.nis[src_tile];
            let rank = ni.next_rank;
            ni.next_rank += 1;
            ni.pending.push_back(PendingPkt {
                pkt: id,
                enqueue: now,
                rank,
                lost: 0,
            });
        }
    }

    /// Land link arrivals and credits for `now`; return completed messages.
    pub fn phase_arrivals(&mut self, now: Cycle) -> Vec<Delivery> {
        let mut out = Vec::new();
        for ev in self.events.remove(&now).unwrap_or_default() {
            match ev {
                NetEvent::Arrive {
                    tile,
                    port,
                    vc,
                    flit,
                } => {
                    if flit.dst_tile == tile {
                        let p = &mut self.packets[flit.pkt as usize];
                        p.flits_ejected += 1;
                        self.stats.ejected_flits += 1;
                        if flit.ft.is_tail() {
                            debug_assert_eq!(p.flits_ejected, p.len_flits);
                            self.stats.ejected_pkts += 1;
                            out.push(Delivery {
                                msg: p.msg.clone(),
                                enqueue: p.enqueue_cycle,
                                inject: p.inject_cycle,
                                eject: now,
                                hops: hop_count(self.cols, p.src_tile, p.dst_tile),
                            });
                        }
                    } else {
                        let ivc = &mut self.routers[tile].inputs[port][vc];
                        debug_assert!(ivc.inflight > 0);
                        ivc.inflight -= 1;
                        debug_assert!(ivc.q.len() < self.vc_depth, "VC overflow");
                        if ivc.q.is_empty() {
                            // New front flit: fresh arbitration contests.
                            ivc.va_lost = 0;
                            ivc.sa_lost = 0;
                        }
                        ivc.q.push_back(flit);
                        self.stats.buffer_writes += 1;
                    }
                }
                NetEvent::Credit { tile, port, vc } => {
                    let c = &mut self.routers[tile].credits[port][vc];
                    *c += 1;
                    debug_assert!(*c as usize <= self.vc_depth);
                }
            }
        }
        for pkt in self.zero_hop.remove(&now).unwrap_or_default() {
            let p = &self.packets[pkt as usize];
            out.push(Delivery {
                msg: p.msg.clone(),
                enqueue: p.enqueue_cycle,
                inject: None,
                eject: p.enqueue_cycle,
                hops: 0,
            });
        }
        out
    }

    /// One cycle of injection and router pipelines.
    pub fn phase_transfer(&mut self, now: Cycle) {
        for tile in 0..self.routers.len() {
            self.inject(tile, now);
        }
        for tile in 0..self.routers.len() {
            self.switch_alloc(tile, now);
            self.vc_alloc(tile, now);
            self.route_compute(tile, now);
        }
    }

    /// Nothing queued, buffered, or on a wire.
    pub fn quiescent(&self) -> bool {
        self.events.is_empty()
            && self.zero_hop.is_empty()
            && self.nis.iter().all(|ni| ni.idle())
            && self.routers.iter().all(|r| r.empty())
    }

    /// Move at most one flit from tile's injection interface into the
    /// local input port.
    fn inject(&mut self, tile: usize, now: Cycle) {
        // Continue a packet already streaming.
        if let Some(act) = self.nis[tile].active {
            let p = &mut self.packets[act.pkt as usize];
            let ivc = &mut self.routers[tile].inputs[LOCAL][act.vc];
            if ivc.q.len() < self.vc_depth {
                let ft = if act.next_flit + 1 == p.len_flits {
                    FlitType::Tail
                } else {
                    FlitType::Body
                };
                if ivc.q.is_empty() {
                    ivc.sa_lost = 0;
                }
                ivc.q.push_back(Flit {
                    pkt: act.pkt,
                    ft,
                    dst_tile: p.dst_tile,
                    vnet: vnet_of(p.msg.kind),
                    block: p.msg.block,
                    tag: p.msg.tag,
                });
                p.flits_injected += 1;
                self.stats.injected_flits += 1;
                self.stats.buffer_writes += 1;
                let ni = &mut self.nis[tile];
                if ft == FlitType::Tail {
                    ni.active = None;
                } else {
                    ni.active = Some(ActiveInject {
                        next_flit: act.next_flit + 1,
                        ..act
                    });
                }
            }
            return;
        }

        if self.nis[tile].pending.is_empty() {
            return;
        }

        // First idle local VC in a class's range, if any.
        let free_vc = |routers: &[Router], vnet: super::Vnet| -> Option<usize> {
            vnet.vc_range(self.vcs)
                .find(|&v| routers[tile].inputs[LOCAL][v].idle())
        };

        let slots: Vec<Option<Candidate>> = self.nis[tile]
            .pending
            .iter()
            .map(|pend| {
                let p = &self.packets[pend.pkt as usize];
                free_vc(&self.routers, vnet_of(p.msg.kind)).map(|_| Candidate {
                    tag: p.msg.tag,
                    block: p.msg.block,
                    age: pend.lost,
                    rank: pend.rank,
                })
            })
            .collect();
        for c in slots.iter().flatten() {
            self.stats.max_wait = self.stats.max_wait.max(c.age);
        }
        let Some(w) = pick(&slots, self.threshold, TieBreak::Fifo) else {
            return;
        };
        self.stats.arb_grants += 1;
        self.stats.wait_sum += slots[w].unwrap().age;
        self.stats.wait_samples += 1;
        for (i, slot) in slots.iter().enumerate() {
            if i != w && slot.is_some() {
                self.nis[tile].pending[i].lost += 1;
            }
        }

        let pend = self.nis[tile].pending.remove(w).expect("winner pending");
        let p = &mut self.packets[pend.pkt as usize];
        let vc = free_vc_for(&self.routers[tile], vnet_of(p.msg.kind), self.vcs)
            .expect("winner had a free VC");
        let ft = if p.len_flits == 1 {
            FlitType::Single
        } else {
            FlitType::Head
        };
        let ivc = &mut self.routers[tile].inputs[LOCAL][vc];
        ivc.va_lost = 0;
        ivc.sa_lost = 0;
        ivc.q.push_back(Flit {
            pkt: pend.pkt,
            ft,
            dst_tile: p.dst_tile,
            vnet: vnet_of(p.msg.kind),
            block: p.msg.block,
            tag: p.msg.tag,
        });
        p.inject_cycle = Some(now);
        p.flits_injected = 1;
        self.stats.injected_pkts += 1;
        self.stats.injected_flits += 1;
        self.stats.buffer_writes += 1;
        if ft == FlitType::Head {
            self.nis[tile].active = Some(ActiveInject {
                pkt: pend.pkt,
                vc,
                next_flit: 1,
            });
        }
    }

    /// Switch allocation and traversal commit: one flit per output port.
    fn switch_alloc(&mut self, tile: usize, now: Cycle) {
        let (cols, rows, vcs) = (self.cols, self.rows, self.vcs);
        let mut arrivals: Vec<(Cycle, usize, usize, usize, Flit)> = Vec::new();
        let mut credits: Vec<(Cycle, usize, usize, usize)> = Vec::new();
        let mut inflight_incs: Vec<(usize, usize, usize)> = Vec::new();

        {
            let r = &mut self.routers[tile];
            for out in DIRS {
                let n = PORTS * vcs;
                let mut slots: Vec<Option<Candidate>> = vec![None; n];
                for ip in 0..PORTS {
                    for v in 0..vcs {
                        let ivc = &r.inputs[ip][v];
                        let Some(f) = ivc.q.front() else { continue };
                        if ivc.route != Some(out) {
                            continue;
                        }
                        let Some(ovc) = ivc.out_vc else { continue };
                        // Heads traverse the switch strictly after their
                        // VC allocation cycle.
                        if f.ft.is_head() && ivc.va_cycle >= now {
                            continue;
                        }
                        let nb = neighbor(cols, rows, tile, out).expect("route into the mesh");
                        let ejecting = nb == f.dst_tile;
                        if !ejecting && r.credits[out][ovc] == 0 {
                            continue;
                        }
                        slots[Router::slot(vcs, ip, v)] = Some(Candidate {
                            tag: f.tag,
                            block: f.block,
                            age: ivc.sa_lost,
                            rank: 0,
                        });
                    }
                }
                for c in slots.iter().flatten() {
                    self.stats.max_wait = self.stats.max_wait.max(c.age);
                }
                let Some(w) = pick(&slots, self.threshold, TieBreak::Rotate(r.rr_sa[out]))
                else {
                    continue;
                };
                r.rr_sa[out] = (w + 1) % n;
                self.stats.arb_grants += 1;
                self.stats.wait_sum += slots[w].unwrap().age;
                self.stats.wait_samples += 1;
                for (i, slot) in slots.iter().enumerate() {
                    if i != w && slot.is_some() {
                        r.inputs[i / vcs][i % vcs].sa_lost += 1;
                    }
                }

                let (ip, v) = (w / vcs, w % vcs);
                let ivc = &mut r.inputs[ip][v];
                let f = ivc.q.pop_front().expect("winner has a front flit");
                let ovc = ivc.out_vc.expect("winner was allocated");
                let nb = neighbor(cols, rows, tile, out).expect("route into the mesh");
                let ejecting = nb == f.dst_tile;
                if !ejecting {
                    r.credits[out][ovc] -= 1;
                    inflight_incs.push((nb, opposite(out), ovc));
                }
                if f.ft.is_tail() {
                    ivc.route = None;
                    ivc.out_vc = None;
                    if r.vc_owner[out][ovc] == Some(f.pkt) {
                        r.vc_owner[out][ovc] = None;
                    }
                }
                // The next flit (if any) starts its own switch contest.
                ivc.sa_lost = 0;
                // Traversal next cycle, then the link; land in the arrival
                // phase after the wire clears.
                let land = now + 2 + self.link_latency;
                arrivals.push((land, nb, opposite(out), ovc, f));
                if ip != LOCAL {
                    // Our freed slot: credit the upstream router with the
                    // same wire delay.
                    let up = neighbor(cols, rows, tile, ip).expect("flit came from the mesh");
                    credits.push((land, up, opposite(ip), v));
                }
                self.stats.buffer_reads += 1;
                self.stats.xbar_traversals += 1;
                self.stats.link_traversals += 1;
                *self.stats.link_flits.entry((tile, out)).or_insert(0) += 1;
            }
        }

        for (nb, port, vc) in inflight_incs {
            self.routers[nb].inputs[port][vc].inflight += 1;
        }
        for (cycle, t, port, vc, flit) in arrivals {
            self.events
                .entry(cycle)
                .or_default()
                .push(NetEvent::Arrive {
                    tile: t,
                    port,
                    vc,
                    flit,
                });
        }
        for (cycle, t, port, vc) in credits {
            self.events
                .entry(cycle)
                .or_default()
                .push(NetEvent::Credit { tile: t, port, vc });
        }
    }

    /// VC allocation: per output port, grant one head a downstream VC.
    fn vc_alloc(&mut self, tile: usize, now: Cycle) {
        let (cols, rows, vcs) = (self.cols, self.rows, self.vcs);

        // Downstream idleness, peeked before mutating this router.
        let mut idle_down = vec![vec![false; vcs]; PORTS];
        for out in DIRS {
            if let Some(nb) = neighbor(cols, rows, tile, out) {
                for v in 0..vcs {
                    idle_down[out][v] = self.routers[nb].inputs[opposite(out)][v].idle();
                }
            }
        }

        let r = &mut self.routers[tile];

        // Ejecting heads sink into an always-ready interface: allocation
        // succeeds without consuming a downstream VC, but still costs the
        // stage cycle.
        for ip in 0..PORTS {
            for v in 0..vcs {
                let ivc = &r.inputs[ip][v];
                let Some(f) = ivc.q.front() else { continue };
                if !f.ft.is_head() || ivc.out_vc.is_some() {
                    continue;
                }
                let Some(route) = ivc.route else { continue };
                if ivc.rc_cycle >= now {
                    continue;
                }
                let nb = neighbor(cols, rows, tile, route).expect("route into the mesh");
                if nb == f.dst_tile {
                    let ivc = &mut r.inputs[ip][v];
                    ivc.out_vc = Some(v);
                    ivc.va_cycle = now;
                }
            }
        }

        for out in DIRS {
            let n = PORTS * vcs;
            let mut slots: Vec<Option<Candidate>> = vec![None; n];
            for ip in 0..PORTS {
                for v in 0..vcs {
                    let ivc = &r.inputs[ip][v];
                    let Some(f) = ivc.q.front() else { continue };
                    if !f.ft.is_head() || ivc.out_vc.is_some() || ivc.route != Some(out) {
                        continue;
                    }
                    if ivc.rc_cycle >= now {
                        continue;
                    }
                    let nb = neighbor(cols, rows, tile, out).expect("route into the mesh");
                    if nb == f.dst_tile {
                        continue; // handled above
                    }
                    let has_free = f
                        .vnet
                        .vc_range(vcs)
                        .any(|fv| idle_down[out][fv] && r.vc_owner[out][fv].is_none());
                    if !has_free {
                        continue;
                    }
                    slots[Router::slot(vcs, ip, v)] = Some(Candidate {
                        tag: f.tag,
                        block: f.block,
                        age: ivc.va_lost,
                        rank: 0,
                    });
                }
            }
            for c in slots.iter().flatten() {
                self.stats.max_wait = self.stats.max_wait.max(c.age);
            }
            let Some(w) = pick(&slots, self.threshold, TieBreak::Rotate(r.rr_va[out])) else {
                continue;
            };
            r.rr_va[out] = (w + 1) % n;
            self.stats.arb_grants += 1;
            self.stats.wait_sum += slots[w].unwrap().age;
            self.stats.wait_samples += 1;
            for (i, slot) in slots.iter().enumerate() {
                if i != w && slot.is_some() {
                    r.inputs[i / vcs][i % vcs].va_lost += 1;
                }
            }

            let (ip, v) = (w / vcs, w % vcs);
            let vnet = r.inputs[ip][v].q.front().expect("winner has a head").vnet;
            let pkt = r.inputs[ip][v].q.front().unwrap().pkt;
            let fv = vnet
                .vc_range(vcs)
                .find(|&fv| idle_down[out][fv] && r.vc_owner[out][fv].is_none())
                .expect("winner had a free VC");
            r.vc_owner[out][fv] = Some(pkt);
            let ivc = &mut r.inputs[ip][v];
            ivc.out_vc = Some(fv);
            ivc.va_cycle = now;
        }
    }

    /// Route compute for fresh heads.
    fn route_compute(&mut self, tile: usize, now: Cycle) {
        let cols = self.cols;
        let r = &mut self.routers[tile];
        for port in r.inputs.iter_mut() {
            for ivc in port.iter_mut() {
                let Some(f) = ivc.q.front() else { continue };
                if f.ft.is_head() && ivc.route.is_none() {
                    let route = super::xy_route(cols, tile, f.dst_tile);
                    debug_assert_ne!(route, LOCAL, "same-tile packets bypass the fabric");
                    ivc.route = Some(route);
                    ivc.rc_cycle = now;
                }
            }
        }
    }
}

/// First idle local VC in a class's range of one router.
fn free_vc_for(router: &Router, vnet: super::Vnet, vcs: usize) -> Option<usize> {
    vnet.vc_range(vcs)
        .find(|&v| router.inputs[LOCAL][v].idle())
}
