//! 2-D mesh interconnect: wormhole flow control, virtual channels split
//! into three message classes, deterministic X-Y routing, and a four-stage
//! router pipeline (route compute, VC allocation, switch allocation,
//! switch traversal) followed by a fixed-latency link.
//!
//! All arbitration points (injection, VC allocation, switch allocation)
//! share one arbiter ([`arbiter`]) that understands optional phase tags;
//! with no tags present it degenerates to round-robin, so the baseline and
//! tagged modes traverse identical machinery.

pub mod arbiter;
pub mod network;
pub mod router;

pub use network::{Delivery, NetStats, Network};

use crate::phase::PhaseTag;
use crate::protocol::MessageKind;
use crate::types::{Block, Cycle};

/// Message classes mapped onto disjoint virtual-channel sets. Splitting
/// requests, forwards, and responses removes protocol-level cycles from
/// the network dependence graph.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Vnet {
    Request,
    Forward,
    Response,
}

/// The virtual network a message kind travels on.
pub fn vnet_of(kind: MessageKind) -> Vnet {
    use MessageKind::*;
    match kind {
        GetS | GetM | PutM => Vnet::Request,
        FwdGetS | FwdGetM | Inv | MemRead | MemWriteBack => Vnet::Forward,
        Data | DataExcl | InvAck | WBAck | Unblock | MemData => Vnet::Response,
    }
}

impl Vnet {
    /// Inclusive VC index range assigned to this class (of `total` VCs).
    /// The first two classes get one VC each; responses take the rest.
    pub fn vc_range(self, total: usize) -> std::ops::Range<usize> {
        match self {
            Vnet::Request => 0..1,
            Vnet::Forward => 1..2,
            Vnet::Response => 2..total,
        }
    }
}

/// Position of a flit within its packet.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FlitType {
    Head,
    Body,
    Tail,
    /// Single-flit packet: head and tail at once.
    Single,
}

impl FlitType {
    pub fn is_head(self) -> bool {
        matches!(self, FlitType::Head | FlitType::Single)
    }
    pub fn is_tail(self) -> bool {
        matches!(self, FlitType::Tail | FlitType::Single)
    }
}

/// One flit in flight. Carries enough of the packet header (destination,
/// block, tag) for routing and arbitration without an arena lookup.
#[derive(Clone, Copy, Debug)]
pub struct Flit {
    pub pkt: u64,
    pub ft: FlitType,
    pub dst_tile: usize,
    pub vnet: Vnet,
    pub block: Block,
    pub tag: Option<PhaseTag>,
}

/// Router port indices. `LOCAL` faces the tile's endpoints.
pub const LOCAL: usize = 0;
pub const NORTH: usize = 1;
pub const EAST: usize = 2;
pub const SOUTH: usize = 3;
pub const WEST: usize = 4;
pub const PORTS: usize = 5;

/// Deterministic dimension-ordered route: correct X (east/west) first,
/// then Y (north/south), then eject.
pub fn xy_route(cols: usize, from_tile: usize, to_tile: usize) -> usize {
    let (fx, fy) = (from_tile % cols, from_tile / cols);
    let (tx, ty) = (to_tile % cols, to_tile / cols);
    if tx > fx {
        EAST
    } else if tx < fx {
        WEST
    } else if ty > fy {
        SOUTH
    } else if ty < fy {
        NORTH
    } else {
        LOCAL
    }
}

/// Neighbor tile in the given port direction, if any.
pub fn neighbor(cols: usize, rows: usize, tile: usize, port: usize) -> Option<usize> {
    let (x, y) = (tile % cols, tile / cols);
    match port {
        NORTH if y > 0 => Some(tile - cols),
        SOUTH if y + 1 < rows => Some(tile + cols),
        EAST if x + 1 < cols => Some(tile + 1),
        WEST if x > 0 => Some(tile - 1),
        _ => None,
    }
}

/// Port on the receiving router that a flit sent out `port` arrives on.
pub fn opposite(port: usize) -> usize {
    match port {
        NORTH => SOUTH,
        SOUTH => NORTH,
        EAST => WEST,
        WEST => EAST,
        other => other,
    }
}

/// Hop count of the X-Y path between two tiles.
pub fn hop_count(cols: usize, a: usize, b: usize) -> u64 {
    let (ax, ay) = (a % cols, a / cols);
    let (bx, by) = (b % cols, b / cols);
    (ax.abs_diff(bx) + ay.abs_diff(by)) as u64
}

/// Per-packet bookkeeping held centrally while the packet is in flight.
#[derive(Clone, Debug)]
pub struct PacketState {
    pub msg: crate::protocol::Message,
    pub src_tile: usize,
    pub dst_tile: usize,
    pub len_flits: usize,
    pub flits_injected: usize,
    pub flits_ejected: usize,
    pub enqueue_cycle: Cycle,
    pub inject_cycle: Option<Cycle>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xy_goes_east_west_before_north_south() {
        // 4x4 mesh, tile ids row-major.
        assert_eq!(xy_route(4, 0, 3), EAST);
        assert_eq!(xy_route(4, 3, 0), WEST);
        assert_eq!(xy_route(4, 0, 12), SOUTH);
        assert_eq!(xy_route(4, 12, 0), NORTH);
        // Diagonal: X corrected first.
        assert_eq!(xy_route(4, 0, 15), EAST);
        assert_eq!(xy_route(4, 15, 0), WEST);
        assert_eq!(xy_route(4, 5, 5), LOCAL);
    }

    #[test]
    fn neighbors_respect_mesh_edges() {
        assert_eq!(neighbor(4, 4, 0, NORTH), None);
        assert_eq!(neighbor(4, 4, 0, WEST), None);
        assert_eq!(neighbor(4, 4, 0, EAST), Some(1));
        assert_eq!(neighbor(4, 4, 0, SOUTH), Some(4));
        assert_eq!(neighbor(4, 4, 15, SOUTH), None);
        assert_eq!(neighbor(4, 4, 15, EAST), None);
        assert_eq!(neighbor(4, 4, 5, NORTH), Some(1));
    }

    #[test]
    fn opposite_ports_pair_up() {
        for p in [NORTH, EAST, SOUTH, WEST] {
            assert_eq!(opposite(opposite(p)), p);
        }
    }

    #[test]
    fn hop_count_is_manhattan() {
        assert_eq!(hop_count(4, 0, 15), 6);
        assert_eq!(hop_count(4, 0, 0), 0);
        assert_eq!(hop_count(4, 1, 2), 1);
        assert_eq!(hop_count(4, 0, 5), 2);
    }

    #[test]
    fn classes_partition_the_vcs() {
        let total = 5;
        let r = Vnet::Request.vc_range(total);
        let f = Vnet::Forward.vc_range(total);
        let s = Vnet::Response.vc_range(total);
        let all: Vec<usize> = r.chain(f).chain(s).collect();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn every_kind_has_a_class() {
        use MessageKind::*;
        for k in [
            GetS, GetM, PutM, FwdGetS, FwdGetM, Inv, Data, DataExcl, InvAck, WBAck, Unblock,
            MemRead, MemWriteBack, MemData,
        ] {
            // Requests and forwards must be single-flit classes by kind.
            let v = vnet_of(k);
            if matches!(k, GetS | GetM | FwdGetS | FwdGetM | Inv | InvAck | Unblock | WBAck) {
                assert!(!k.carries_data());
            }
            if matches!(v, Vnet::Request) {
                assert!(matches!(k, GetS | GetM | PutM));
            }
        }
    }
}
