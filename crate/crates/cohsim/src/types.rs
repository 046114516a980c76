//! Small shared identifiers used across the protocol, the network, and the
//! engine.

use serde::{Deserialize, Serialize};

/// Simulation time, in clock cycles.
pub type Cycle = u64;

/// A cache-block-aligned address, expressed as a block index
/// (byte address divided by the block size).
pub type Block = u64;

/// Identifier of a transaction: the request that opened it. Every message a
/// transaction spawns carries the same `txn`, which is how acknowledgments
/// and unblocks are matched back to directory bookkeeping.
pub type TxnId = u64;

/// A protocol endpoint. The index is a tile number for L1s and L2 banks and
/// a controller number for memory controllers (which attach at edge tiles).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum NodeId {
    /// Core-private L1 cache controller on the given tile.
    L1(u16),
    /// L2 bank (with its directory slice) on the given tile.
    Bank(u16),
    /// Memory controller number (not a tile index; see `Config::mem_tiles`).
    Mem(u16),
}

impl NodeId {
    /// Core/tile index for L1 and bank nodes; panics for memory controllers,
    /// whose tile is a configuration property.
    pub fn tile_index(self) -> usize {
        match self {
            NodeId::L1(t) | NodeId::Bank(t) => t as usize,
            NodeId::Mem(_) => panic!("memory controllers attach via Config::mem_tiles"),
        }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::L1(t) => write!(f, "l1.{t}"),
            NodeId::Bank(t) => write!(f, "bank.{t}"),
            NodeId::Mem(m) => write!(f, "mem.{m}"),
        }
    }
}

/// Arbitration flavor: plain round-robin/FIFO, or phase-priority.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Ppb,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Ppb => "ppb",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "ppb" => Ok(Mode::Ppb),
            other => Err(format!("unknown mode `{other}` (expected `baseline` or `ppb`)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
