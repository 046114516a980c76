//! The coherence protocol: message vocabulary and controller state machines.
//!
//! Controllers are written as pure transition functions: they consume one
//! message (or core operation), mutate only their own state, and return the
//! messages to send plus a list of observation events. Nothing in here
//! knows about cycles-as-time, queues, or the network — the timing engine
//! ([`crate::sim`]) and the exhaustive checker ([`crate::checker`]) both
//! drive these same transitions, one with a clock and one with
//! nondeterministic message delivery.

pub mod directory;
pub mod l1;
pub mod memory;

use crate::phase::{OuterPhase, PhaseTag};
use crate::types::{Block, Mode, NodeId, TxnId};
use thiserror::Error;

/// Wire-level message vocabulary.
///
/// `GetS`/`GetM`/`PutM` are L1 requests to the home directory. `FwdGetS`/
/// `FwdGetM` are directory forwards to the current owner, `Inv` the
/// invalidation of a sharer. `Data`/`DataExcl` carry the block (exclusive
/// grants give the requestor E instead of S). `InvAck` flows sharer to
/// requestor, `WBAck` closes an eviction, `Unblock` tells the directory a
/// requestor has finished its transaction. `Mem*` is bank <-> memory
/// controller traffic.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum MessageKind {
    GetS,
    GetM,
    PutM,
    FwdGetS,
    FwdGetM,
    Inv,
    InvAck,
    Data,
    DataExcl,
    WBAck,
    Unblock,
    MemRead,
    MemWriteBack,
    MemData,
}

impl MessageKind {
    pub const ALL: [MessageKind; 14] = [
        MessageKind::GetS,
        MessageKind::GetM,
        MessageKind::PutM,
        MessageKind::FwdGetS,
        MessageKind::FwdGetM,
        MessageKind::Inv,
        MessageKind::InvAck,
        MessageKind::Data,
        MessageKind::DataExcl,
        MessageKind::WBAck,
        MessageKind::Unblock,
        MessageKind::MemRead,
        MessageKind::MemWriteBack,
        MessageKind::MemData,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::GetS => "GetS",
            MessageKind::GetM => "GetM",
            MessageKind::PutM => "PutM",
            MessageKind::FwdGetS => "FwdGetS",
            MessageKind::FwdGetM => "FwdGetM",
            MessageKind::Inv => "Inv",
            MessageKind::InvAck => "InvAck",
            MessageKind::Data => "Data",
            MessageKind::DataExcl => "DataExcl",
            MessageKind::WBAck => "WBAck",
            MessageKind::Unblock => "Unblock",
            MessageKind::MemRead => "MemRead",
            MessageKind::MemWriteBack => "MemWriteBack",
            MessageKind::MemData => "MemData",
        }
    }

    /// Whether a packet of this kind carries a 512-bit block payload
    /// (one head flit plus payload flits) or is a single control flit.
    pub fn carries_data(self) -> bool {
        matches!(
            self,
            MessageKind::Data
                | MessageKind::DataExcl
                | MessageKind::MemData
                | MessageKind::PutM
                | MessageKind::MemWriteBack
        )
    }

    /// Structural position of this kind within a transaction. This is the
    /// classification used both for priority tagging (phase-priority mode)
    /// and for mode-independent per-class statistics.
    pub fn outer_phase(self) -> OuterPhase {
        match self {
            MessageKind::GetS | MessageKind::GetM | MessageKind::PutM => OuterPhase::Request,
            MessageKind::MemRead | MessageKind::MemWriteBack | MessageKind::MemData => {
                OuterPhase::Memory
            }
            _ => OuterPhase::Ordered,
        }
    }
}

impl std::fmt::Display for MessageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One coherence message. Field meaning depends on `kind`:
/// `value` is the block payload for data-carrying kinds, `ack_count` rides
/// on `Data` (how many `InvAck`s the requestor must gather), and `requestor`
/// rides on forwards/invalidations (whom to answer).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Message {
    pub txn: TxnId,
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub block: Block,
    pub value: u64,
    pub ack_count: u8,
    pub requestor: Option<NodeId>,
    pub tag: Option<PhaseTag>,
}

impl Message {
    /// A bare message with no payload, acks, requestor, or tag; builders
    /// below fill the rest.
    pub fn new(txn: TxnId, kind: MessageKind, src: NodeId, dst: NodeId, block: Block) -> Message {
        Message {
            txn,
            kind,
            src,
            dst,
            block,
            value: 0,
            ack_count: 0,
            requestor: None,
            tag: None,
        }
    }

    pub fn with_value(mut self, value: u64) -> Message {
        self.value = value;
        self
    }

    pub fn with_acks(mut self, acks: u8) -> Message {
        self.ack_count = acks;
        self
    }

    pub fn with_requestor(mut self, requestor: NodeId) -> Message {
        self.requestor = Some(requestor);
        self
    }

    pub fn with_tag(mut self, tag: Option<PhaseTag>) -> Message {
        self.tag = tag;
        self
    }
}

/// Tag for a fresh L1 request (pre-serialization). Inner bits are not yet
/// meaningful; transmitted as zero.
pub fn request_tag(mode: Mode) -> Option<PhaseTag> {
    match mode {
        Mode::Baseline => None,
        Mode::Ppb => Some(PhaseTag::new(OuterPhase::Request, 0)),
    }
}

/// Tag for post-serialization traffic of a transaction ordered with `inner`.
pub fn ordered_tag(inner: Option<u8>) -> Option<PhaseTag> {
    inner.map(|i| PhaseTag::new(OuterPhase::Ordered, i))
}

/// Tag for bank <-> memory traffic of a transaction ordered with `inner`.
pub fn memory_tag(inner: Option<u8>) -> Option<PhaseTag> {
    inner.map(|i| PhaseTag::new(OuterPhase::Memory, i))
}

/// Where the data for a serialized read/write grant comes from.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GrantSource {
    /// Served directly from the home L2 bank; the value granted.
    L2Direct { value: u64 },
    /// Forwarded to the current owner, which will supply the value.
    Owner,
    /// Block absent from L2; fetched from a memory controller.
    Memory,
}

/// What kind of transaction the directory just ordered.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SerializedAction {
    Read(GrantSource),
    Write(GrantSource),
    Writeback,
}

/// Observation events emitted by transitions. The engine turns these into
/// metrics and value-oracle checks; the model checker turns them into ghost
/// state for its invariants. They carry no authority over protocol state.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ProtocolEvent {
    /// The home directory ordered transaction `txn` on `block`. In
    /// phase-priority mode `inner` is the sequence number handed out.
    Serialized {
        txn: TxnId,
        block: Block,
        inner: Option<u8>,
        action: SerializedAction,
    },
    /// A load completed at `core` with `value`.
    LoadRetired {
        core: usize,
        txn: TxnId,
        block: Block,
        value: u64,
    },
    /// A store completed at `core`, writing `value`.
    StoreRetired {
        core: usize,
        txn: TxnId,
        block: Block,
        value: u64,
    },
    /// An invalidation reached a line still waiting for its read fill —
    /// the transient-state race the phase priorities exist to shrink.
    InvWhileFilling { core: usize, block: Block },
    /// A forward reached an L1 whose fill is still in flight and had to be
    /// held until the fill lands.
    FwdHeldAtL1 { core: usize, block: Block },
    /// An owner (or late owner) answered a forward, supplying `value`.
    OwnerSupplied { txn: TxnId, block: Block, value: u64 },
    /// An eviction finished (WBAck consumed).
    EvictDone { core: usize, txn: TxnId, block: Block },
    /// The directory fully retired a transaction: commit applied and the
    /// requestor's completion notice consumed.
    TxnClosed { txn: TxnId, block: Block },
}

/// Messages to send plus events to observe, produced by one transition.
#[derive(Clone, Debug, Default)]
pub struct Effects {
    pub msgs: Vec<Message>,
    pub events: Vec<ProtocolEvent>,
}

impl Effects {
    pub fn none() -> Effects {
        Effects::default()
    }

    pub fn msg(&mut self, m: Message) {
        self.msgs.push(m);
    }

    pub fn event(&mut self, e: ProtocolEvent) {
        self.events.push(e);
    }

    pub fn merge(&mut self, other: Effects) {
        self.msgs.extend(other.msgs);
        self.events.extend(other.events);
    }
}

/// A state/message combination with no legal transition. Reaching one of
/// these is a bug in the protocol tables, not a recoverable condition: the
/// simulator aborts the run and the checker reports it as a violation.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("protocol bug: {0}")]
pub struct ProtocolBug(pub String);

impl ProtocolBug {
    pub fn new(detail: impl Into<String>) -> ProtocolBug {
        ProtocolBug(detail.into())
    }
}

/// Test hooks that sabotage one transition row, used to demonstrate that
/// the exhaustive checker actually notices broken protocols.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Silently drop an invalidation that arrives during a read fill
    /// (no acknowledgment, no state change).
    DropInvDuringFill,
}

impl std::str::FromStr for Mutation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Mutation::None),
            "drop-inv-during-fill" => Ok(Mutation::DropInvDuringFill),
            other => Err(format!("unknown mutation `{other}`")),
        }
    }
}
