//! Home directory controller, one per L2 bank. Each block has a single
//! home bank that serializes all requests for it: a request either commits
//! immediately (grant straight from L2), goes busy while third parties are
//! consulted (owner forward, invalidations, memory fetch), or is stalled
//! for later when the block is already busy.
//!
//! The L2 itself is modeled as inclusive and always-allocating: once a
//! block's data reaches the bank it is never evicted, so the only memory
//! traffic is the first-touch fetch.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::MEM_RANGE_BLOCKS;
use crate::phase::InnerPhaseBuffer;
use crate::protocol::{
    memory_tag, ordered_tag, Effects, GrantSource, Message, MessageKind, ProtocolBug,
    ProtocolEvent, SerializedAction,
};
use crate::types::{Block, Mode, NodeId, TxnId};

/// Max concurrently in-flight transactions per block (busy + granted but
/// not yet unblocked). One less than the sequence-number window so that
/// outstanding numbers are always distinguishable.
pub const INFLIGHT_PER_BLOCK_LIMIT: usize = 63;

/// What the directory will look like once the current busy transaction
/// finishes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PendingCommit {
    /// Reader joined an owned block: requestor and demoted owner share.
    ToShared { requestor: usize, prev_owner: usize },
    /// Writer takes the block exclusively.
    ToExclusive { requestor: usize },
}

/// Bookkeeping for a transaction the directory is busy on.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BusyMeta {
    pub txn: TxnId,
    pub requestor: usize,
    /// Requestor's completion notice still owed.
    pub need_unblock: bool,
    /// Demoted owner's data copy still owed to the L2.
    pub need_wbcopy: bool,
    pub commit: PendingCommit,
    /// Sequence number issued at serialization (tagged mode only).
    pub inner: Option<u8>,
}

/// Bookkeeping for a first-touch fetch outstanding to memory.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MemFill {
    pub txn: TxnId,
    pub requestor: usize,
    /// True for a read request (grants E), false for a write (grants M).
    pub read: bool,
    pub inner: Option<u8>,
}

/// Directory state of one block at its home bank.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub enum DirState {
    /// No L1 holds the block (the L2 may still have data).
    #[default]
    Invalid,
    /// One or more read-only L1 copies.
    Shared,
    /// Exactly one L1 owns the block (E or M there).
    Exclusive,
    /// Read request in progress against an owner.
    BusyRd(BusyMeta),
    /// Write request in progress (owner forward or invalidations).
    BusyWr(BusyMeta),
    /// Commit ready but the demoted owner's data copy is still in flight.
    BusyWb(BusyMeta),
    /// First-touch fetch outstanding to a memory controller.
    BusyMem(MemFill),
}

impl DirState {
    pub fn is_busy(&self) -> bool {
        !matches!(
            self,
            DirState::Invalid | DirState::Shared | DirState::Exclusive
        )
    }
}

/// Full per-block record at the home bank: directory state plus the L2
/// data copy and the set of granted-but-not-yet-acknowledged transactions.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct DirEntry {
    pub state: DirState,
    pub sharers: BTreeSet<usize>,
    pub owner: Option<usize>,
    pub l2_valid: bool,
    pub l2_value: u64,
    /// L2 copy may differ from memory's (set when an owner writes back).
    pub dirty: bool,
    /// Transactions granted immediately whose Unblock is still in flight,
    /// keyed by (transaction, requestor core).
    pub inflight: BTreeSet<(TxnId, usize)>,
}

impl DirEntry {
    /// Busy plus granted-in-flight load on this block.
    pub fn outstanding(&self) -> usize {
        self.inflight.len() + usize::from(self.state.is_busy())
    }
}

/// Result of offering a message to the bank.
#[derive(Clone, Debug)]
pub enum DirOutcome {
    Done(Effects),
    /// The block is busy (or its in-flight window is full): the message
    /// was not consumed and must be re-presented after the block frees up.
    Stall,
}

/// One L2 bank with its slice of the directory.
#[derive(Clone, Debug)]
pub struct Bank {
    tile: usize,
    node: NodeId,
    entries: BTreeMap<Block, DirEntry>,
    inner: InnerPhaseBuffer,
    mem_controllers: u64,
}

impl Bank {
    pub fn new(tile: usize, inner_capacity: usize, mem_controllers: u64) -> Bank {
        assert!(mem_controllers > 0);
        Bank {
            tile,
            node: NodeId::Bank(tile as u16),
            entries: BTreeMap::new(),
            inner: InnerPhaseBuffer::new(inner_capacity),
            mem_controllers,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn entry(&self, block: Block) -> Option<&DirEntry> {
        self.entries.get(&block)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Block, &DirEntry)> + '_ {
        self.entries.iter()
    }

    /// Sequence numbers last issued per block (tagged mode), without the
    /// recency bookkeeping.
    pub fn inner_entries(&self) -> impl Iterator<Item = (u64, u8)> + '_ {
        self.inner.iter()
    }

    pub fn is_busy(&self, block: Block) -> bool {
        self.entries
            .get(&block)
            .map(|e| e.state.is_busy())
            .unwrap_or(false)
    }

    /// True when every block is in a stable state with nothing granted
    /// and unacknowledged.
    pub fn quiescent(&self) -> bool {
        self.entries
            .values()
            .all(|e| !e.state.is_busy() && e.inflight.is_empty())
    }

    /// Whether `msg` would be stalled rather than consumed right now.
    /// Only block-serializing requests (GetS/GetM/PutM) ever stall.
    pub fn would_stall(&self, msg: &Message) -> bool {
        match msg.kind {
            MessageKind::GetS | MessageKind::GetM | MessageKind::PutM => self
                .entries
                .get(&msg.block)
                .map(|e| e.state.is_busy() || e.outstanding() >= INFLIGHT_PER_BLOCK_LIMIT)
                .unwrap_or(false),
            _ => false,
        }
    }

    fn mem_node(&self, block: Block) -> NodeId {
        NodeId::Mem(((block / MEM_RANGE_BLOCKS) % self.mem_controllers) as u16)
    }

    fn bug(&self, detail: String) -> ProtocolBug {
        ProtocolBug::new(format!("bank {}: {detail}", self.tile))
    }

    fn core_of(&self, src: NodeId) -> Result<usize, ProtocolBug> {
        match src {
            NodeId::L1(c) => Ok(c as usize),
            other => Err(self.bug(format!("request from non-core {other}"))),
        }
    }

    /// Consume one message, or report that it must wait for the block.
    pub fn handle_message(
        &mut self,
        msg: &Message,
        mode: Mode,
    ) -> Result<DirOutcome, ProtocolBug> {
        match msg.kind {
            MessageKind::GetS => self.on_gets(msg, mode),
            MessageKind::GetM => self.on_getm(msg, mode),
            MessageKind::PutM => self.on_putm(msg, mode),
            MessageKind::Unblock => self.on_unblock(msg),
            MessageKind::Data => self.on_owner_copy(msg),
            MessageKind::MemData => self.on_mem_data(msg),
            other => Err(self.bug(format!("unexpected {other} for block {:#x}", msg.block))),
        }
    }

    fn on_gets(&mut self, msg: &Message, mode: Mode) -> Result<DirOutcome, ProtocolBug> {
        let req = self.core_of(msg.src)?;
        let node = self.node;
        let mem = self.mem_node(msg.block);
        let e = self.entries.entry(msg.block).or_default();
        if e.state.is_busy() || e.outstanding() >= INFLIGHT_PER_BLOCK_LIMIT {
            return Ok(DirOutcome::Stall);
        }
        let mut fx = Effects::none();
        match e.state {
            // Event: GetS at Invalid with an L2 copy -> sole reader gets
            // the block exclusively.
            DirState::Invalid if e.l2_valid => {
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                e.owner = Some(req);
                e.state = DirState::Exclusive;
                e.inflight.insert((msg.txn, req));
                fx.msg(
                    Message::new(msg.txn, MessageKind::DataExcl, node, msg.src, msg.block)
                        .with_value(e.l2_value)
                        .with_tag(ordered_tag(inner)),
                );
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Read(GrantSource::L2Direct { value: e.l2_value }),
                });
            }
            // Event: GetS at Invalid with no data -> fetch from memory.
            DirState::Invalid => {
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                e.state = DirState::BusyMem(MemFill {
                    txn: msg.txn,
                    requestor: req,
                    read: true,
                    inner,
                });
                fx.msg(
                    Message::new(msg.txn, MessageKind::MemRead, node, mem, msg.block)
                        .with_tag(memory_tag(inner)),
                );
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Read(GrantSource::Memory),
                });
            }
            // Event: GetS at Shared -> grant from L2, add the sharer.
            DirState::Shared => {
                if e.sharers.contains(&req) {
                    return Err(ProtocolBug::new(format!(
                        "bank {}: GetS from existing sharer {req}",
                        self.tile
                    )));
                }
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                e.sharers.insert(req);
                e.inflight.insert((msg.txn, req));
                fx.msg(
                    Message::new(msg.txn, MessageKind::Data, node, msg.src, msg.block)
                        .with_value(e.l2_value)
                        .with_tag(ordered_tag(inner)),
                );
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Read(GrantSource::L2Direct { value: e.l2_value }),
                });
            }
            // Event: GetS at Exclusive -> forward to the owner and go busy
            // until both the requestor's notice and the owner's copy land.
            DirState::Exclusive => {
                let owner = e.owner.expect("exclusive entry has an owner");
                if owner == req {
                    return Err(ProtocolBug::new(format!(
                        "bank {}: GetS from current owner {req}",
                        self.tile
                    )));
                }
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                e.state = DirState::BusyRd(BusyMeta {
                    txn: msg.txn,
                    requestor: req,
                    need_unblock: true,
                    need_wbcopy: true,
                    commit: PendingCommit::ToShared {
                        requestor: req,
                        prev_owner: owner,
                    },
                    inner,
                });
                fx.msg(
                    Message::new(
                        msg.txn,
                        MessageKind::FwdGetS,
                        node,
                        NodeId::L1(owner as u16),
                        msg.block,
                    )
                    .with_requestor(msg.src)
                    .with_tag(ordered_tag(inner)),
                );
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Read(GrantSource::Owner),
                });
            }
            _ => unreachable!("busy handled above"),
        }
        Ok(DirOutcome::Done(fx))
    }

    fn on_getm(&mut self, msg: &Message, mode: Mode) -> Result<DirOutcome, ProtocolBug> {
        let req = self.core_of(msg.src)?;
        let node = self.node;
        let mem = self.mem_node(msg.block);
        let e = self.entries.entry(msg.block).or_default();
        if e.state.is_busy() || e.outstanding() >= INFLIGHT_PER_BLOCK_LIMIT {
            return Ok(DirOutcome::Stall);
        }
        let mut fx = Effects::none();
        match e.state {
            // Event: GetM at Invalid with an L2 copy -> immediate grant.
            DirState::Invalid if e.l2_valid => {
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                e.owner = Some(req);
                e.state = DirState::Exclusive;
                e.inflight.insert((msg.txn, req));
                fx.msg(
                    Message::new(msg.txn, MessageKind::Data, node, msg.src, msg.block)
                        .with_value(e.l2_value)
                        .with_tag(ordered_tag(inner)),
                );
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Write(GrantSource::L2Direct { value: e.l2_value }),
                });
            }
            // Event: GetM at Invalid with no data -> fetch from memory.
            DirState::Invalid => {
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                e.state = DirState::BusyMem(MemFill {
                    txn: msg.txn,
                    requestor: req,
                    read: false,
                    inner,
                });
                fx.msg(
                    Message::new(msg.txn, MessageKind::MemRead, node, mem, msg.block)
                        .with_tag(memory_tag(inner)),
                );
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Write(GrantSource::Memory),
                });
            }
            // Event: GetM at Shared -> invalidate other sharers; the grant
            // tells the requestor how many acks to expect.
            DirState::Shared => {
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                let others: Vec<usize> =
                    e.sharers.iter().copied().filter(|s| *s != req).collect();
                if others.is_empty() {
                    // Sole sharer upgrades in place.
                    e.sharers.clear();
                    e.owner = Some(req);
                    e.state = DirState::Exclusive;
                    e.inflight.insert((msg.txn, req));
                    fx.msg(
                        Message::new(msg.txn, MessageKind::Data, node, msg.src, msg.block)
                            .with_value(e.l2_value)
                            .with_tag(ordered_tag(inner)),
                    );
                } else {
                    assert!(others.len() <= u8::MAX as usize);
                    for o in &others {
                        fx.msg(
                            Message::new(
                                msg.txn,
                                MessageKind::Inv,
                                node,
                                NodeId::L1(*o as u16),
                                msg.block,
                            )
                            .with_requestor(msg.src)
                            .with_tag(ordered_tag(inner)),
                        );
                    }
                    fx.msg(
                        Message::new(msg.txn, MessageKind::Data, node, msg.src, msg.block)
                            .with_value(e.l2_value)
                            .with_acks(others.len() as u8)
                            .with_tag(ordered_tag(inner)),
                    );
                    e.state = DirState::BusyWr(BusyMeta {
                        txn: msg.txn,
                        requestor: req,
                        need_unblock: true,
                        need_wbcopy: false,
                        commit: PendingCommit::ToExclusive { requestor: req },
                        inner,
                    });
                }
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Write(GrantSource::L2Direct { value: e.l2_value }),
                });
            }
            // Event: GetM at Exclusive -> forward to the owner.
            DirState::Exclusive => {
                let owner = e.owner.expect("exclusive entry has an owner");
                if owner == req {
                    return Err(ProtocolBug::new(format!(
                        "bank {}: GetM from current owner {req}",
                        self.tile
                    )));
                }
                let inner = match mode {
                    Mode::Baseline => None,
                    Mode::Ppb => Some(self.inner.next_inner(msg.block)),
                };
                e.state = DirState::BusyWr(BusyMeta {
                    txn: msg.txn,
                    requestor: req,
                    need_unblock: true,
                    need_wbcopy: false,
                    commit: PendingCommit::ToExclusive { requestor: req },
                    inner,
                });
                fx.msg(
                    Message::new(
                        msg.txn,
                        MessageKind::FwdGetM,
                        node,
                        NodeId::L1(owner as u16),
                        msg.block,
                    )
                    .with_requestor(msg.src)
                    .with_tag(ordered_tag(inner)),
                );
                fx.event(ProtocolEvent::Serialized {
                    txn: msg.txn,
                    block: msg.block,
                    inner,
                    action: SerializedAction::Write(GrantSource::Owner),
                });
            }
            _ => unreachable!("busy handled above"),
        }
        Ok(DirOutcome::Done(fx))
    }

    fn on_putm(&mut self, msg: &Message, mode: Mode) -> Result<DirOutcome, ProtocolBug> {
        let n = self.core_of(msg.src)?;
        let node = self.node;
        let e = self.entries.entry(msg.block).or_default();
        if e.state.is_busy() || e.outstanding() >= INFLIGHT_PER_BLOCK_LIMIT {
            return Ok(DirOutcome::Stall);
        }
        let inner = match mode {
            Mode::Baseline => None,
            Mode::Ppb => Some(self.inner.next_inner(msg.block)),
        };
        let mut fx = Effects::none();
        if e.owner == Some(n) {
            // Event: owner writes back -> L2 takes the data, block is left
            // with no L1 copies.
            debug_assert!(e.sharers.is_empty());
            e.l2_value = msg.value;
            e.l2_valid = true;
            e.dirty = true;
            e.owner = None;
            e.state = DirState::Invalid;
        } else if e.sharers.remove(&n) {
            // Event: sharer evicts its clean copy; payload ignored.
            if e.sharers.is_empty() {
                e.state = DirState::Invalid;
            }
        }
        // Event: late writeback from an L1 that a forward has since
        // dispossessed -> acknowledge only, payload ignored.
        fx.msg(
            Message::new(msg.txn, MessageKind::WBAck, node, msg.src, msg.block)
                .with_tag(ordered_tag(inner)),
        );
        fx.event(ProtocolEvent::Serialized {
            txn: msg.txn,
            block: msg.block,
            inner,
            action: SerializedAction::Writeback,
        });
        Ok(DirOutcome::Done(fx))
    }

    fn on_unblock(&mut self, msg: &Message) -> Result<DirOutcome, ProtocolBug> {
        let c = self.core_of(msg.src)?;
        let tile = self.tile;
        let e = self
            .entries
            .get_mut(&msg.block)
            .ok_or_else(|| ProtocolBug::new(format!("bank {tile}: Unblock for unknown block")))?;
        let busy_txn = match &e.state {
            DirState::BusyRd(m) | DirState::BusyWr(m) | DirState::BusyWb(m) => Some(m.txn),
            _ => None,
        };
        if busy_txn == Some(msg.txn) {
            // Event: the busy transaction's requestor reports completion.
            match &mut e.state {
                DirState::BusyRd(m) | DirState::BusyWr(m) | DirState::BusyWb(m) => {
                    if !m.need_unblock {
                        return Err(ProtocolBug::new(format!(
                            "bank {tile}: duplicate Unblock for txn {}",
                            msg.txn
                        )));
                    }
                    m.need_unblock = false;
                }
                _ => unreachable!(),
            }
            let mut fx = Effects::none();
            if let Some(txn) = try_commit(e) {
                fx.event(ProtocolEvent::TxnClosed {
                    txn,
                    block: msg.block,
                });
            }
            Ok(DirOutcome::Done(fx))
        } else if e.inflight.remove(&(msg.txn, c)) {
            // Event: completion notice for an immediately granted txn.
            let mut fx = Effects::none();
            fx.event(ProtocolEvent::TxnClosed {
                txn: msg.txn,
                block: msg.block,
            });
            Ok(DirOutcome::Done(fx))
        } else {
            Err(ProtocolBug::new(format!(
                "bank {tile}: unmatched Unblock txn {} from core {c}",
                msg.txn
            )))
        }
    }

    /// Data arriving at the bank: a demoted owner's copy for the L2.
    fn on_owner_copy(&mut self, msg: &Message) -> Result<DirOutcome, ProtocolBug> {
        let tile = self.tile;
        let e = self
            .entries
            .get_mut(&msg.block)
            .ok_or_else(|| ProtocolBug::new(format!("bank {tile}: Data for unknown block")))?;
        match &mut e.state {
            // Event: owner's up-to-date copy lands during a read forward.
            DirState::BusyRd(m) | DirState::BusyWb(m)
                if m.need_wbcopy && m.txn == msg.txn =>
            {
                m.need_wbcopy = false;
                e.l2_value = msg.value;
                e.l2_valid = true;
                e.dirty = true;
                let mut fx = Effects::none();
                if let Some(txn) = try_commit(e) {
                    fx.event(ProtocolEvent::TxnClosed {
                        txn,
                        block: msg.block,
                    });
                }
                Ok(DirOutcome::Done(fx))
            }
            other => Err(ProtocolBug::new(format!(
                "bank {tile}: Data for {:#x} in state {other:?}",
                msg.block
            ))),
        }
    }

    fn on_mem_data(&mut self, msg: &Message) -> Result<DirOutcome, ProtocolBug> {
        let tile = self.tile;
        let node = self.node;
        let e = self
            .entries
            .get_mut(&msg.block)
            .ok_or_else(|| ProtocolBug::new(format!("bank {tile}: MemData for unknown block")))?;
        match e.state.clone() {
            // Event: first-touch fill returns; grant and commit exclusive.
            DirState::BusyMem(mf) if mf.txn == msg.txn => {
                e.l2_valid = true;
                e.l2_value = msg.value;
                e.dirty = false;
                e.owner = Some(mf.requestor);
                e.state = DirState::Exclusive;
                e.inflight.insert((mf.txn, mf.requestor));
                let kind = if mf.read {
                    MessageKind::DataExcl
                } else {
                    MessageKind::Data
                };
                let mut fx = Effects::none();
                fx.msg(
                    Message::new(
                        mf.txn,
                        kind,
                        node,
                        NodeId::L1(mf.requestor as u16),
                        msg.block,
                    )
                    .with_value(msg.value)
                    .with_tag(ordered_tag(mf.inner)),
                );
                Ok(DirOutcome::Done(fx))
            }
            other => Err(ProtocolBug::new(format!(
                "bank {tile}: MemData for {:#x} in state {other:?}",
                msg.block
            ))),
        }
    }
}

/// Apply the pending commit once nothing more is owed; downgrade to the
/// copy-only wait state if just the owner's data is outstanding. Returns
/// the transaction id when the commit is applied now.
fn try_commit(e: &mut DirEntry) -> Option<TxnId> {
    let meta = match &e.state {
        DirState::BusyRd(m) | DirState::BusyWr(m) | DirState::BusyWb(m) => m.clone(),
        _ => return None,
    };
    if meta.need_unblock {
        return None;
    }
    if meta.need_wbcopy {
        e.state = DirState::BusyWb(meta);
        return None;
    }
    match meta.commit {
        PendingCommit::ToShared {
            requestor,
            prev_owner,
        } => {
            e.sharers.clear();
            e.sharers.insert(requestor);
            e.sharers.insert(prev_owner);
            e.owner = None;
            e.state = DirState::Shared;
        }
        PendingCommit::ToExclusive { requestor } => {
            e.sharers.clear();
            e.owner = Some(requestor);
            e.state = DirState::Exclusive;
        }
    }
    Some(meta.txn)
}
