//! L1 cache controller: a private, write-back L1 kept coherent by the home
//! directory. Stable lines live in a set-associative array; every in-flight
//! transaction (fetch or eviction) occupies one MSHR keyed by block.

use std::collections::BTreeMap;

use crate::phase::PhaseTag;
use crate::protocol::{
    request_tag, Effects, Message, MessageKind, Mutation, ProtocolBug, ProtocolEvent,
};
use crate::types::{Block, Cycle, Mode, NodeId, TxnId};

/// Stable line states. Invalid is represented by absence from the array.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum StableState {
    S,
    E,
    M,
}

/// Transient states of an outstanding fetch (GetS/GetM), held in an MSHR.
/// `IsD` awaits a read fill; `ImAd`/`SmAd` await a write fill plus an
/// unknown number of acks; `ImA`/`SmA` have the fill and await known acks.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum FetchState {
    IsD,
    ImAd,
    ImA,
    SmAd,
    SmA,
}

/// Transient states of an outstanding eviction (PutM sent, WBAck pending),
/// named for the state the line was in when victimized. `SiA` is also where
/// a demoted owner lands when a read forward hits its eviction; `IiA` is an
/// eviction whose line has since been taken away entirely.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum EvictState {
    MiA,
    EiA,
    SiA,
    IiA,
}

/// What a core asks of its L1.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum OpKind {
    Load,
    Store,
}

/// One core memory operation. `value` is the value a store writes
/// (ignored for loads).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CoreOp {
    pub kind: OpKind,
    pub block: Block,
    pub value: u64,
}

/// Outcome of presenting a core operation to the L1.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CoreOpStatus {
    /// Served from the array; `value` is the loaded (or just-stored) value.
    Hit { value: u64 },
    /// A request was issued; completion arrives via messages later.
    Miss,
    /// Cannot start now (block already in flight, or no MSHR/way free);
    /// present the same operation again later.
    Retry,
}

#[derive(Clone, PartialEq, Eq, Debug)]
struct Line {
    state: StableState,
    value: u64,
    touch: Cycle,
}

/// MSHR for an outstanding fetch.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FetchMshr {
    pub state: FetchState,
    pub op: CoreOp,
    pub txn: TxnId,
    /// Total acks the fill said to expect (known once Data arrives).
    pub acks_needed: Option<u8>,
    pub acks_got: u8,
    /// An invalidation overtook the read fill: consume the fill's value
    /// once but do not install the line.
    pub inv_while_filling: bool,
    /// A forward that arrived before our own fill; served right after it.
    pub held_fwd: Option<Message>,
    /// Whether this MSHR holds a reserved (empty) way in its set.
    pub reserved: bool,
}

/// MSHR for an outstanding eviction. `value` is the evicted line's data,
/// still supplied to forwards that race ahead of the PutM.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EvictMshr {
    pub state: EvictState,
    pub txn: TxnId,
    pub value: u64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum MshrEntry {
    Fetch(FetchMshr),
    Evict(EvictMshr),
}

/// Introspection snapshot of one block's standing in this L1.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Probe {
    Stable(StableState, u64),
    Fetch(FetchState),
    Evict(EvictState),
    Absent,
}

/// One private L1 cache plus its controller state.
#[derive(Clone, Debug)]
pub struct L1Cache {
    core: usize,
    node: NodeId,
    sets: usize,
    ways: usize,
    mshr_cap: usize,
    banks: u64,
    /// `lines[set][way]`
    lines: Vec<Vec<Option<(Block, Line)>>>,
    /// Ways per set promised to in-flight fills.
    reserved: Vec<u8>,
    mshrs: BTreeMap<Block, MshrEntry>,
    mutation: Mutation,
}

impl L1Cache {
    pub fn new(core: usize, sets: usize, ways: usize, mshr_cap: usize, banks: u64) -> L1Cache {
        assert!(sets > 0 && ways > 0 && mshr_cap > 0 && banks > 0);
        L1Cache {
            core,
            node: NodeId::L1(core as u16),
            sets,
            ways,
            mshr_cap,
            banks,
            lines: vec![vec![None; ways]; sets],
            reserved: vec![0; sets],
            mshrs: BTreeMap::new(),
            mutation: Mutation::None,
        }
    }

    pub fn set_mutation(&mut self, m: Mutation) {
        self.mutation = m;
    }

    pub fn core(&self) -> usize {
        self.core
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    fn set_of(&self, block: Block) -> usize {
        (block % self.sets as u64) as usize
    }

    fn home(&self, block: Block) -> NodeId {
        NodeId::Bank((block % self.banks) as u16)
    }

    fn line_pos(&self, block: Block) -> Option<(usize, usize)> {
        let set = self.set_of(block);
        self.lines[set]
            .iter()
            .position(|slot| matches!(slot, Some((b, _)) if *b == block))
            .map(|way| (set, way))
    }

    fn install(&mut self, block: Block, state: StableState, value: u64, now: Cycle) {
        let set = self.set_of(block);
        let way = self.lines[set]
            .iter()
            .position(|slot| slot.is_none())
            .expect("reserved way must be free at install time");
        self.lines[set][way] = Some((block, Line { state, value, touch: now }));
    }

    /// What this L1 currently holds for `block`.
    pub fn probe(&self, block: Block) -> Probe {
        match self.mshrs.get(&block) {
            Some(MshrEntry::Fetch(f)) => Probe::Fetch(f.state),
            Some(MshrEntry::Evict(e)) => Probe::Evict(e.state),
            None => match self.line_pos(block) {
                Some((s, w)) => {
                    let line = &self.lines[s][w].as_ref().unwrap().1;
                    Probe::Stable(line.state, line.value)
                }
                None => Probe::Absent,
            },
        }
    }

    pub fn mshr_view(&self, block: Block) -> Option<&MshrEntry> {
        self.mshrs.get(&block)
    }

    pub fn mshrs(&self) -> impl Iterator<Item = (&Block, &MshrEntry)> + '_ {
        self.mshrs.iter()
    }

    pub fn mshr_len(&self) -> usize {
        self.mshrs.len()
    }

    /// True when no transaction is in flight from this L1.
    pub fn quiescent(&self) -> bool {
        self.mshrs.is_empty()
    }

    /// All stable lines, for whole-system invariant checks.
    pub fn stable_lines(&self) -> impl Iterator<Item = (Block, StableState, u64)> + '_ {
        self.lines.iter().flatten().filter_map(|slot| {
            slot.as_ref()
                .map(|(b, line)| (*b, line.state, line.value))
        })
    }

    fn bug(&self, detail: String) -> ProtocolBug {
        ProtocolBug::new(format!("l1 {}: {detail}", self.core))
    }

    /// Present one core operation. On `Miss`, MSHRs were allocated and the
    /// returned effects carry the request (plus any eviction it forced);
    /// `evict_txn` mints a transaction id if a victim writeback is needed.
    pub fn handle_core_op(
        &mut self,
        op: CoreOp,
        txn: TxnId,
        evict_txn: &mut dyn FnMut(Block) -> TxnId,
        now: Cycle,
        mode: Mode,
    ) -> (CoreOpStatus, Effects) {
        let mut fx = Effects::none();
        // Event: op while the block is already in flight -> retry later.
        if self.mshrs.contains_key(&op.block) {
            return (CoreOpStatus::Retry, fx);
        }

        if let Some((set, way)) = self.line_pos(op.block) {
            let line = &mut self.lines[set][way].as_mut().unwrap().1;
            match (op.kind, line.state) {
                // Event: load hit in S/E/M.
                (OpKind::Load, _) => {
                    line.touch = now;
                    let value = line.value;
                    fx.event(ProtocolEvent::LoadRetired {
                        core: self.core,
                        txn,
                        block: op.block,
                        value,
                    });
                    return (CoreOpStatus::Hit { value }, fx);
                }
                // Event: store hit in M, or silent E->M upgrade.
                (OpKind::Store, StableState::M) | (OpKind::Store, StableState::E) => {
                    line.state = StableState::M;
                    line.value = op.value;
                    line.touch = now;
                    fx.event(ProtocolEvent::StoreRetired {
                        core: self.core,
                        txn,
                        block: op.block,
                        value: op.value,
                    });
                    return (CoreOpStatus::Hit { value: op.value }, fx);
                }
                // Event: store hit in S -> upgrade; line stays readable in
                // the array while the GetM is outstanding.
                (OpKind::Store, StableState::S) => {
                    if self.mshrs.len() >= self.mshr_cap {
                        return (CoreOpStatus::Retry, fx);
                    }
                    self.mshrs.insert(
                        op.block,
                        MshrEntry::Fetch(FetchMshr {
                            state: FetchState::SmAd,
                            op,
                            txn,
                            acks_needed: None,
                            acks_got: 0,
                            inv_while_filling: false,
                            held_fwd: None,
                            reserved: false,
                        }),
                    );
                    fx.msg(
                        Message::new(txn, MessageKind::GetM, self.node, self.home(op.block), op.block)
                            .with_tag(request_tag(mode)),
                    );
                    return (CoreOpStatus::Miss, fx);
                }
            }
        }

        // Miss: secure a way (evicting if necessary) and an MSHR, then issue.
        let set = self.set_of(op.block);
        let occupied = self.lines[set].iter().filter(|s| s.is_some()).count();
        let free = self.ways - occupied - self.reserved[set] as usize;
        if free == 0 {
            if occupied == 0 {
                // Every way promised to other fills; nothing evictable yet.
                return (CoreOpStatus::Retry, fx);
            }
            if self.mshr_cap - self.mshrs.len() < 2 {
                return (CoreOpStatus::Retry, fx);
            }
            // Event: capacity eviction of the least-recently-touched line.
            let way = (0..self.ways)
                .filter(|w| self.lines[set][*w].is_some())
                .min_by_key(|w| {
                    let line = &self.lines[set][*w].as_ref().unwrap().1;
                    (line.touch, *w)
                })
                .unwrap();
            let (vblock, vline) = self.lines[set][way].take().unwrap();
            let etxn = evict_txn(vblock);
            let estate = match vline.state {
                StableState::M => EvictState::MiA,
                StableState::E => EvictState::EiA,
                StableState::S => EvictState::SiA,
            };
            self.mshrs.insert(
                vblock,
                MshrEntry::Evict(EvictMshr {
                    state: estate,
                    txn: etxn,
                    value: vline.value,
                }),
            );
            fx.msg(
                Message::new(etxn, MessageKind::PutM, self.node, self.home(vblock), vblock)
                    .with_value(vline.value)
                    .with_tag(request_tag(mode)),
            );
        } else if self.mshr_cap - self.mshrs.len() < 1 {
            return (CoreOpStatus::Retry, fx);
        }

        self.reserved[set] += 1;
        let (state, kind) = match op.kind {
            OpKind::Load => (FetchState::IsD, MessageKind::GetS),
            OpKind::Store => (FetchState::ImAd, MessageKind::GetM),
        };
        self.mshrs.insert(
            op.block,
            MshrEntry::Fetch(FetchMshr {
                state,
                op,
                txn,
                acks_needed: None,
                acks_got: 0,
                inv_while_filling: false,
                held_fwd: None,
                reserved: true,
            }),
        );
        fx.msg(
            Message::new(txn, kind, self.node, self.home(op.block), op.block)
                .with_tag(request_tag(mode)),
        );
        (CoreOpStatus::Miss, fx)
    }

    /// Voluntarily evict `block` if it is stable here (used by the model
    /// checker to explore evictions at every opportunity). Returns the
    /// outgoing PutM, or `None` when not currently possible.
    pub fn evict_block(
        &mut self,
        block: Block,
        txn: TxnId,
        _now: Cycle,
        mode: Mode,
    ) -> Option<Effects> {
        if self.mshrs.contains_key(&block) || self.mshrs.len() >= self.mshr_cap {
            return None;
        }
        let (set, way) = self.line_pos(block)?;
        let (_, line) = self.lines[set][way].take().unwrap();
        let estate = match line.state {
            StableState::M => EvictState::MiA,
            StableState::E => EvictState::EiA,
            StableState::S => EvictState::SiA,
        };
        self.mshrs.insert(
            block,
            MshrEntry::Evict(EvictMshr {
                state: estate,
                txn,
                value: line.value,
            }),
        );
        let mut fx = Effects::none();
        fx.msg(
            Message::new(txn, MessageKind::PutM, self.node, self.home(block), block)
                .with_value(line.value)
                .with_tag(request_tag(mode)),
        );
        Some(fx)
    }

    /// Consume one incoming message.
    pub fn handle_message(
        &mut self,
        msg: &Message,
        now: Cycle,
        mode: Mode,
    ) -> Result<Effects, ProtocolBug> {
        match msg.kind {
            MessageKind::Data => self.on_data(msg, now, mode),
            MessageKind::DataExcl => self.on_data_excl(msg, now, mode),
            MessageKind::Inv => self.on_inv(msg),
            MessageKind::FwdGetS | MessageKind::FwdGetM => self.on_fwd(msg, now, mode),
            MessageKind::InvAck => self.on_inv_ack(msg, now, mode),
            MessageKind::WBAck => self.on_wback(msg),
            other => Err(self.bug(format!("unexpected {other} for block {:#x}", msg.block))),
        }
    }

    fn on_data(&mut self, msg: &Message, now: Cycle, mode: Mode) -> Result<Effects, ProtocolBug> {
        match self.mshrs.remove(&msg.block) {
            // Event: read fill arrives in IS_D.
            Some(MshrEntry::Fetch(f)) if f.state == FetchState::IsD => {
                if msg.ack_count != 0 {
                    return Err(self.bug(format!("read fill with acks for {:#x}", msg.block)));
                }
                if f.held_fwd.is_some() {
                    return Err(self.bug(format!("held forward on shared fill {:#x}", msg.block)));
                }
                if f.reserved {
                    let set = self.set_of(msg.block);
                    self.reserved[set] -= 1;
                }
                if !f.inv_while_filling {
                    self.install(msg.block, StableState::S, msg.value, now);
                }
                // (When an invalidation raced the fill, the value is
                // delivered to the load once but nothing is installed.)
                let mut fx = Effects::none();
                fx.event(ProtocolEvent::LoadRetired {
                    core: self.core,
                    txn: f.txn,
                    block: msg.block,
                    value: msg.value,
                });
                fx.msg(
                    Message::new(f.txn, MessageKind::Unblock, self.node, self.home(msg.block), msg.block)
                        .with_tag(msg.tag),
                );
                Ok(fx)
            }
            // Event: write fill arrives in IM_AD / SM_AD.
            Some(MshrEntry::Fetch(mut f))
                if f.state == FetchState::ImAd || f.state == FetchState::SmAd =>
            {
                f.acks_needed = Some(msg.ack_count);
                if f.acks_got >= msg.ack_count {
                    self.complete_store(f, msg.block, msg.tag, now, mode)
                } else {
                    f.state = if f.state == FetchState::ImAd {
                        FetchState::ImA
                    } else {
                        FetchState::SmA
                    };
                    self.mshrs.insert(msg.block, MshrEntry::Fetch(f));
                    Ok(Effects::none())
                }
            }
            other => {
                let err = self.bug(format!("Data for {:#x} in state {other:?}", msg.block));
                if let Some(e) = other {
                    self.mshrs.insert(msg.block, e);
                }
                Err(err)
            }
        }
    }

    fn on_data_excl(
        &mut self,
        msg: &Message,
        now: Cycle,
        _mode: Mode,
    ) -> Result<Effects, ProtocolBug> {
        match self.mshrs.remove(&msg.block) {
            // Event: exclusive read fill arrives in IS_D.
            Some(MshrEntry::Fetch(f)) if f.state == FetchState::IsD => {
                if f.inv_while_filling {
                    return Err(self.bug(format!(
                        "invalidation raced an exclusive fill for {:#x}",
                        msg.block
                    )));
                }
                if f.reserved {
                    let set = self.set_of(msg.block);
                    self.reserved[set] -= 1;
                }
                self.install(msg.block, StableState::E, msg.value, now);
                let mut fx = Effects::none();
                fx.event(ProtocolEvent::LoadRetired {
                    core: self.core,
                    txn: f.txn,
                    block: msg.block,
                    value: msg.value,
                });
                fx.msg(
                    Message::new(f.txn, MessageKind::Unblock, self.node, self.home(msg.block), msg.block)
                        .with_tag(msg.tag),
                );
                if let Some(held) = f.held_fwd {
                    fx.merge(self.serve_fwd_from_stable(&held, now)?);
                }
                Ok(fx)
            }
            other => {
                let err = self.bug(format!("DataExcl for {:#x} in state {other:?}", msg.block));
                if let Some(e) = other {
                    self.mshrs.insert(msg.block, e);
                }
                Err(err)
            }
        }
    }

    /// Finish an outstanding store: install/overwrite the line in M with
    /// the store's value, retire, unblock the directory, then serve any
    /// forward that was waiting on the fill. `grant_tag` is the priority
    /// tag of the message that completed the transaction; the Unblock
    /// inherits it.
    fn complete_store(
        &mut self,
        f: FetchMshr,
        block: Block,
        grant_tag: Option<PhaseTag>,
        now: Cycle,
        _mode: Mode,
    ) -> Result<Effects, ProtocolBug> {
        if f.reserved {
            let set = self.set_of(block);
            self.reserved[set] -= 1;
            self.install(block, StableState::M, f.op.value, now);
        } else {
            let (set, way) = self
                .line_pos(block)
                .ok_or_else(|| self.bug(format!("upgrade fill without array line {block:#x}")))?;
            let line = &mut self.lines[set][way].as_mut().unwrap().1;
            line.state = StableState::M;
            line.value = f.op.value;
            line.touch = now;
        }
        let mut fx = Effects::none();
        fx.event(ProtocolEvent::StoreRetired {
            core: self.core,
            txn: f.txn,
            block,
            value: f.op.value,
        });
        fx.msg(
            Message::new(f.txn, MessageKind::Unblock, self.node, self.home(block), block)
                .with_tag(grant_tag),
        );
        if let Some(held) = f.held_fwd {
            fx.merge(self.serve_fwd_from_stable(&held, now)?);
        }
        Ok(fx)
    }

    fn on_inv(&mut self, msg: &Message) -> Result<Effects, ProtocolBug> {
        let requestor = msg
            .requestor
            .ok_or_else(|| self.bug("Inv without requestor".into()))?;
        let ack = Message::new(msg.txn, MessageKind::InvAck, self.node, requestor, msg.block)
            .with_tag(msg.tag);
        let mut fx = Effects::none();
        match self.mshrs.remove(&msg.block) {
            // Event: invalidation overtakes a read fill (IS_D).
            Some(MshrEntry::Fetch(mut f)) if f.state == FetchState::IsD => {
                if self.mutation == Mutation::DropInvDuringFill {
                    self.mshrs.insert(msg.block, MshrEntry::Fetch(f));
                    return Ok(Effects::none());
                }
                f.inv_while_filling = true;
                self.mshrs.insert(msg.block, MshrEntry::Fetch(f));
                fx.event(ProtocolEvent::InvWhileFilling {
                    core: self.core,
                    block: msg.block,
                });
                fx.msg(ack);
                Ok(fx)
            }
            // Event: invalidation of an upgrading sharer (SM_AD): the array
            // copy dies, the write fill is still owed and now needs a
            // reserved way again.
            Some(MshrEntry::Fetch(mut f)) if f.state == FetchState::SmAd => {
                let (set, way) = self
                    .line_pos(msg.block)
                    .ok_or_else(|| self.bug(format!("SM_AD without array line {:#x}", msg.block)))?;
                self.lines[set][way] = None;
                self.reserved[set] += 1;
                f.state = FetchState::ImAd;
                f.reserved = true;
                self.mshrs.insert(msg.block, MshrEntry::Fetch(f));
                fx.msg(ack);
                Ok(fx)
            }
            // Event: invalidation of an evicting sharer (SI_A).
            Some(MshrEntry::Evict(mut e)) if e.state == EvictState::SiA => {
                e.state = EvictState::IiA;
                self.mshrs.insert(msg.block, MshrEntry::Evict(e));
                fx.msg(ack);
                Ok(fx)
            }
            Some(other) => {
                let err = self.bug(format!("Inv for {:#x} in state {other:?}", msg.block));
                self.mshrs.insert(msg.block, other);
                Err(err)
            }
            None => match self.line_pos(msg.block) {
                // Event: invalidation of a stable sharer.
                Some((set, way)) => {
                    let state = self.lines[set][way].as_ref().unwrap().1.state;
                    if state != StableState::S {
                        return Err(self.bug(format!("Inv for line in {state:?}")));
                    }
                    self.lines[set][way] = None;
                    fx.msg(ack);
                    Ok(fx)
                }
                None => Err(self.bug(format!("Inv for absent block {:#x}", msg.block))),
            },
        }
    }

    /// Serve a forward from a stable owned line (M or E).
    fn serve_fwd_from_stable(&mut self, fwd: &Message, now: Cycle) -> Result<Effects, ProtocolBug> {
        let requestor = fwd
            .requestor
            .ok_or_else(|| self.bug("forward without requestor".into()))?;
        let (set, way) = self
            .line_pos(fwd.block)
            .ok_or_else(|| self.bug(format!("forward to absent line {:#x}", fwd.block)))?;
        let (state, value) = {
            let line = &self.lines[set][way].as_ref().unwrap().1;
            (line.state, line.value)
        };
        if state == StableState::S {
            return Err(self.bug("forward to non-owned line".into()));
        }
        let node = self.node;
        let home = self.home(fwd.block);
        let mut fx = Effects::none();
        match fwd.kind {
            // Event: owner serves a read; keeps the line in S and sends the
            // home bank an up-to-date copy.
            MessageKind::FwdGetS => {
                let line = &mut self.lines[set][way].as_mut().unwrap().1;
                line.state = StableState::S;
                line.touch = now;
                fx.msg(
                    Message::new(fwd.txn, MessageKind::Data, node, requestor, fwd.block)
                        .with_value(value)
                        .with_tag(fwd.tag),
                );
                fx.msg(
                    Message::new(fwd.txn, MessageKind::Data, node, home, fwd.block)
                        .with_value(value)
                        .with_tag(fwd.tag),
                );
            }
            // Event: owner surrenders the line to a writer.
            MessageKind::FwdGetM => {
                self.lines[set][way] = None;
                fx.msg(
                    Message::new(fwd.txn, MessageKind::Data, node, requestor, fwd.block)
                        .with_value(value)
                        .with_tag(fwd.tag),
                );
            }
            other => return Err(self.bug(format!("held message was {other}"))),
        }
        fx.event(ProtocolEvent::OwnerSupplied {
            txn: fwd.txn,
            block: fwd.block,
            value,
        });
        Ok(fx)
    }

    fn on_fwd(&mut self, msg: &Message, now: Cycle, _mode: Mode) -> Result<Effects, ProtocolBug> {
        let requestor = msg
            .requestor
            .ok_or_else(|| self.bug("forward without requestor".into()))?;
        match self.mshrs.remove(&msg.block) {
            // Event: forward reaches us before our own fill -> hold it and
            // serve it right after the fill lands.
            Some(MshrEntry::Fetch(mut f)) => {
                if f.held_fwd.is_some() {
                    let err = self.bug(format!("second forward held for {:#x}", msg.block));
                    self.mshrs.insert(msg.block, MshrEntry::Fetch(f));
                    return Err(err);
                }
                f.held_fwd = Some(msg.clone());
                self.mshrs.insert(msg.block, MshrEntry::Fetch(f));
                let mut fx = Effects::none();
                fx.event(ProtocolEvent::FwdHeldAtL1 {
                    core: self.core,
                    block: msg.block,
                });
                Ok(fx)
            }
            // Event: forward catches the owner mid-eviction; serve from the
            // eviction buffer.
            Some(MshrEntry::Evict(mut e))
                if e.state == EvictState::MiA || e.state == EvictState::EiA =>
            {
                let value = e.value;
                let mut fx = Effects::none();
                fx.msg(
                    Message::new(msg.txn, MessageKind::Data, self.node, requestor, msg.block)
                        .with_value(value)
                        .with_tag(msg.tag),
                );
                if msg.kind == MessageKind::FwdGetS {
                    e.state = EvictState::SiA;
                    fx.msg(
                        Message::new(msg.txn, MessageKind::Data, self.node, self.home(msg.block), msg.block)
                            .with_value(value)
                            .with_tag(msg.tag),
                    );
                } else {
                    e.state = EvictState::IiA;
                }
                self.mshrs.insert(msg.block, MshrEntry::Evict(e));
                fx.event(ProtocolEvent::OwnerSupplied {
                    txn: msg.txn,
                    block: msg.block,
                    value,
                });
                Ok(fx)
            }
            Some(other) => {
                let err = self.bug(format!(
                    "{} for {:#x} in state {other:?}",
                    msg.kind, msg.block
                ));
                self.mshrs.insert(msg.block, other);
                Err(err)
            }
            None => self.serve_fwd_from_stable(msg, now),
        }
    }

    fn on_inv_ack(&mut self, msg: &Message, now: Cycle, mode: Mode) -> Result<Effects, ProtocolBug> {
        match self.mshrs.remove(&msg.block) {
            Some(MshrEntry::Fetch(mut f)) if f.state != FetchState::IsD => {
                f.acks_got += 1;
                match f.acks_needed {
                    // Event: the last awaited ack completes the store.
                    Some(needed) if f.acks_got >= needed => {
                        self.complete_store(f, msg.block, msg.tag, now, mode)
                    }
                    // Event: ack counted; fill and/or more acks still owed.
                    _ => {
                        self.mshrs.insert(msg.block, MshrEntry::Fetch(f));
                        Ok(Effects::none())
                    }
                }
            }
            other => {
                let err = self.bug(format!("InvAck for {:#x} in state {other:?}", msg.block));
                if let Some(e) = other {
                    self.mshrs.insert(msg.block, e);
                }
                Err(err)
            }
        }
    }

    fn on_wback(&mut self, msg: &Message) -> Result<Effects, ProtocolBug> {
        match self.mshrs.remove(&msg.block) {
            // Event: eviction acknowledged; MSHR retires.
            Some(MshrEntry::Evict(e)) => {
                let mut fx = Effects::none();
                fx.event(ProtocolEvent::EvictDone {
                    core: self.core,
                    txn: e.txn,
                    block: msg.block,
                });
                Ok(fx)
            }
            other => {
                let err = self.bug(format!("WBAck for {:#x} in state {other:?}", msg.block));
                if let Some(e) = other {
                    self.mshrs.insert(msg.block, e);
                }
                Err(err)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Mode;

    fn l1() -> L1Cache {
        L1Cache::new(0, 2, 2, 4, 1)
    }

    fn op(kind: OpKind, block: Block, value: u64) -> CoreOp {
        CoreOp { kind, block, value }
    }

    fn no_evict(_: Block) -> TxnId {
        panic!("unexpected eviction")
    }

    fn grant(kind: MessageKind, block: Block, value: u64, acks: u8) -> Message {
        Message::new(7, kind, NodeId::Bank(0), NodeId::L1(0), block)
            .with_value(value)
            .with_acks(acks)
    }

    #[test]
    fn load_miss_issues_gets_and_fill_installs_shared() {
        let mut c = l1();
        let (st, fx) =
            c.handle_core_op(op(OpKind::Load, 4, 0), 1, &mut no_evict, 0, Mode::Baseline);
        assert_eq!(st, CoreOpStatus::Miss);
        assert_eq!(fx.msgs.len(), 1);
        assert_eq!(fx.msgs[0].kind, MessageKind::GetS);
        assert_eq!(fx.msgs[0].dst, NodeId::Bank(0));
        assert_eq!(c.probe(4), Probe::Fetch(FetchState::IsD));

        let fx = c
            .handle_message(&grant(MessageKind::Data, 4, 99, 0), 1, Mode::Baseline)
            .unwrap();
        assert_eq!(c.probe(4), Probe::Stable(StableState::S, 99));
        assert_eq!(fx.msgs.len(), 1);
        assert_eq!(fx.msgs[0].kind, MessageKind::Unblock);
        assert!(matches!(
            fx.events[..],
            [ProtocolEvent::LoadRetired { value: 99, .. }]
        ));
    }

    #[test]
    fn repeated_op_on_inflight_block_retries() {
        let mut c = l1();
        let (st, _) = c.handle_core_op(op(OpKind::Load, 4, 0), 1, &mut no_evict, 0, Mode::Baseline);
        assert_eq!(st, CoreOpStatus::Miss);
        let (st, fx) =
            c.handle_core_op(op(OpKind::Load, 4, 0), 2, &mut no_evict, 1, Mode::Baseline);
        assert_eq!(st, CoreOpStatus::Retry);
        assert!(fx.msgs.is_empty());
    }

    #[test]
    fn store_hit_in_e_upgrades_silently() {
        let mut c = l1();
        c.handle_core_op(op(OpKind::Load, 4, 0), 1, &mut no_evict, 0, Mode::Baseline);
        c.handle_message(&grant(MessageKind::DataExcl, 4, 5, 0), 1, Mode::Baseline)
            .unwrap();
        assert_eq!(c.probe(4), Probe::Stable(StableState::E, 5));
        let (st, fx) =
            c.handle_core_op(op(OpKind::Store, 4, 42), 2, &mut no_evict, 2, Mode::Baseline);
        assert_eq!(st, CoreOpStatus::Hit { value: 42 });
        assert!(fx.msgs.is_empty(), "silent upgrade sends nothing");
        assert_eq!(c.probe(4), Probe::Stable(StableState::M, 42));
    }

    #[test]
    fn inv_during_read_fill_acks_and_skips_install() {
        let mut c = l1();
        c.handle_core_op(op(OpKind::Load, 4, 0), 1, &mut no_evict, 0, Mode::Baseline);
        let inv = Message::new(9, MessageKind::Inv, NodeId::Bank(0), NodeId::L1(0), 4)
            .with_requestor(NodeId::L1(3));
        let fx = c.handle_message(&inv, 1, Mode::Baseline).unwrap();
        assert_eq!(fx.msgs.len(), 1);
        assert_eq!(fx.msgs[0].kind, MessageKind::InvAck);
        assert_eq!(fx.msgs[0].dst, NodeId::L1(3));
        assert!(matches!(fx.events[..], [ProtocolEvent::InvWhileFilling { .. }]));

        // The late fill is consumed by the load but not installed.
        let fx = c
            .handle_message(&grant(MessageKind::Data, 4, 77, 0), 2, Mode::Baseline)
            .unwrap();
        assert!(matches!(
            fx.events[..],
            [ProtocolEvent::LoadRetired { value: 77, .. }]
        ));
        assert_eq!(c.probe(4), Probe::Absent);
    }

    #[test]
    fn store_upgrade_collects_acks_in_any_order() {
        let mut c = l1();
        // Shared line via read fill.
        c.handle_core_op(op(OpKind::Load, 4, 0), 1, &mut no_evict, 0, Mode::Baseline);
        c.handle_message(&grant(MessageKind::Data, 4, 5, 0), 1, Mode::Baseline)
            .unwrap();
        // Upgrade; one ack arrives before the fill, one after.
        let (st, _) =
            c.handle_core_op(op(OpKind::Store, 4, 42), 2, &mut no_evict, 2, Mode::Baseline);
        assert_eq!(st, CoreOpStatus::Miss);
        assert_eq!(c.probe(4), Probe::Fetch(FetchState::SmAd));
        let ack = Message::new(2, MessageKind::InvAck, NodeId::L1(1), NodeId::L1(0), 4);
        c.handle_message(&ack, 3, Mode::Baseline).unwrap();
        assert_eq!(c.probe(4), Probe::Fetch(FetchState::SmAd));
        let fx = c
            .handle_message(&grant(MessageKind::Data, 4, 5, 2), 4, Mode::Baseline)
            .unwrap();
        assert!(fx.msgs.is_empty(), "still one ack short");
        assert_eq!(c.probe(4), Probe::Fetch(FetchState::SmA));
        let ack2 = Message::new(2, MessageKind::InvAck, NodeId::L1(2), NodeId::L1(0), 4);
        let fx = c.handle_message(&ack2, 5, Mode::Baseline).unwrap();
        assert_eq!(c.probe(4), Probe::Stable(StableState::M, 42));
        assert!(matches!(
            fx.events[..],
            [ProtocolEvent::StoreRetired { value: 42, .. }]
        ));
        assert_eq!(fx.msgs[0].kind, MessageKind::Unblock);
    }

    #[test]
    fn inv_on_upgrading_sharer_falls_back_to_full_fetch() {
        let mut c = l1();
        c.handle_core_op(op(OpKind::Load, 4, 0), 1, &mut no_evict, 0, Mode::Baseline);
        c.handle_message(&grant(MessageKind::Data, 4, 5, 0), 1, Mode::Baseline)
            .unwrap();
        c.handle_core_op(op(OpKind::Store, 4, 42), 2, &mut no_evict, 2, Mode::Baseline);
        let inv = Message::new(9, MessageKind::Inv, NodeId::Bank(0), NodeId::L1(0), 4)
            .with_requestor(NodeId::L1(3));
        let fx = c.handle_message(&inv, 3, Mode::Baseline).unwrap();
        assert_eq!(fx.msgs[0].kind, MessageKind::InvAck);
        assert_eq!(c.probe(4), Probe::Fetch(FetchState::ImAd));
        // Fill still completes the store afterwards.
        c.handle_message(&grant(MessageKind::Data, 4, 5, 0), 4, Mode::Baseline)
            .unwrap();
        assert_eq!(c.probe(4), Probe::Stable(StableState::M, 42));
    }

    #[test]
    fn capacity_eviction_sends_putm_and_wback_clears() {
        let mut c = L1Cache::new(0, 1, 1, 4, 1);
        c.handle_core_op(op(OpKind::Load, 1, 0), 1, &mut no_evict, 0, Mode::Baseline);
        c.handle_message(&grant(MessageKind::DataExcl, 1, 11, 0), 1, Mode::Baseline)
            .unwrap();
        c.handle_core_op(op(OpKind::Store, 1, 12), 2, &mut no_evict, 2, Mode::Baseline);
        // Miss on a different block forces the M line out.
        let mut etxn = |b: Block| {
            assert_eq!(b, 1);
            900
        };
        let (st, fx) = c.handle_core_op(op(OpKind::Load, 2, 0), 3, &mut etxn, 3, Mode::Baseline);
        assert_eq!(st, CoreOpStatus::Miss);
        assert_eq!(fx.msgs.len(), 2);
        assert_eq!(fx.msgs[0].kind, MessageKind::PutM);
        assert_eq!(fx.msgs[0].value, 12);
        assert_eq!(fx.msgs[1].kind, MessageKind::GetS);
        assert_eq!(c.probe(1), Probe::Evict(EvictState::MiA));
        assert_eq!(c.probe(2), Probe::Fetch(FetchState::IsD));

        let wback = Message::new(900, MessageKind::WBAck, NodeId::Bank(0), NodeId::L1(0), 1);
        let fx = c.handle_message(&wback, 4, Mode::Baseline).unwrap();
        assert!(matches!(fx.events[..], [ProtocolEvent::EvictDone { txn: 900, .. }]));
        assert_eq!(c.probe(1), Probe::Absent);
    }

    #[test]
    fn fwd_during_eviction_is_served_from_the_eviction_buffer() {
        let mut c = L1Cache::new(0, 1, 1, 4, 1);
        c.handle_core_op(op(OpKind::Load, 1, 0), 1, &mut no_evict, 0, Mode::Baseline);
        c.handle_message(&grant(MessageKind::DataExcl, 1, 11, 0), 1, Mode::Baseline)
            .unwrap();
        c.handle_core_op(op(OpKind::Store, 1, 12), 2, &mut no_evict, 2, Mode::Baseline);
        let mut etxn = |_: Block| 900;
        c.handle_core_op(op(OpKind::Load, 2, 0), 3, &mut etxn, 3, Mode::Baseline);
        assert_eq!(c.probe(1), Probe::Evict(EvictState::MiA));

        let fwd = Message::new(31, MessageKind::FwdGetS, NodeId::Bank(0), NodeId::L1(0), 1)
            .with_requestor(NodeId::L1(2));
        let fx = c.handle_message(&fwd, 4, Mode::Baseline).unwrap();
        assert_eq!(fx.msgs.len(), 2, "data to requestor and copy to home");
        assert!(fx
            .msgs
            .iter()
            .all(|m| m.kind == MessageKind::Data && m.value == 12));
        assert_eq!(c.probe(1), Probe::Evict(EvictState::SiA));

        // A later invalidation (new writer) demotes the eviction further.
        let inv = Message::new(32, MessageKind::Inv, NodeId::Bank(0), NodeId::L1(0), 1)
            .with_requestor(NodeId::L1(3));
        let fx = c.handle_message(&inv, 5, Mode::Baseline).unwrap();
        assert_eq!(fx.msgs[0].kind, MessageKind::InvAck);
        assert_eq!(c.probe(1), Probe::Evict(EvictState::IiA));
    }

    #[test]
    fn fwd_before_own_fill_is_held_then_served() {
        let mut c = l1();
        c.handle_core_op(op(OpKind::Store, 4, 42), 1, &mut no_evict, 0, Mode::Baseline);
        let fwd = Message::new(8, MessageKind::FwdGetM, NodeId::Bank(0), NodeId::L1(0), 4)
            .with_requestor(NodeId::L1(2));
        let fx = c.handle_message(&fwd, 1, Mode::Baseline).unwrap();
        assert!(fx.msgs.is_empty());
        assert!(matches!(fx.events[..], [ProtocolEvent::FwdHeldAtL1 { .. }]));

        let fx = c
            .handle_message(&grant(MessageKind::Data, 4, 5, 0), 2, Mode::Baseline)
            .unwrap();
        // Store retires, Unblock goes out, and the held FwdGetM is served
        // with the freshly written value; the line is gone.
        assert_eq!(fx.msgs.len(), 2);
        assert_eq!(fx.msgs[0].kind, MessageKind::Unblock);
        assert_eq!(fx.msgs[1].kind, MessageKind::Data);
        assert_eq!(fx.msgs[1].dst, NodeId::L1(2));
        assert_eq!(fx.msgs[1].value, 42);
        assert_eq!(c.probe(4), Probe::Absent);
    }

    #[test]
    fn unexpected_messages_are_protocol_bugs() {
        let mut c = l1();
        let stray = grant(MessageKind::Data, 4, 0, 0);
        assert!(c.handle_message(&stray, 0, Mode::Baseline).is_err());
        let stray = Message::new(1, MessageKind::WBAck, NodeId::Bank(0), NodeId::L1(0), 4);
        assert!(c.handle_message(&stray, 0, Mode::Baseline).is_err());
    }

    #[test]
    fn mshr_exhaustion_retries() {
        let mut c = L1Cache::new(0, 4, 2, 2, 1);
        assert_eq!(
            c.handle_core_op(op(OpKind::Load, 0, 0), 1, &mut no_evict, 0, Mode::Baseline)
                .0,
            CoreOpStatus::Miss
        );
        assert_eq!(
            c.handle_core_op(op(OpKind::Load, 1, 0), 2, &mut no_evict, 0, Mode::Baseline)
                .0,
            CoreOpStatus::Miss
        );
        assert_eq!(
            c.handle_core_op(op(OpKind::Load, 2, 0), 3, &mut no_evict, 0, Mode::Baseline)
                .0,
            CoreOpStatus::Retry
        );
    }

    #[test]
    fn dropped_inv_mutation_swallows_the_invalidation() {
        let mut c = l1();
        c.set_mutation(Mutation::DropInvDuringFill);
        c.handle_core_op(op(OpKind::Load, 4, 0), 1, &mut no_evict, 0, Mode::Baseline);
        let inv = Message::new(9, MessageKind::Inv, NodeId::Bank(0), NodeId::L1(0), 4)
            .with_requestor(NodeId::L1(3));
        let fx = c.handle_message(&inv, 1, Mode::Baseline).unwrap();
        assert!(fx.msgs.is_empty(), "mutated table never acknowledges");
        assert_eq!(c.probe(4), Probe::Fetch(FetchState::IsD));
    }
}
