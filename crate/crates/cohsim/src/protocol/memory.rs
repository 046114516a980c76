//! Memory controller: the backing store behind the L2 banks. Protocol-wise
//! it is trivial — reads return the stored value, writebacks store one —
//! but it gives blocks their initial contents and closes the message
//! vocabulary. Service timing (latency, single-ported issue) is layered on
//! by the engine.

use std::collections::BTreeMap;

use crate::protocol::{memory_tag, Effects, Message, MessageKind, ProtocolBug};
use crate::types::{Block, NodeId};

/// One memory controller and its slice of the address space. Untouched
/// blocks read as zero.
#[derive(Clone, Debug)]
pub struct MemoryCtrl {
    index: usize,
    node: NodeId,
    values: BTreeMap<Block, u64>,
}

impl MemoryCtrl {
    pub fn new(index: usize) -> MemoryCtrl {
        MemoryCtrl {
            index,
            node: NodeId::Mem(index as u16),
            values: BTreeMap::new(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn value(&self, block: Block) -> u64 {
        self.values.get(&block).copied().unwrap_or(0)
    }

    /// Consume one message (already past any service-timing model).
    pub fn handle_message(&mut self, msg: &Message) -> Result<Effects, ProtocolBug> {
        match msg.kind {
            // Event: read for a bank; reply with the stored value and the
            // requesting transaction's tag class.
            MessageKind::MemRead => {
                let mut fx = Effects::none();
                fx.msg(
                    Message::new(msg.txn, MessageKind::MemData, self.node, msg.src, msg.block)
                        .with_value(self.value(msg.block))
                        .with_tag(memory_tag(msg.tag.map(|t| t.inner))),
                );
                Ok(fx)
            }
            // Event: bank writes a block back; no reply.
            MessageKind::MemWriteBack => {
                self.values.insert(msg.block, msg.value);
                Ok(Effects::none())
            }
            other => Err(ProtocolBug::new(format!(
                "mem {}: unexpected {other} for block {:#x}",
                self.index, msg.block
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{OuterPhase, PhaseTag};

    #[test]
    fn read_returns_stored_or_zero() {
        let mut m = MemoryCtrl::new(0);
        let wb = Message::new(1, MessageKind::MemWriteBack, NodeId::Bank(2), NodeId::Mem(0), 7)
            .with_value(123);
        assert!(m.handle_message(&wb).unwrap().msgs.is_empty());

        let rd = Message::new(2, MessageKind::MemRead, NodeId::Bank(2), NodeId::Mem(0), 7);
        let fx = m.handle_message(&rd).unwrap();
        assert_eq!(fx.msgs.len(), 1);
        assert_eq!(fx.msgs[0].kind, MessageKind::MemData);
        assert_eq!(fx.msgs[0].dst, NodeId::Bank(2));
        assert_eq!(fx.msgs[0].value, 123);

        let rd = Message::new(3, MessageKind::MemRead, NodeId::Bank(2), NodeId::Mem(0), 8);
        assert_eq!(m.handle_message(&rd).unwrap().msgs[0].value, 0);
    }

    #[test]
    fn reply_keeps_the_transaction_number() {
        let mut m = MemoryCtrl::new(0);
        let rd = Message::new(2, MessageKind::MemRead, NodeId::Bank(2), NodeId::Mem(0), 7)
            .with_tag(Some(PhaseTag::new(OuterPhase::Memory, 17)));
        let fx = m.handle_message(&rd).unwrap();
        let tag = fx.msgs[0].tag.unwrap();
        assert_eq!(tag.outer, OuterPhase::Memory);
        assert_eq!(tag.inner, 17);
    }

    #[test]
    fn unexpected_kind_is_a_bug() {
        let mut m = MemoryCtrl::new(0);
        let stray = Message::new(2, MessageKind::GetS, NodeId::L1(0), NodeId::Mem(0), 7);
        assert!(m.handle_message(&stray).is_err());
    }
}
