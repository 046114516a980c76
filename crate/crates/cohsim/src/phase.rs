//! Phase tags and their priority order.
//!
//! A tag is one byte: the top two bits hold the *outer phase* (how far along
//! its transaction a message is), the low six bits hold the *inner phase*, a
//! per-address sequence number modulo 64 handed out by the home directory
//! when it orders a transaction. Arbiters prefer later outer phases
//! (finishing work beats starting new work) and, among post-serialization
//! messages for the same address, earlier inner numbers (older transactions
//! beat younger ones).

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Number of distinct inner phase values; inner numbers wrap modulo this.
pub const INNER_MODULUS: u8 = 64;

/// Half of [`INNER_MODULUS`]: the comparison window for inner phases. Two
/// inner numbers exactly this far apart are incomparable (treated as a tie).
pub const INNER_HALF_WINDOW: u8 = INNER_MODULUS / 2;

/// Coarse position of a message within its transaction.
///
/// Encoded in the top two bits of the tag byte. `Untagged` (0) is reserved:
/// it is what baseline-mode traffic carries and it sorts below everything.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[repr(u8)]
pub enum OuterPhase {
    /// Reserved / no tag. Lowest priority.
    Untagged = 0,
    /// Pre-serialization: a request traveling from an L1 to its home
    /// directory, not yet ordered.
    Request = 1,
    /// Post-serialization: everything the directory ordering spawns —
    /// forwards, invalidations, data, acknowledgments, unblocks.
    Ordered = 2,
    /// Traffic between an L2 bank and a memory controller.
    Memory = 3,
}

impl OuterPhase {
    pub fn from_bits(bits: u8) -> OuterPhase {
        match bits & 0b11 {
            0 => OuterPhase::Untagged,
            1 => OuterPhase::Request,
            2 => OuterPhase::Ordered,
            _ => OuterPhase::Memory,
        }
    }
}

/// One message's priority tag.
///
/// The derived `Ord` is lexicographic for container use only; priority
/// comparison is [`compare_priority`], which is *not* a total order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct PhaseTag {
    pub outer: OuterPhase,
    /// Per-address serialization number modulo 64. Only meaningful when
    /// `outer` is [`OuterPhase::Ordered`]; carried verbatim otherwise.
    pub inner: u8,
}

impl PhaseTag {
    pub fn new(outer: OuterPhase, inner: u8) -> PhaseTag {
        assert!(inner < INNER_MODULUS, "inner phase {inner} out of range");
        PhaseTag { outer, inner }
    }
}

/// Packs a tag into its single-byte wire form: outer phase in bits 7..6,
/// inner phase in bits 5..0.
pub fn encode_tag(tag: PhaseTag) -> u8 {
    ((tag.outer as u8) << 6) | (tag.inner & (INNER_MODULUS - 1))
}

/// Inverse of [`encode_tag`]. Total: every byte decodes.
pub fn decode_tag(byte: u8) -> PhaseTag {
    PhaseTag {
        outer: OuterPhase::from_bits(byte >> 6),
        inner: byte & (INNER_MODULUS - 1),
    }
}

/// Compares two tags by arbitration priority. `Greater` means `a` should win
/// the grant.
///
/// * Different outer phases: the later (larger) outer phase wins.
/// * Same outer phase, not `Ordered`: tie — such messages have no usable
///   ordering information, and the arbiter falls back to round-robin.
/// * Both `Ordered`: inner numbers are compared in a modular half-window.
///   Let `d = (b.inner - a.inner) mod 64`. For `d` in `1..32`, `a` was
///   serialized earlier and wins; for `d` in `33..64`, `b` wins; `d == 32`
///   is outside both windows and is a tie.
///
/// Inner numbers for *different* addresses are sequence numbers from
/// unrelated counters; arbiters only apply the inner comparison to candidates
/// for the same block (see [`crate::noc::arbiter`]). This function compares
/// whatever it is given.
pub fn compare_priority(a: PhaseTag, b: PhaseTag) -> Ordering {
    if a.outer != b.outer {
        return (a.outer as u8).cmp(&(b.outer as u8));
    }
    if a.outer != OuterPhase::Ordered {
        return Ordering::Equal;
    }
    let d = b.inner.wrapping_sub(a.inner) & (INNER_MODULUS - 1);
    if d == 0 || d == INNER_HALF_WINDOW {
        Ordering::Equal
    } else if d < INNER_HALF_WINDOW {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

/// Per-bank table handing out inner phase numbers at serialization time.
///
/// Bounded associative buffer: at most `capacity` addresses are tracked. A
/// hit returns the successor of the address's last number (mod 64); a miss
/// inserts the address and returns 0, evicting the least recently touched
/// entry if the buffer is full. An address that falls out and comes back
/// therefore restarts at 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InnerPhaseBuffer {
    capacity: usize,
    /// addr -> (last assigned inner, last touch stamp)
    entries: BTreeMap<u64, (u8, u64)>,
    /// Monotonic touch counter; deliberately not wall-clock cycles so that
    /// recency is defined even when several assignments share a cycle.
    stamp: u64,
}

impl InnerPhaseBuffer {
    pub fn new(capacity: usize) -> InnerPhaseBuffer {
        assert!(capacity > 0, "inner phase buffer needs at least one entry");
        InnerPhaseBuffer {
            capacity,
            entries: BTreeMap::new(),
            stamp: 0,
        }
    }

    /// Assigns the inner phase number for the next transaction serialized
    /// on `addr`: one past the resident entry (mod 64), or 0 for a fresh or
    /// re-entering address. Recency is tracked by assignment order.
    pub fn next_inner(&mut self, addr: u64) -> u8 {
        self.stamp += 1;
        let stamp = self.stamp;
        if let Some((last, touch)) = self.entries.get_mut(&addr) {
            *last = (*last + 1) % INNER_MODULUS;
            *touch = stamp;
            return *last;
        }
        if self.entries.len() == self.capacity {
            // Evict the least recently touched address.
            let (&victim, _) = self
                .entries
                .iter()
                .min_by_key(|(_, (_, touch))| *touch)
                .expect("buffer is full, so nonempty");
            self.entries.remove(&victim);
        }
        self.entries.insert(addr, (0, stamp));
        0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Last inner number assigned for `addr`, if the address is resident.
    pub fn last_inner(&self, addr: u64) -> Option<u8> {
        self.entries.get(&addr).map(|(last, _)| *last)
    }

    /// All (address, last issued number) pairs, without recency data.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u8)> + '_ {
        self.entries.iter().map(|(addr, (last, _))| (*addr, *last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Reference comparator, written directly from the three priority rules
    /// and kept independent of the arithmetic in `compare_priority`: the
    /// forward window of `a` is materialized as an explicit set.
    fn reference_compare(a: PhaseTag, b: PhaseTag) -> Ordering {
        if a.outer != b.outer {
            return if (a.outer as u8) > (b.outer as u8) {
                Ordering::Greater
            } else {
                Ordering::Less
            };
        }
        if a.outer != OuterPhase::Ordered {
            return Ordering::Equal;
        }
        if a.inner == b.inner {
            return Ordering::Equal;
        }
        // Numbers strictly after `a` in its half window: a serialized earlier
        // than those, so it outranks them.
        let mut after_a = Vec::new();
        for k in 1..INNER_HALF_WINDOW {
            after_a.push((a.inner + k) % INNER_MODULUS);
        }
        if after_a.contains(&b.inner) {
            Ordering::Greater
        } else if (a.inner + INNER_HALF_WINDOW) % INNER_MODULUS == b.inner {
            Ordering::Equal
        } else {
            Ordering::Less
        }
    }

    #[test]
    fn encode_packs_outer_high_inner_low() {
        assert_eq!(encode_tag(PhaseTag::new(OuterPhase::Ordered, 5)), 0b1000_0101);
        assert_eq!(encode_tag(PhaseTag::new(OuterPhase::Request, 0)), 0b0100_0000);
        assert_eq!(encode_tag(PhaseTag::new(OuterPhase::Memory, 63)), 0b1111_1111);
        assert_eq!(encode_tag(PhaseTag::new(OuterPhase::Untagged, 0)), 0);
    }

    #[test]
    fn decode_is_total_and_inverts_encode() {
        for byte in 0..=255u8 {
            let tag = decode_tag(byte);
            assert_eq!(encode_tag(tag), byte);
        }
    }

    #[test]
    fn later_outer_phase_wins() {
        let req = PhaseTag::new(OuterPhase::Request, 0);
        let ord = PhaseTag::new(OuterPhase::Ordered, 63);
        let mem = PhaseTag::new(OuterPhase::Memory, 0);
        let none = PhaseTag::new(OuterPhase::Untagged, 0);
        assert_eq!(compare_priority(ord, req), Ordering::Greater);
        assert_eq!(compare_priority(mem, ord), Ordering::Greater);
        assert_eq!(compare_priority(req, none), Ordering::Greater);
        assert_eq!(compare_priority(req, mem), Ordering::Less);
    }

    #[test]
    fn equal_non_ordered_outer_ties() {
        for outer in [OuterPhase::Untagged, OuterPhase::Request, OuterPhase::Memory] {
            let a = PhaseTag::new(outer, 3);
            let b = PhaseTag::new(outer, 40);
            assert_eq!(compare_priority(a, b), Ordering::Equal);
        }
    }

    #[test]
    fn ordered_inner_comparison_wraps() {
        let t = |i| PhaseTag::new(OuterPhase::Ordered, i);
        // 60 was serialized before 3 once the counter wrapped.
        assert_eq!(compare_priority(t(60), t(3)), Ordering::Greater);
        assert_eq!(compare_priority(t(3), t(60)), Ordering::Less);
        // Plain in-window comparison.
        assert_eq!(compare_priority(t(5), t(9)), Ordering::Greater);
        // Exactly half the modulus apart: incomparable.
        assert_eq!(compare_priority(t(0), t(32)), Ordering::Equal);
        assert_eq!(compare_priority(t(32), t(0)), Ordering::Equal);
        assert_eq!(compare_priority(t(7), t(7)), Ordering::Equal);
    }

    /// Exhaustive equivalence with the reference comparator over every pair
    /// of tag bytes.
    #[test]
    fn matches_reference_on_all_byte_pairs() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                let (ta, tb) = (decode_tag(a), decode_tag(b));
                assert_eq!(
                    compare_priority(ta, tb),
                    reference_compare(ta, tb),
                    "tags {a:#010b} vs {b:#010b}"
                );
            }
        }
    }

    #[test]
    fn antisymmetric_on_all_byte_pairs() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                let (ta, tb) = (decode_tag(a), decode_tag(b));
                assert_eq!(compare_priority(ta, tb), compare_priority(tb, ta).reverse());
            }
        }
    }

    proptest! {
        /// Within any set of ordered tags whose inner numbers span less than
        /// half the modulus, the comparator is a strict weak ordering:
        /// transitive in both `Greater` and `Equal`.
        #[test]
        fn strict_weak_order_within_half_window(base in 0u8..64, offs in proptest::collection::vec(0u8..31, 3)) {
            let tags: Vec<PhaseTag> = offs
                .iter()
                .map(|o| PhaseTag::new(OuterPhase::Ordered, (base + o) % INNER_MODULUS))
                .collect();
            for &x in &tags {
                for &y in &tags {
                    for &z in &tags {
                        use Ordering::*;
                        if compare_priority(x, y) == Greater && compare_priority(y, z) == Greater {
                            prop_assert_eq!(compare_priority(x, z), Greater);
                        }
                        if compare_priority(x, y) == Equal && compare_priority(y, z) == Equal {
                            prop_assert_eq!(compare_priority(x, z), Equal);
                        }
                    }
                }
            }
        }

        /// The buffer never exceeds its capacity and never hands out an inner
        /// number >= the modulus.
        #[test]
        fn buffer_capacity_and_range(ops in proptest::collection::vec(0u64..40, 1..200)) {
            let mut buf = InnerPhaseBuffer::new(32);
            for (_i, addr) in ops.into_iter().enumerate() {
                let inner = buf.next_inner(addr);
                prop_assert!(inner < INNER_MODULUS);
                prop_assert!(buf.len() <= 32);
            }
        }
    }

    #[test]
    fn buffer_consecutive_hits_count_up_and_wrap() {
        let mut buf = InnerPhaseBuffer::new(32);
        for expect in 0..INNER_MODULUS {
            assert_eq!(buf.next_inner(0xA), expect);
        }
        // 64th assignment on the same address wraps back to 0.
        assert_eq!(buf.next_inner(0xA), 0);
    }

    #[test]
    fn buffer_evicts_least_recently_touched_and_restarts_at_zero() {
        let mut buf = InnerPhaseBuffer::new(4);
        for addr in 0..4u64 {
            assert_eq!(buf.next_inner(addr), 0);
        }
        // Touch 0 so address 1 becomes the eviction victim.
        assert_eq!(buf.next_inner(0), 1);
        assert_eq!(buf.next_inner(99), 0); // evicts addr 1
        assert_eq!(buf.last_inner(1), None);
        assert_eq!(buf.last_inner(0), Some(1));
        // Address 1 re-enters: its history is gone, it restarts at 0.
        assert_eq!(buf.next_inner(1), 0);
    }

    #[test]
    fn buffer_distinct_addresses_have_independent_counters() {
        let mut buf = InnerPhaseBuffer::new(32);
        assert_eq!(buf.next_inner(1), 0);
        assert_eq!(buf.next_inner(1), 1);
        assert_eq!(buf.next_inner(2), 0);
        assert_eq!(buf.next_inner(1), 2);
        assert_eq!(buf.next_inner(2), 1);
    }
}
