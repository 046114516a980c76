//! Phase-priority arbitration shared by every contention point in the
//! network: the injection interface, VC allocation, and switch allocation.
//!
//! Selection rules, applied in order:
//! 1. Starvation override: if any candidate has lost at least a
//!    threshold's worth of decisions while bidding, the longest-waiting
//!    candidate wins (rotation breaks exact ties) regardless of phase
//!    priority. Cycles a candidate cannot bid (no credit, no free VC)
//!    are flow control, not arbitration, and do not age it.
//! 2. Phase priority: a candidate loses if some other candidate dominates
//!    it. Domination compares the class bits first (higher class wins);
//!    two post-serialization candidates *for the same block* are further
//!    ordered by sequence number within a modular half window. Candidates
//!    in the same class (or post-serialization candidates for different
//!    blocks) do not dominate each other.
//! 3. Rotation: among the remaining candidates, the first at or after the
//!    rotation pointer wins; callers that queue in arrival order use the
//!    queue rank instead.
//!
//! Untagged candidates carry the lowest class, so a fully untagged field
//! reduces to plain round-robin through the same code path.

use std::cmp::Ordering;

use crate::phase::{compare_priority, OuterPhase, PhaseTag};
use crate::types::Block;

/// One contender at an arbitration point.
#[derive(Clone, Copy, Debug)]
pub struct Candidate {
    pub tag: Option<PhaseTag>,
    pub block: Block,
    /// Decisions this candidate has lost while bidding at this point.
    pub age: u64,
    /// Arrival order for first-come tie-breaking (lower is older).
    pub rank: u64,
}

/// How ties among non-dominated candidates are broken.
#[derive(Clone, Copy, Debug)]
pub enum TieBreak {
    /// First eligible slot at or after the pointer (for fixed slot arrays).
    Rotate(usize),
    /// Lowest rank wins (for arrival-ordered queues).
    Fifo,
}

fn effective(tag: Option<PhaseTag>) -> PhaseTag {
    tag.unwrap_or(PhaseTag {
        outer: OuterPhase::Untagged,
        inner: 0,
    })
}

/// Does `a` strictly dominate `b`? Sequence numbers only order candidates
/// that target the same block; across blocks they carry no information.
pub fn dominates(a: &Candidate, b: &Candidate) -> bool {
    let (ta, tb) = (effective(a.tag), effective(b.tag));
    if ta.outer != tb.outer {
        return ta.outer > tb.outer;
    }
    if ta.outer == OuterPhase::Ordered && a.block == b.block {
        return compare_priority(ta, tb) == Ordering::Greater;
    }
    false
}

/// Pick the winning index among `slots`, where `None` entries are not
/// bidding. Returns `None` when nothing bids.
pub fn pick(slots: &[Option<Candidate>], threshold: u64, tie: TieBreak) -> Option<usize> {
    let bidding: Vec<usize> = (0..slots.len()).filter(|i| slots[*i].is_some()).collect();
    if bidding.is_empty() {
        return None;
    }

    // Starvation override.
    let starved_max = bidding
        .iter()
        .map(|&i| slots[i].unwrap().age)
        .filter(|&a| a >= threshold)
        .max();
    let eligible: Vec<usize> = if let Some(max_age) = starved_max {
        bidding
            .iter()
            .copied()
            .filter(|&i| slots[i].unwrap().age == max_age)
            .collect()
    } else {
        bidding
            .iter()
            .copied()
            .filter(|&i| {
                let c = slots[i].unwrap();
                !bidding
                    .iter()
                    .any(|&j| j != i && dominates(&slots[j].unwrap(), &c))
            })
            .collect()
    };

    // A candidate set always has a non-dominated member: domination is
    // transitive and irreflexive on (class, per-block sequence) pairs.
    debug_assert!(!eligible.is_empty());

    Some(match tie {
        TieBreak::Rotate(ptr) => {
            let n = slots.len();
            (0..n)
                .map(|k| (ptr + k) % n)
                .find(|i| eligible.contains(i))
                .expect("eligible set is nonempty")
        }
        TieBreak::Fifo => eligible
            .into_iter()
            .min_by_key(|&i| (slots[i].unwrap().rank, i))
            .expect("eligible set is nonempty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(tag: Option<PhaseTag>, block: Block, age: u64, rank: u64) -> Option<Candidate> {
        Some(Candidate {
            tag,
            block,
            age,
            rank,
        })
    }

    fn tag(outer: OuterPhase, inner: u8) -> Option<PhaseTag> {
        Some(PhaseTag { outer, inner })
    }

    const T: u64 = 64;

    #[test]
    fn empty_field_yields_nothing() {
        assert_eq!(pick(&[None, None], T, TieBreak::Rotate(0)), None);
    }

    #[test]
    fn higher_class_wins_regardless_of_rotation() {
        for ptr in 0..2 {
            let slots = [
                cand(tag(OuterPhase::Request, 0), 1, 0, 0),
                cand(tag(OuterPhase::Ordered, 0), 2, 0, 1),
            ];
            assert_eq!(pick(&slots, T, TieBreak::Rotate(ptr)), Some(1));
        }
    }

    #[test]
    fn memory_class_beats_ordered() {
        let slots = [
            cand(tag(OuterPhase::Ordered, 63), 1, 0, 0),
            cand(tag(OuterPhase::Memory, 0), 1, 0, 1),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Fifo), Some(1));
    }

    #[test]
    fn same_block_ordered_uses_sequence_window() {
        // 5 is 3 ahead of 2 within the half window: 2 wins (earlier).
        let slots = [
            cand(tag(OuterPhase::Ordered, 5), 9, 0, 0),
            cand(tag(OuterPhase::Ordered, 2), 9, 0, 1),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Rotate(0)), Some(1));
        // Wraparound: 62 is earlier than 1 (distance 3 mod 64).
        let slots = [
            cand(tag(OuterPhase::Ordered, 1), 9, 0, 0),
            cand(tag(OuterPhase::Ordered, 62), 9, 0, 1),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Rotate(0)), Some(1));
    }

    #[test]
    fn different_block_ordered_falls_back_to_rotation() {
        let slots = [
            cand(tag(OuterPhase::Ordered, 50), 1, 0, 0),
            cand(tag(OuterPhase::Ordered, 0), 2, 0, 1),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Rotate(0)), Some(0));
        assert_eq!(pick(&slots, T, TieBreak::Rotate(1)), Some(1));
    }

    #[test]
    fn starved_candidate_overrides_phase_priority() {
        let slots = [
            cand(tag(OuterPhase::Untagged, 0), 1, T, 0),
            cand(tag(OuterPhase::Memory, 0), 2, 0, 1),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Rotate(1)), Some(0));
        // Below threshold the memory-class candidate wins again.
        let slots = [
            cand(tag(OuterPhase::Untagged, 0), 1, T - 1, 0),
            cand(tag(OuterPhase::Memory, 0), 2, 0, 1),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Rotate(1)), Some(1));
    }

    #[test]
    fn oldest_starved_candidate_wins() {
        let slots = [
            cand(tag(OuterPhase::Ordered, 0), 1, T + 3, 0),
            cand(tag(OuterPhase::Ordered, 1), 1, T + 9, 1),
            cand(None, 2, T, 2),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Rotate(0)), Some(1));
    }

    #[test]
    fn untagged_field_is_plain_rotation() {
        // With no tags anywhere, the winner is always the first bidding
        // slot at or after the pointer — byte-for-byte round-robin.
        let slots: Vec<Option<Candidate>> = (0..5)
            .map(|i| {
                if i == 2 {
                    None
                } else {
                    cand(None, i as Block, 0, i as u64)
                }
            })
            .collect();
        for ptr in 0..5 {
            let expect = (0..5).map(|k| (ptr + k) % 5).find(|&i| i != 2).unwrap();
            assert_eq!(pick(&slots, T, TieBreak::Rotate(ptr)), Some(expect));
        }
    }

    #[test]
    fn fifo_breaks_ties_by_rank_then_index() {
        let slots = [
            cand(None, 1, 0, 7),
            cand(None, 2, 0, 3),
            cand(None, 3, 0, 3),
        ];
        assert_eq!(pick(&slots, T, TieBreak::Fifo), Some(1));
    }

    #[test]
    fn rotation_reaches_every_tied_candidate() {
        let slots: Vec<Option<Candidate>> =
            (0..4).map(|i| cand(None, i as Block, 0, 0)).collect();
        let winners: Vec<usize> = (0..4)
            .map(|ptr| pick(&slots, T, TieBreak::Rotate(ptr)).unwrap())
            .collect();
        assert_eq!(winners, vec![0, 1, 2, 3]);
    }

    proptest! {
        /// The winner is never dominated by another bidding candidate
        /// (unless the starvation override engaged).
        #[test]
        fn winner_is_non_dominated(
            specs in proptest::collection::vec(
                (0u8..=3, 0u8..64, 0u64..4, 0u64..80, any::<bool>()), 1..6),
            ptr in 0usize..6,
        ) {
            let slots: Vec<Option<Candidate>> = specs.iter().map(|&(o, i, b, age, tagged)| {
                let t = if tagged {
                    tag(OuterPhase::from_bits(o), i)
                } else {
                    None
                };
                cand(t, b, age, 0)
            }).collect();
            let w = pick(&slots, T, TieBreak::Rotate(ptr)).unwrap();
            let starved = slots.iter().flatten().any(|c| c.age >= T);
            if starved {
                let max_age = slots.iter().flatten().map(|c| c.age).max().unwrap();
                prop_assert_eq!(slots[w].unwrap().age, max_age);
            } else {
                for (j, s) in slots.iter().enumerate() {
                    if j != w {
                        if let Some(c) = s {
                            prop_assert!(
                                !dominates(c, &slots[w].unwrap()),
                                "slot {} dominates winner {}", j, w
                            );
                        }
                    }
                }
            }
        }

        /// Determinism: identical inputs give identical winners.
        #[test]
        fn picking_is_deterministic(
            specs in proptest::collection::vec(
                (0u8..=3, 0u8..64, 0u64..4, 0u64..80), 1..6),
            ptr in 0usize..6,
        ) {
            let slots: Vec<Option<Candidate>> = specs.iter().map(|&(o, i, b, age)| {
                cand(tag(OuterPhase::from_bits(o), i), b, age, 0)
            }).collect();
            prop_assert_eq!(
                pick(&slots, T, TieBreak::Rotate(ptr)),
                pick(&slots, T, TieBreak::Rotate(ptr))
            );
        }
    }
}
