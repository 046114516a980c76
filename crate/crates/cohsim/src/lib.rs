//! Cycle-driven simulator of a tiled chip multiprocessor.
//!
//! The modeled system is a 2-D mesh of tiles, each carrying an in-order core
//! with a private L1 and a bank of a shared, inclusive L2. Coherence is kept
//! by a blocking MESI directory embedded in the L2 banks; tiles talk over a
//! wormhole-switched network-on-chip with virtual channels and credit-based
//! flow control. Memory controllers sit at the mesh corners.
//!
//! Besides the plain round-robin baseline, the simulator implements a
//! *phase-priority* arbitration mode: every coherence message carries a small
//! tag describing where in its transaction's lifetime it is (request issue,
//! post-serialization traffic, or memory access) plus a per-address sequence
//! number assigned when the directory orders the transaction. Routers and
//! network interfaces use the tag to let late-phase traffic and
//! earlier-serialized transactions win arbitration, which shortens the window
//! in which an invalidation can overtake the data fill it chases.
//!
//! Crate layout:
//!
//! * [`config`] — system parameters and the key-value config file format.
//! * [`phase`] — priority tags, the tag comparator, and the per-bank
//!   inner-phase buffer.
//! * [`protocol`] — the L1, directory, and memory-controller state machines
//!   as pure transition functions, shared by the simulator and the checker.
//! * [`noc`] — flits, routers, arbiters, and the mesh fabric.
//! * [`sim`] — the cycle engine tying cores, controllers, and the mesh
//!   together.
//! * [`workload`] — trace records and synthetic workload generators.
//! * [`metrics`] — run statistics, the energy proxy, and report comparison.
//! * [`checker`] — exhaustive explicit-state exploration of the protocol for
//!   small configurations.

pub mod checker;
pub mod config;
pub mod metrics;
pub mod noc;
pub mod phase;
pub mod protocol;
pub mod sim;
pub mod types;
pub mod workload;
