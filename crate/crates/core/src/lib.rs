//! Deterministic discrete-event simulator for duty-cycled wireless sensor
//! network MAC protocols.
//!
//! Layers, bottom up: [`kernel`] (virtual time, events, seeded streams),
//! [`radio`] (unit-disk channel, collisions, carrier sense, clock drift),
//! [`energy`] (per-state ledger), [`mac`] (frames, the protocol interface and
//! the seven protocols), [`workload`] (topologies, gathering tree, traffic),
//! [`sim`] (one assembled run) and [`harness`] (configs, sweeps, CSV).

pub mod energy;
pub mod harness;
pub mod kernel;
pub mod mac;
pub mod radio;
pub mod sim;
pub mod workload;

/// Index of a node in its topology.
pub type NodeId = usize;

pub use kernel::SimTime;
