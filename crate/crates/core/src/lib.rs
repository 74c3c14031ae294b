//! Performance models for blockchain-backed federated learning.
//!
//! The crate covers the transaction-pool queue ([`queue`]) and its
//! discrete-event oracle ([`des`]), radio links and fork probability
//! ([`network`]), the per-iteration latency decomposition ([`latency`]),
//! synchronous and asynchronous federated training on a virtual clock
//! ([`fl`]), and scenario files plus experiment sweeps ([`scenario`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod des;
pub mod fl;
pub mod latency;
pub mod network;
pub mod queue;
pub mod scenario;

pub use chain::BlockchainParams;
pub use des::{DesConfig, DesStats};
pub use fl::{FLConfig, FLRoundRecord, GlobalModel};
pub use latency::{ClientProfile, LatencyBreakdown};
pub use network::{LinkBudget, P2PParams, RadioParams};
pub use queue::{QueueParams, QueueSolution, TransitionMatrix};
pub use scenario::Scenario;
