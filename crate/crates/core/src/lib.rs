//! Exact steady-state analysis, optimization, and simulation of asynchronous
//! federated learning systems modeled as closed queueing networks.
//!
//! A central server keeps `m` training tasks in flight at all times. Each task
//! is dispatched to a client drawn from a routing distribution `p`, flows
//! through that client's downlink, compute, and uplink stages, and comes back
//! as one stochastic-gradient update; the moment a task returns, a fresh one
//! is dispatched. The resulting network has a product-form stationary law, so
//! throughput, per-client staleness, their exact gradients with respect to
//! `p`, and time/energy convergence budgets all reduce to ratios of
//! normalization constants computed by convolution.
//!
//! The crate is organized as a pipeline:
//!
//! * [`model`]: configuration types (clients, routing, concurrency, optional
//!   central-server stage) and their validation.
//! * [`buzen`]: normalization constants by convolution, plus a brute-force
//!   enumeration oracle for testing.
//! * [`analysis`]: closed-form expected delays, delay Jacobians, throughput,
//!   and throughput gradients for both network variants.
//! * [`complexity`]: rounds-to-accuracy bounds, learning-rate ceilings, and
//!   wall-clock/energy budgets built on top of the analysis layer.
//! * [`optimize`]: routing optimization on the simplex, concurrency search,
//!   and Pareto sweeps over the time/energy trade-off.
//! * [`simulate`]: a discrete-event simulator of the same system used to
//!   validate every closed form against sample averages.
//! * [`learn`]: a small asynchronous SGD engine on synthetic least-squares
//!   tasks, driven by the simulator's event core.

pub mod analysis;
pub mod buzen;
pub mod complexity;
pub mod learn;
pub mod model;
pub mod optimize;
pub mod simulate;

pub use model::{
    load_system_config, uniform_routing, ClientProfile, CsParams, LearningConstants, ModelError,
    ModelKind, RoutingVector, SystemConfig,
};
