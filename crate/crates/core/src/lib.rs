//! Light-traffic analysis and simulation of power-of-d load balancing over
//! heterogeneous FCFS servers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod sim;

pub use analytics::{lt_approx, LtDerivatives};
pub use model::{
    CapacityVector, DistributionSpec, Family, ModelError, RngStream, ScenarioConfig,
    ServiceDistribution,
};
pub use oracle::{TaggedModel, TaggedScenario};
pub use sim::{simulate, sweep, SimEstimate};
