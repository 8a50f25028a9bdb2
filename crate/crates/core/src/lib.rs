//! Stable-throughput region bounds for a cooperative cognitive relaying
//! network with one primary user and two secondary users, together with a
//! slot-level simulator of the MAC protocol used to cross-check every rate
//! formula.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod model;
pub mod optimizer;
pub mod output;
pub mod simulator;

pub use analysis::{evaluate_scheme, Constraint, FeasibilityReport};
pub use model::{
    Access, ModelError, Occupancy, Policy, QueueId, RatePoint, Scheme, SecondaryLink,
    SystemConfig,
};
