//! Deterministic 2D closed-loop simulator.

use thiserror::Error;

pub mod metrics;
pub mod scenario;
pub mod surrogate;
pub mod world;

pub use metrics::{
    infraction_score, route_completion, InfractionEvent, InfractionKind, InfractionTable,
    SimMetrics,
};
pub use scenario::ScenarioSpec;
pub use world::{run, write_log_csv, LogRow, SimConfig, SimOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}
