//! Scenario harness: builds the world, runs sessions end to end and
//! aggregates the outcomes.

mod runner;
mod scenario;

use thiserror::Error;

pub use runner::{
    chaincodes, median, run, sweep, AttemptRecord, RunReport, SweepParam, SweepRow, ATTEMPT_SPACING_NS, DECOY_UAV_ID,
    DEFAULT_REPS, PLATFORM_ID, UAV_ID,
};
pub use scenario::{load_scenario, AnchorSpec, AttackSpec, Attempt, Scenario, PRESETS};

use crate::pol::PolError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cannot read scenario {path}: {message}")]
    Load { path: String, message: String },
    #[error("scenario parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Session(#[from] PolError),
}
