//! Variance-weighted optimistic Q-learning for episodic MDPs, with exact
//! simulator oracles, weighted-regression function classes, elliptical and
//! subsampling bonus oracles, and an experiment harness.

pub mod bonus;
pub mod eluder;
pub mod env;
pub mod fclass;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod verify;

use thiserror::Error as ThisError;

/// Library-wide error type.
#[derive(Debug, ThisError)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("function class error: {0}")]
    FunctionClass(String),
    #[error("experiment failed at episode {episode}: {message}")]
    Run { episode: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
