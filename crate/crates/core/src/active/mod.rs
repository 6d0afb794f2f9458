//! Realizability-aware active learning of trait-efficacy maps.
//!
//! Each task has its own GP over aggregated traits. Every iteration picks one
//! target row per task by UCB over a candidate pool, snaps it to a coalition
//! the team can actually form, asks an evaluator for per-task labels and
//! updates each task's GP with its own row.

mod learner;
mod projection;
mod sampling;

use thiserror::Error;

pub use learner::{
    learn, Aggregation, EvaluationError, Evaluator, LearnOutcome, LearnerConfig, LearnerState, MetricsRow, Query,
    RegretOracle, SyntheticEvaluator,
};
pub use projection::{project_row, project_to_realizable, Projection, RowProjection, ENUMERATION_CAP, HILL_CLIMB_RESTARTS};
pub use sampling::{sample_candidates, sample_neighbors, Candidate, RealizableSet, Strategy};

use crate::efficacy::EfficacyError;
use crate::gp::GpError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActiveError {
    #[error("{robots} robots exceed the enumeration cap of {cap}")]
    EnumerationCap { robots: usize, cap: usize },
    #[error("target row has {got} traits, team has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Efficacy(#[from] EfficacyError),
}
