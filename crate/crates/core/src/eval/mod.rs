//! Prediction metrics, scene confusion, embedding analysis and condition
//! comparison tables.

mod classify;
mod cluster;
mod conditions;
mod metrics;
mod tsne;

use thiserror::Error;

pub use classify::{confusion, confusion_labels, ConfusionMatrix};
pub use cluster::{logistic_probe_accuracy, perceptron_separable, silhouette};
pub use conditions::{compare_conditions, ConditionRow, ConditionSummary, ConditionTable};
pub use metrics::{average_ranks, lcc, mse, srcc, MetricReport};
pub use tsne::{
    conditional_affinities, joint_affinities, tsne, Conditional, TsneConfig, TsneResult, ENTROPY_TOL, MAX_BISECTION_STEPS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("zero variance: correlation undefined")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(&'static str),
    #[error(transparent)]
    Control(#[from] crate::control::ControlError),
    #[error(transparent)]
    Scene(#[from] crate::scenes::SceneError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
