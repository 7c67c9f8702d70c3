//! Up/down/no-change preference elicitation, per-scene linear noise-floor
//! fits and a simulated listener for closed-loop runs.

mod fit;
mod session;
mod simulate;

use thiserror::Error;

pub use fit::{fit_preferences, predict_floor, FitDiagnostics, Line, PreferenceFunction};
pub use session::{
    new_session, new_session_for_scenes, new_session_from_pool, read_session_log, write_session_log, ElicitationSession, LogHeader,
    PreferencePoint, ResponseEvent, SessionStatus, Stimulus, DEFAULT_STEP, START_P,
};
pub use simulate::{simulate_responses, SimulatedUser, RESPONSE_CAP};

use crate::scenes::SceneLabel;

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("manifest has no record for {scene} at {snr_db} dB")]
    MissingCell { scene: SceneLabel, snr_db: f64 },
    #[error("session is already complete")]
    SessionComplete,
    #[error("preference log is empty")]
    EmptyLog,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("malformed session log: {0}")]
    MalformedLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PreferenceError> = std::result::Result<T, E>;
