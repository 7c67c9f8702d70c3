use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::Line;
use super::session::{ElicitationSession, ResponseEvent};
use super::{PreferenceError, Result};
use crate::scenes::SceneLabel;

/// Responses per stimulus after which a `NoChange` is forced.
pub const RESPONSE_CAP: u32 = 50;

/// A listener whose ideal level is `p* = clamp(beta * snr + gamma, 0, 1)`
/// per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUser {
    /// Target `p*` lines indexed by scene.
    pub targets: [Line; SceneLabel::COUNT],
    pub deadband: f64,
    pub noise_prob: f64,
}

impl SimulatedUser {
    pub fn new(targets: [Line; SceneLabel::COUNT]) -> Self {
        Self { targets, deadband: 0.05, noise_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.deadband >= 0.0) {
            return Err(PreferenceError::InvalidParams("deadband must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.noise_prob) {
            return Err(PreferenceError::InvalidParams("noise probability must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn target(&self, scene: SceneLabel, snr_db: f64) -> f64 {
        self.targets[scene.index()].eval(snr_db).clamp(0.0, 1.0)
    }

    /// The noise-free response at level `p`.
    pub fn intended(&self, scene: SceneLabel, snr_db: f64, p: f64) -> ResponseEvent {
        let target = self.target(scene, snr_db);
        // A small slack keeps grid levels that sit exactly on the deadband edge inside it.
        let eps = self.deadband + 1e-9;
        if p < target - eps {
            ResponseEvent::Up
        } else if p > target + eps {
            ResponseEvent::Down
        } else {
            ResponseEvent::NoChange
        }
    }
}

/// Drives `session` to completion. With probability `noise_prob` a response
/// is flipped: Up and Down swap, and NoChange becomes Up or Down uniformly.
pub fn simulate_responses(user: &SimulatedUser, mut session: ElicitationSession, seed: u64) -> Result<ElicitationSession> {
    user.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while let Some(stim) = session.current().cloned() {
        let event = if session.pending_responses + 1 >= RESPONSE_CAP {
            ResponseEvent::NoChange
        } else {
            let intended = user.intended(stim.scene, stim.snr_db, session.p_current);
            if user.noise_prob > 0.0 && rng.random_bool(user.noise_prob) {
                match intended {
                    ResponseEvent::Up => ResponseEvent::Down,
                    ResponseEvent::Down => ResponseEvent::Up,
                    ResponseEvent::NoChange if rng.random_bool(0.5) => ResponseEvent::Up,
                    ResponseEvent::NoChange => ResponseEvent::Down,
                }
            } else {
                intended
            }
        };
        session.apply_response(event)?;
    }
    Ok(session)
}
