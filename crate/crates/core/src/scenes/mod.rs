//! Acoustic scenes, procedural stimulus synthesis and dataset manifests.
//!
//! Stimuli are pure functions of their seeds, so a [`DatasetManifest`] is
//! enough to reproduce every waveform. Records backed by user-supplied WAV
//! pairs carry file references instead and are loaded from disk.

mod dataset;
mod dsp;
mod synth;

pub use dataset::{
    build_dataset, build_manifest, load_pairs, render, DatasetConfig, DatasetManifest,
    MixtureRecord, RecordSource, Split, SplitCounts, Stems, MANIFEST_VERSION, SNR_GRID_DB,
};
pub use synth::{synth_noise, synth_speech, synth_speech_labeled, SpeechSurrogate, NOISE_RMS, SPEECH_RMS};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("unknown scene label {0:?}")]
    UnknownScene(String),
    #[error("dataset config has a zero count: {0}")]
    ZeroCount(&'static str),
    #[error("cannot write dataset to {path}: {source}")]
    Unwritable { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

/// The four acoustic scenes, with a stable integer encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneLabel {
    Bus = 0,
    Cafe = 1,
    Pedestrian = 2,
    Street = 3,
}

impl SceneLabel {
    pub const ALL: [SceneLabel; 4] =
        [SceneLabel::Bus, SceneLabel::Cafe, SceneLabel::Pedestrian, SceneLabel::Street];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SceneLabel::Bus => "bus",
            SceneLabel::Cafe => "cafe",
            SceneLabel::Pedestrian => "pedestrian",
            SceneLabel::Street => "street",
        }
    }
}

impl fmt::Display for SceneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneLabel {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SceneError::UnknownScene(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_encoding_is_stable() {
        for (i, l) in SceneLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(SceneLabel::from_index(i), Some(*l));
            assert_eq!(l.name().parse::<SceneLabel>().unwrap(), *l);
        }
        assert!("Train".parse::<SceneLabel>().is_err());
        assert_eq!(serde_json::to_string(&SceneLabel::Cafe).unwrap(), "\"cafe\"");
    }
}
