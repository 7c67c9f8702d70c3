//! Richards-curve mask activation and the Noisy / MaxSE / PLSE enhancement
//! conditions.

mod richards;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use richards::{richards, scale_mask, RichardsParams, LOGIT_CLIP};

use crate::mtlnet::{extract_features, forward, LayerTag, ModelWeights, MtlError};
use crate::preference::{predict_floor, PreferenceFunction};
use crate::scenes::{MixtureRecord, SceneLabel, Stems};
use crate::signal::{apply_mask, ideal_ratio_mask, istft, segmental_snr, stft, AudioClip, SignalError, StftParams};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid Richards parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite activation input")]
    NonFinite,
    #[error("mask must be in the ratio domain")]
    NotRatioMask,
    #[error("noise floor {0} outside [0, 1]")]
    FloorOutOfRange(f64),
    #[error("condition needs trained weights")]
    MissingWeights,
    #[error("weights lack the {0} head required for preference-driven enhancement")]
    MissingHead(&'static str),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] MtlError),
}

pub type Result<T, E = ControlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum EnhancementCondition {
    Noisy,
    MaxSe,
    Plse { preferences: PreferenceFunction },
}

impl EnhancementCondition {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Noisy => "noisy",
            Self::MaxSe => "max_se",
            Self::Plse { .. } => "plse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub id: String,
    pub condition: String,
    pub scene_true: SceneLabel,
    pub scene_pred: Option<SceneLabel>,
    pub snr_true: f64,
    pub snr_hat: Option<f64>,
    /// Noise floor applied; 1 for the unprocessed condition.
    #[serde(rename = "A")]
    pub floor: f64,
    pub segsnr_out: f64,
    pub segsnr_in: f64,
}

/// Default segment length for reported segmental SNR.
pub const SEGSNR_MS: f64 = 16.0;

/// Oracle ratio mask lifted to floor `a` through the Richards activation,
/// applied to the mixture and resynthesized.
pub fn enhance_with_floor(stems: &Stems, a: f64, params: StftParams) -> Result<AudioClip> {
    let mix = stft(&stems.mixture, params)?;
    let irm = ideal_ratio_mask(&stft(&stems.clean, params)?, &stft(&stems.noise, params)?)?;
    let mask = scale_mask(&irm, a)?;
    Ok(istft(&apply_mask(&mix, &mask)?)?)
}

/// Predicts scene and SNR from the unprocessed mixture.
pub fn predict_context(weights: &ModelWeights, mixture: &AudioClip, params: StftParams) -> Result<(SceneLabel, f64)> {
    let mode = weights.mode();
    if !mode.has_asc() {
        return Err(ControlError::MissingHead("scene"));
    }
    if !mode.has_snr() {
        return Err(ControlError::MissingHead("snr"));
    }
    let pred = forward(weights, &extract_features(mixture, params)?, &[] as &[LayerTag])?;
    let scene = pred.scene().ok_or(ControlError::MissingHead("scene"))?;
    let snr = pred.snr_hat.ok_or(ControlError::MissingHead("snr"))?;
    Ok((scene, snr))
}

/// Runs one condition on one record.
pub fn enhance(
    record: &MixtureRecord,
    condition: &EnhancementCondition,
    weights: Option<&ModelWeights>,
    stems: &Stems,
    params: StftParams,
) -> Result<(AudioClip, EnhanceReport)> {
    let segsnr_in = segmental_snr(&stems.clean, &stems.mixture, SEGSNR_MS)?;
    let (output, floor, scene_pred, snr_hat) = match condition {
        EnhancementCondition::Noisy => (stems.mixture.clone(), 1.0, None, None),
        EnhancementCondition::MaxSe => (enhance_with_floor(stems, 0.0, params)?, 0.0, None, None),
        EnhancementCondition::Plse { preferences } => {
            let weights = weights.ok_or(ControlError::MissingWeights)?;
            let (scene, snr) = predict_context(weights, &stems.mixture, params)?;
            let a = predict_floor(preferences, scene, snr);
            (enhance_with_floor(stems, a, params)?, a, Some(scene), Some(snr))
        }
    };
    let segsnr_out = segmental_snr(&stems.clean, &output, SEGSNR_MS)?;
    let report = EnhanceReport {
        id: record.id.clone(),
        condition: condition.name().to_string(),
        scene_true: record.scene,
        scene_pred,
        snr_true: record.snr_db,
        snr_hat,
        floor,
        segsnr_out,
        segsnr_in,
    };
    Ok((output, report))
}
