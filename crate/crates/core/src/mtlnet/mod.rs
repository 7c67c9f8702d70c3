//! Multi-task CNN-BiLSTM-attention network predicting utterance SNR and
//! acoustic scene, trained with hand-written reverse-mode gradients.

mod features;
mod gradcheck;
pub mod layers;
mod model;
mod tensor;
mod train;
mod weights;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{extract_features, log_power, FeatureMatrix, POWER_FLOOR, STD_FLOOR};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{elu, sigmoid, LAYER_NORM_EPS};
pub use model::{loss_and_grads, softmax, Branch, Cache, LossTerms, ModelConfig, Network, OutputGrads, Outputs, TaskMode, Widths};
pub use tensor::{gemm, matmul, Real, Tensor};
pub use train::{
    evaluate_samples, load_samples, train, train_on, write_history_csv, EpochRecord, Sample, SampleOutcome, SplitMetrics,
    TrainConfig, TrainOutcome,
};
pub use weights::{ModelWeights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use crate::scenes::{DatasetManifest, SceneError, SceneLabel, Split};
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum MtlError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("feature width mismatch: model expects {expected} bins, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("split '{0}' has no records")]
    EmptySplit(String),
    #[error("malformed weights file: {0}")]
    WeightsFormat(String),
    #[error("weights checksum mismatch")]
    Checksum,
    #[error("unknown layer tag '{0}' (expected attention or final_linear)")]
    UnknownLayer(String),
    #[error("model was trained without the {0} head")]
    MissingHead(&'static str),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MtlError> = std::result::Result<T, E>;

/// Layers whose activations can be exported alongside a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerTag {
    Attention,
    FinalLinear,
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerTag::Attention => "attention",
            LayerTag::FinalLinear => "final_linear",
        })
    }
}

impl FromStr for LayerTag {
    type Err = MtlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(LayerTag::Attention),
            "final_linear" => Ok(LayerTag::FinalLinear),
            other => Err(MtlError::UnknownLayer(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    /// Branch name (`snr` or `asc`) to its `T x d` self-attention output.
    pub attention: BTreeMap<String, Vec<Vec<f64>>>,
    /// Pre-softmax scene logits.
    pub final_linear: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub snr_hat: Option<f64>,
    pub snr_frames: Vec<f64>,
    pub scene_probs: Option<[f64; SceneLabel::COUNT]>,
    pub embeddings: Embeddings,
}

impl Prediction {
    pub fn scene(&self) -> Option<SceneLabel> {
        let probs = self.scene_probs?;
        let best = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b]))?;
        SceneLabel::from_index(best)
    }
}

fn to_rows(x: &[f32], width: usize) -> Vec<Vec<f64>> {
    x.chunks_exact(width).map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
}

/// Runs inference and attaches the requested embeddings.
pub fn forward(weights: &ModelWeights, features: &FeatureMatrix, expose: &[LayerTag]) -> Result<Prediction> {
    let net = weights.network();
    if features.n_bins != net.config.n_bins {
        return Err(MtlError::ShapeMismatch { expected: net.config.n_bins, got: features.n_bins });
    }
    let (out, cache) = net.forward(&features.as_f32(), features.n_frames)?;
    let snr_frames: Vec<f64> = out.frames.as_deref().unwrap_or_default().iter().map(|&v| f64::from(v)).collect();
    let snr_hat = (!snr_frames.is_empty()).then(|| snr_frames.iter().sum::<f64>() / snr_frames.len() as f64);
    let scene_probs = out.probs.as_ref().map(|p| {
        let mut a = [0.0; SceneLabel::COUNT];
        for (d, s) in a.iter_mut().zip(p) {
            *d = f64::from(*s);
        }
        a
    });
    let mut embeddings = Embeddings::default();
    if expose.contains(&LayerTag::Attention) {
        let width = net.fc.n_out();
        if let Some(a) = cache.snr_attention() {
            embeddings.attention.insert("snr".into(), to_rows(a, width));
        }
        if let Some(a) = cache.asc_attention() {
            embeddings.attention.insert("asc".into(), to_rows(a, width));
        }
    }
    if expose.contains(&LayerTag::FinalLinear) {
        embeddings.final_linear = out.logits.as_ref().map(|l| l.iter().map(|&v| f64::from(v)).collect());
    }
    let all_finite = snr_frames.iter().all(|v| v.is_finite()) && scene_probs.iter().flatten().all(|v| v.is_finite());
    if !all_finite {
        return Err(MtlError::NonFinite("prediction".into()));
    }
    Ok(Prediction { snr_hat, snr_frames, scene_probs, embeddings })
}

/// One exported embedding row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub scene: SceneLabel,
    pub snr_db: f64,
    pub vector: Vec<f64>,
}

/// Exports one vector per utterance of `split`. Attention embeddings come
/// from the scene branch when present (else the SNR branch) and are averaged
/// over time; final-linear embeddings are the scene logits.
pub fn export_embeddings(
    weights: &ModelWeights,
    manifest: &DatasetManifest,
    split: Split,
    layer: LayerTag,
    base_dir: Option<&Path>,
) -> Result<Vec<EmbeddingRow>> {
    let samples = load_samples(manifest, split, base_dir)?;
    embed_samples(weights, &samples, layer)
}

pub fn embed_samples(weights: &ModelWeights, samples: &[Sample], layer: LayerTag) -> Result<Vec<EmbeddingRow>> {
    if layer == LayerTag::FinalLinear && !weights.mode().has_asc() {
        return Err(MtlError::MissingHead("scene"));
    }
    samples
        .iter()
        .map(|s| {
            let pred = forward(weights, &s.features, &[layer])?;
            let vector = match layer {
                LayerTag::FinalLinear => pred.embeddings.final_linear.expect("scene head present"),
                LayerTag::Attention => {
                    let rows = pred
                        .embeddings
                        .attention
                        .get("asc")
                        .or_else(|| pred.embeddings.attention.get("snr"))
                        .expect("at least one branch");
                    let n = rows.len() as f64;
                    let mut mean = vec![0.0; rows[0].len()];
                    for r in rows {
                        for (m, v) in mean.iter_mut().zip(r) {
                            *m += v / n;
                        }
                    }
                    mean
                }
            };
            Ok(EmbeddingRow { id: s.id.clone(), scene: s.scene, snr_db: s.snr_db, vector })
        })
        .collect()
}
