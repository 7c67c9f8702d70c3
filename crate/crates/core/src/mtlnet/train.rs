use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureMatrix};
use super::model::{loss_and_grads, ModelConfig, Network, TaskMode};
use super::weights::ModelWeights;
use super::{MtlError, Result};
use crate::eval::{confusion, MetricReport};
use crate::scenes::{render, DatasetManifest, SceneLabel, Split};
use crate::signal::{segmental_snr, StftParams};

/// One utterance ready for the network.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub scene: SceneLabel,
    pub snr_db: f64,
    /// Intrusive segmental SNR of the mixture against its clean stem.
    pub segsnr_db: f64,
    pub features: FeatureMatrix,
}

/// Renders every record of `split` and extracts its features.
pub fn load_samples(manifest: &DatasetManifest, split: Split, base_dir: Option<&Path>) -> Result<Vec<Sample>> {
    let params = manifest.stft;
    manifest
        .split(split)
        .into_iter()
        .map(|rec| {
            let stems = render(rec, base_dir)?;
            let segsnr_db = segmental_snr(&stems.clean, &stems.mixture, 16.0)?;
            Ok(Sample {
                id: rec.id.clone(),
                scene: rec.scene,
                snr_db: rec.snr_db,
                segsnr_db,
                features: extract_features(&stems.mixture, params)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TaskMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lambda: f64,
    pub seed: u64,
    pub patience: usize,
    /// Random training crop length in frames; `None` trains on whole utterances.
    pub crop_frames: Option<usize>,
    /// Centre crop applied to validation utterances; `None` validates on
    /// whole utterances.
    pub val_crop_frames: Option<usize>,
    pub clip_norm: f64,
    /// Cosine-anneal the learning rate to `lr * floor` by the last epoch.
    #[serde(default)]
    pub cosine_floor: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TaskMode::Multi,
            lr: 1e-3,
            epochs: 16,
            batch: 8,
            lambda: 10.0,
            seed: 0,
            patience: 10,
            crop_frames: Some(64),
            val_crop_frames: Some(64),
            clip_norm: 5.0,
            cosine_floor: Some(0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_lcc: f64,
    pub val_srcc: f64,
    pub val_mse: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    pub scene_true: SceneLabel,
    pub scene_pred: Option<SceneLabel>,
    pub snr_true: f64,
    pub snr_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: f64,
    pub snr: Option<MetricReport>,
    pub accuracy: Option<f64>,
    pub outcomes: Vec<SampleOutcome>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: SplitMetrics,
}

fn evaluate_net(net: &Network<f32>, samples: &[Sample], lambda: f64) -> Result<SplitMetrics> {
    let mut loss = 0.0;
    let mut outcomes = Vec::with_capacity(samples.len());
    for s in samples {
        let (out, _) = net.forward(&s.features.as_f32(), s.features.n_frames)?;
        let (terms, _) = loss_and_grads(&out, net.mode, s.snr_db, s.scene.index(), lambda, 1.0f32);
        loss += terms.total;
        let snr_hat = out.snr_hat.map(f64::from);
        let scene_pred = out.probs.as_ref().and_then(|p| {
            let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]))?;
            SceneLabel::from_index(best)
        });
        outcomes.push(SampleOutcome { id: s.id.clone(), scene_true: s.scene, scene_pred, snr_true: s.snr_db, snr_hat });
    }
    let loss = loss / samples.len().max(1) as f64;
    if !loss.is_finite() {
        return Err(MtlError::NonFinite("evaluation loss".into()));
    }
    let snr = if net.mode.has_snr() {
        let hat: Vec<f64> = outcomes.iter().filter_map(|o| o.snr_hat).collect();
        let truth: Vec<f64> = outcomes.iter().map(|o| o.snr_true).collect();
        Some(MetricReport::compute(&hat, &truth).unwrap_or(MetricReport {
            lcc: f64::NAN,
            srcc: f64::NAN,
            mse: crate::eval::mse(&hat, &truth).unwrap_or(f64::NAN),
            n: hat.len(),
        }))
    } else {
        None
    };
    let accuracy = if net.mode.has_asc() {
        let t: Vec<usize> = outcomes.iter().map(|o| o.scene_true.index()).collect();
        let p: Vec<usize> = outcomes.iter().filter_map(|o| o.scene_pred.map(|l| l.index())).collect();
        Some(confusion(&t, &p).map(|m| m.accuracy()).unwrap_or(f64::NAN))
    } else {
        None
    };
    Ok(SplitMetrics { loss, snr, accuracy, outcomes })
}

/// Evaluates full-length utterances with unit cross-entropy weight.
pub fn evaluate_samples(weights: &ModelWeights, samples: &[Sample]) -> Result<SplitMetrics> {
    evaluate_net(weights.network(), samples, 1.0)
}

struct Adam {
    m: Network<f32>,
    v: Network<f32>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, net: &mut Network<f32>, grad: &mut Network<f32>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let (b1, b2, eps) = (Self::B1 as f32, Self::B2 as f32, (Self::EPS * c2.sqrt()) as f32);
        let params = net.params_mut();
        let grads = grad.params_mut();
        let ms = self.m.params_mut();
        let vs = self.v.params_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step * m.data[i] / (v.data[i].sqrt() + eps);
            }
        }
    }
}

fn clip_gradients(grad: &mut Network<f32>, max_norm: f64) {
    let norm = grad
        .params()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = (max_norm / norm) as f32;
        for t in grad.params_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Trains on pre-loaded samples and returns the weights with the lowest
/// validation loss.
pub fn train_on(train: &[Sample], val: &[Sample], config: &ModelConfig, hyper: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(MtlError::EmptySplit("train".into()));
    }
    if val.is_empty() {
        return Err(MtlError::EmptySplit("val".into()));
    }
    if hyper.batch == 0 || hyper.epochs == 0 || !(hyper.lr > 0.0) || !(hyper.lambda >= 0.0) {
        return Err(MtlError::InvalidConfig("batch, epochs and lr must be positive; lambda non-negative".into()));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.features.n_bins != config.n_bins) {
        return Err(MtlError::ShapeMismatch { expected: config.n_bins, got: s.features.n_bins });
    }
    let cropped_val: Vec<Sample>;
    let val = match hyper.val_crop_frames {
        Some(c) => {
            cropped_val = val
                .iter()
                .map(|s| {
                    let n = s.features.n_frames;
                    let start = n.saturating_sub(c) / 2;
                    Sample { features: s.features.crop(start, c), ..s.clone() }
                })
                .collect();
            &cropped_val[..]
        }
        None => val,
    };
    let mut net = Network::<f32>::new(config.clone(), hyper.mode, hyper.seed)?;
    let mut grad = net.zeros_like();
    let mut adam = Adam { m: net.zeros_like(), v: net.zeros_like(), t: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_da7a);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, Network<f32>, usize, SplitMetrics)> = None;
    let mut since_best = 0;

    for epoch in 1..=hyper.epochs {
        let lr = match hyper.cosine_floor {
            Some(floor) if hyper.epochs > 1 => {
                let progress = (epoch - 1) as f64 / (hyper.epochs - 1) as f64;
                hyper.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
            }
            _ => hyper.lr,
        };
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(hyper.batch) {
            grad.fill_zero();
            let weight = 1.0 / batch.len() as f32;
            for &i in batch {
                let s = &train[i];
                let feats = match hyper.crop_frames {
                    Some(c) if s.features.n_frames > c => {
                        let start = rng.random_range(0..=s.features.n_frames - c);
                        s.features.crop(start, c)
                    }
                    _ => s.features.clone(),
                };
                let (out, cache) = net.forward(&feats.as_f32(), feats.n_frames)?;
                let (terms, og) = loss_and_grads(&out, hyper.mode, s.snr_db, s.scene.index(), hyper.lambda, weight);
                if !terms.total.is_finite() {
                    return Err(MtlError::Diverged { epoch, loss: terms.total });
                }
                train_loss += terms.total;
                net.backward(&cache, &og, &mut grad);
            }
            clip_gradients(&mut grad, hyper.clip_norm);
            adam.step(&mut net, &mut grad, lr);
        }
        if !net.is_finite() {
            return Err(MtlError::Diverged { epoch, loss: f64::NAN });
        }
        let metrics = evaluate_net(&net, val, hyper.lambda)?;
        let record = EpochRecord {
            epoch,
            train_loss: train_loss / train.len() as f64,
            val_loss: metrics.loss,
            val_lcc: metrics.snr.map_or(f64::NAN, |m| m.lcc),
            val_srcc: metrics.snr.map_or(f64::NAN, |m| m.srcc),
            val_mse: metrics.snr.map_or(f64::NAN, |m| m.mse),
            val_accuracy: metrics.accuracy.unwrap_or(f64::NAN),
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} lcc {:.4} acc {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_lcc,
            record.val_accuracy
        );
        history.push(record);
        if best.as_ref().is_none_or(|b| metrics.loss < b.0) {
            best = Some((metrics.loss, net.clone(), epoch, metrics));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }
    let (_, net, best_epoch, best_val) = best.expect("at least one epoch");
    Ok(TrainOutcome { weights: ModelWeights::from_network(net)?, history, best_epoch, best_val })
}

/// Renders the train and validation splits and trains on them.
pub fn train(
    manifest: &DatasetManifest,
    config: &ModelConfig,
    hyper: &TrainConfig,
    base_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let tr = load_samples(manifest, Split::Train, base_dir)?;
    let va = load_samples(manifest, Split::Val, base_dir)?;
    if config.n_bins != StftParams::default().n_bins() && config.n_bins != manifest.stft.n_bins() {
        return Err(MtlError::ShapeMismatch { expected: manifest.stft.n_bins(), got: config.n_bins });
    }
    train_on(&tr, &va, config, hyper)
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| MtlError::Io(e.into_error()))?;
    crate::write_atomic(path, &bytes)?;
    Ok(())
}
