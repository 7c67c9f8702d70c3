use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricReport, Result};
use crate::control::{enhance_with_floor, predict_context, EnhancementCondition, SEGSNR_MS};
use crate::mtlnet::ModelWeights;
use crate::preference::{predict_floor, PreferenceFunction};
use crate::scenes::{render, DatasetManifest, SceneLabel, Split};
use crate::signal::{segmental_snr, StftParams};

/// Aggregate for one condition, scene and SNR cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub scene: SceneLabel,
    pub snr_db: f64,
    pub n: usize,
    pub segsnr_in: f64,
    pub segsnr_out: f64,
    pub mean_abs_floor: f64,
    pub scene_accuracy: Option<f64>,
    pub snr_mse: Option<f64>,
}

/// Aggregate for one condition over every test record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub n: usize,
    pub segsnr_in: f64,
    pub segsnr_out: f64,
    pub mean_abs_floor: f64,
    pub scene_accuracy: Option<f64>,
    pub snr: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub rows: Vec<ConditionRow>,
    pub summaries: Vec<ConditionSummary>,
}

struct Outcome {
    scene: SceneLabel,
    snr_db: f64,
    floor: f64,
    segsnr_in: f64,
    segsnr_out: f64,
    prediction: Option<(SceneLabel, f64)>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn accuracy(outcomes: &[&Outcome]) -> Option<f64> {
    let preds: Vec<_> = outcomes.iter().filter_map(|o| o.prediction.map(|p| (o.scene, p.0))).collect();
    (!preds.is_empty() && preds.len() == outcomes.len())
        .then(|| preds.iter().filter(|(t, p)| t == p).count() as f64 / preds.len() as f64)
}

fn snr_pairs(outcomes: &[&Outcome]) -> Option<(Vec<f64>, Vec<f64>)> {
    outcomes
        .iter()
        .map(|o| o.prediction.map(|p| (p.1, o.snr_db)))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.into_iter().unzip())
}

/// Runs the unprocessed, max-suppression and (with preferences) preference
/// conditions over the test split. Model predictions come from the mixture
/// and are shared by every condition.
pub fn compare_conditions(
    manifest: &DatasetManifest,
    weights: Option<&ModelWeights>,
    preferences: Option<&PreferenceFunction>,
    base_dir: Option<&Path>,
    params: StftParams,
) -> Result<ConditionTable> {
    let records = manifest.split(Split::Test);
    if records.is_empty() {
        return Err(EvalError::MissingArtifact("test split"));
    }
    let mut conditions = vec![EnhancementCondition::Noisy, EnhancementCondition::MaxSe];
    if let Some(pref) = preferences {
        if weights.is_none() {
            return Err(EvalError::MissingArtifact("model weights"));
        }
        conditions.push(EnhancementCondition::Plse { preferences: pref.clone() });
    }
    let mut outcomes: Vec<Vec<Outcome>> = conditions.iter().map(|_| Vec::new()).collect();
    for record in records {
        let stems = render(record, base_dir)?;
        let segsnr_in = segmental_snr(&stems.clean, &stems.mixture, SEGSNR_MS)?;
        let prediction = weights.map(|w| predict_context(w, &stems.mixture, params)).transpose()?;
        for (condition, out) in conditions.iter().zip(outcomes.iter_mut()) {
            let (floor, segsnr_out) = match condition {
                EnhancementCondition::Noisy => (1.0, segsnr_in),
                EnhancementCondition::MaxSe => {
                    (0.0, segmental_snr(&stems.clean, &enhance_with_floor(&stems, 0.0, params)?, SEGSNR_MS)?)
                }
                EnhancementCondition::Plse { preferences } => {
                    let (scene, snr) = prediction.ok_or(EvalError::MissingArtifact("model weights"))?;
                    let a = predict_floor(preferences, scene, snr);
                    (a, segmental_snr(&stems.clean, &enhance_with_floor(&stems, a, params)?, SEGSNR_MS)?)
                }
            };
            out.push(Outcome { scene: record.scene, snr_db: record.snr_db, floor, segsnr_in, segsnr_out, prediction });
        }
    }

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (condition, outs) in conditions.iter().zip(&outcomes) {
        let mut cells: BTreeMap<(usize, i64), Vec<&Outcome>> = BTreeMap::new();
        for o in outs {
            cells.entry((o.scene.index(), (o.snr_db * 1e6).round() as i64)).or_default().push(o);
        }
        for cell in cells.values() {
            rows.push(ConditionRow {
                condition: condition.name().to_string(),
                scene: cell[0].scene,
                snr_db: cell[0].snr_db,
                n: cell.len(),
                segsnr_in: mean(cell.iter().map(|o| o.segsnr_in)),
                segsnr_out: mean(cell.iter().map(|o| o.segsnr_out)),
                mean_abs_floor: mean(cell.iter().map(|o| o.floor.abs())),
                scene_accuracy: accuracy(cell),
                snr_mse: snr_pairs(cell).map(|(p, t)| mean(p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)))),
            });
        }
        let all: Vec<&Outcome> = outs.iter().collect();
        let snr = match snr_pairs(&all) {
            Some((p, t)) => MetricReport::compute(&p, &t).ok(),
            None => None,
        };
        summaries.push(ConditionSummary {
            condition: condition.name().to_string(),
            n: all.len(),
            segsnr_in: mean(all.iter().map(|o| o.segsnr_in)),
            segsnr_out: mean(all.iter().map(|o| o.segsnr_out)),
            mean_abs_floor: mean(all.iter().map(|o| o.floor.abs())),
            scene_accuracy: accuracy(&all),
            snr,
        });
    }
    Ok(ConditionTable { rows, summaries })
}

impl ConditionTable {
    pub fn summary(&self, condition: &str) -> Option<&ConditionSummary> {
        self.summaries.iter().find(|s| s.condition == condition)
    }

    /// Writes one CSV line per condition, scene and SNR cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "condition",
            "scene",
            "snr_db",
            "n",
            "segsnr_in",
            "segsnr_out",
            "mean_abs_A",
            "scene_accuracy",
            "snr_mse",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.condition.clone(),
                r.scene.name().to_string(),
                r.snr_db.to_string(),
                r.n.to_string(),
                r.segsnr_in.to_string(),
                r.segsnr_out.to_string(),
                r.mean_abs_floor.to_string(),
                opt(r.scene_accuracy),
                opt(r.snr_mse),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
