use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::session::PreferencePoint;
use super::{PreferenceError, Result};
use crate::scenes::SceneLabel;

/// Noise floor as a linear function of SNR: `A = beta * snr + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub beta: f64,
    pub gamma: f64,
}

impl Line {
    pub fn constant(a: f64) -> Self {
        Self { beta: 0.0, gamma: a }
    }

    pub fn eval(&self, snr_db: f64) -> f64 {
        self.beta * snr_db + self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub points: usize,
    pub residual_rms: f64,
    /// True when the scene lacked two distinct SNRs and uses the mean line.
    pub fallback: bool,
}

/// Per-scene noise-floor lines plus the pooled mean line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceFunction {
    #[serde(flatten)]
    pub scenes: BTreeMap<SceneLabel, Line>,
    pub mean: Line,
    pub diagnostics: BTreeMap<String, FitDiagnostics>,
}

impl PreferenceFunction {
    /// The same constant floor for every scene and SNR.
    pub fn constant(a: f64) -> Self {
        let line = Line::constant(a);
        let diag = FitDiagnostics { points: 0, residual_rms: 0.0, fallback: false };
        Self {
            scenes: SceneLabel::ALL.iter().map(|&s| (s, line)).collect(),
            mean: line,
            diagnostics: SceneLabel::ALL.iter().map(|s| (s.name().to_string(), diag)).chain([("mean".into(), diag)]).collect(),
        }
    }

    pub fn line(&self, scene: SceneLabel) -> Line {
        self.scenes.get(&scene).copied().unwrap_or(self.mean)
    }
}

/// `(beta, gamma)` by ordinary least squares, or `None` when `x` has fewer
/// than two distinct values.
fn ols(points: &[(f64, f64)]) -> Option<Line> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 || !sxx.is_finite() {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let beta = sxy / sxx;
    Some(Line { beta, gamma: my - beta * mx })
}

fn residual_rms(points: &[(f64, f64)], line: Line) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    (points.iter().map(|&(x, y)| (y - line.eval(x)).powi(2)).sum::<f64>() / points.len() as f64).sqrt()
}

/// Fits `A = 1 - p` against stimulus SNR per scene and pooled.
pub fn fit_preferences(log: &[PreferencePoint]) -> Result<PreferenceFunction> {
    if log.is_empty() {
        return Err(PreferenceError::EmptyLog);
    }
    if log.iter().any(|p| !p.snr_db.is_finite() || !(0.0..=1.0).contains(&p.p_final)) {
        return Err(PreferenceError::InvalidParams("log entries must have finite SNR and p in [0, 1]".into()));
    }
    // Canonical order makes the fit bit-identical under log permutations.
    let mut pooled: Vec<(SceneLabel, f64, f64)> = log.iter().map(|p| (p.scene, p.snr_db, 1.0 - p.p_final)).collect();
    pooled.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let all: Vec<(f64, f64)> = pooled.iter().map(|p| (p.1, p.2)).collect();
    let mean = ols(&all).unwrap_or_else(|| Line::constant(all.iter().map(|p| p.1).sum::<f64>() / all.len() as f64));
    let mut scenes = BTreeMap::new();
    let mut diagnostics = BTreeMap::new();
    for scene in SceneLabel::ALL {
        let pts: Vec<(f64, f64)> = pooled.iter().filter(|p| p.0 == scene).map(|p| (p.1, p.2)).collect();
        let (line, fallback) = match ols(&pts) {
            Some(l) => (l, false),
            None => (mean, true),
        };
        scenes.insert(scene, line);
        diagnostics.insert(
            scene.name().to_string(),
            FitDiagnostics { points: pts.len(), residual_rms: residual_rms(&pts, line), fallback },
        );
    }
    diagnostics.insert(
        "mean".into(),
        FitDiagnostics { points: all.len(), residual_rms: residual_rms(&all, mean), fallback: false },
    );
    Ok(PreferenceFunction { scenes, mean, diagnostics })
}

/// Noise floor for a scene at a predicted SNR, clamped to `[0, 1]`.
pub fn predict_floor(pref: &PreferenceFunction, scene: SceneLabel, snr_hat: f64) -> f64 {
    let a = pref.line(scene).eval(snr_hat);
    if a.is_nan() {
        return pref.mean.gamma.clamp(0.0, 1.0);
    }
    a.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(scene: SceneLabel, snr_db: f64, p: f64) -> PreferencePoint {
        PreferencePoint { scene, snr_db, p_final: p, responses_taken: 1 }
    }

    #[test]
    fn two_point_line_is_exact() {
        let f = fit_preferences(&[pt(SceneLabel::Cafe, -9.0, 1.0), pt(SceneLabel::Cafe, 9.0, 0.0)]).unwrap();
        let l = f.line(SceneLabel::Cafe);
        assert!((l.beta - 1.0 / 18.0).abs() < 1e-15);
        assert!((l.gamma - 0.5).abs() < 1e-15);
        assert_eq!(predict_floor(&f, SceneLabel::Cafe, 9.0), 1.0);
        assert_eq!(predict_floor(&f, SceneLabel::Cafe, -9.0), 0.0);
        assert!(f.diagnostics["bus"].fallback);
        assert_eq!(f.line(SceneLabel::Bus), f.mean);
    }

    #[test]
    fn constant_preference_gives_flat_half_floor() {
        let log: Vec<_> = SceneLabel::ALL
            .iter()
            .flat_map(|&s| [-9.0, -3.0, 0.0, 3.0, 9.0].map(|snr| pt(s, snr, 0.5)))
            .collect();
        let f = fit_preferences(&log).unwrap();
        for s in SceneLabel::ALL {
            assert_eq!(f.line(s), Line { beta: 0.0, gamma: 0.5 });
            assert_eq!(predict_floor(&f, s, 123.0), 0.5);
        }
    }

    #[test]
    fn plug_in_values_clamp() {
        let mut f = PreferenceFunction::constant(0.0);
        f.scenes.insert(SceneLabel::Bus, Line { beta: 1.0 / 18.0, gamma: 0.5 });
        f.scenes.insert(SceneLabel::Street, Line { beta: 0.1, gamma: 0.9 });
        assert_eq!(predict_floor(&f, SceneLabel::Bus, 9.0), 1.0);
        assert_eq!(predict_floor(&f, SceneLabel::Street, 9.0), 1.0);
        assert_eq!(predict_floor(&f, SceneLabel::Street, -20.0), 0.0);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(fit_preferences(&[]), Err(PreferenceError::EmptyLog)));
    }

    #[test]
    fn json_shape_has_scene_keys_mean_and_diagnostics() {
        let f = fit_preferences(&[pt(SceneLabel::Cafe, -9.0, 1.0), pt(SceneLabel::Cafe, 9.0, 0.0)]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        for key in ["bus", "cafe", "pedestrian", "street", "mean", "diagnostics"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["cafe"]["beta"].is_number());
        let back: PreferenceFunction = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }

    proptest! {
        #[test]
        fn fit_is_order_invariant_and_floor_bounded(
            raw in prop::collection::vec((0usize..4, -12.0f64..12.0, 0.0f64..=1.0), 1..40),
            rot in 0usize..40,
            snr_hat in -100.0f64..100.0,
        ) {
            let log: Vec<_> = raw.iter().map(|&(s, x, p)| pt(SceneLabel::ALL[s], x, p)).collect();
            let mut shuffled = log.clone();
            shuffled.rotate_left(rot % log.len());
            shuffled.reverse();
            let a = fit_preferences(&log).unwrap();
            let b = fit_preferences(&shuffled).unwrap();
            prop_assert_eq!(&a, &b);
            for s in SceneLabel::ALL {
                let fl = predict_floor(&a, s, snr_hat);
                prop_assert!((0.0..=1.0).contains(&fl));
            }
        }
    }
}
