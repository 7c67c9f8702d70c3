//! Exact t-SNE with per-point perplexity calibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub components: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            components: 2,
            perplexity: 50.0,
            iterations: 5000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    /// The configured perplexity capped at `(n - 1) / 3`.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        self.perplexity.min((n as f64 - 1.0) / 3.0)
    }
}

pub const ENTROPY_TOL: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 50;
pub const MIN_POINTS: usize = 10;

/// Row-stochastic conditional affinities `p_{j|i}` (`n x n`, zero diagonal)
/// and, per row, the absolute entropy error in nats.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub p: Vec<f64>,
    pub n: usize,
    pub entropy_error: Vec<f64>,
}

fn sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn validate(x: &[Vec<f64>]) -> Result<()> {
    if x.len() < MIN_POINTS {
        return Err(EvalError::TooFew { needed: MIN_POINTS, got: x.len() });
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(EvalError::LengthMismatch { left: d, right: x.iter().map(Vec::len).find(|&l| l != d).unwrap_or(0) });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    if x.iter().all(|r| r == &x[0]) {
        return Err(EvalError::Degenerate("all embeddings are identical".into()));
    }
    Ok(())
}

/// Calibrates each row's Gaussian precision by bisection so that the row
/// entropy equals `ln(perplexity)`.
pub fn conditional_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Conditional> {
    validate(x)?;
    let n = x.len();
    if !(perplexity >= 1.0) || perplexity > (n - 1) as f64 {
        return Err(EvalError::Degenerate(format!("perplexity {perplexity} not in [1, {}]", n - 1)));
    }
    let d = sq_distances(x);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut entropy_error = vec![0.0; n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let di = &d[i * n..(i + 1) * n];
        let dmin = (0..n).filter(|&j| j != i).map(|j| di[j]).fold(f64::INFINITY, f64::min);
        let mean = (0..n).filter(|&j| j != i).map(|j| di[j] - dmin).sum::<f64>() / (n - 1) as f64;
        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let entropy = |beta: f64, row: &mut [f64]| -> f64 {
            let mut sum = 0.0;
            let mut dot = 0.0;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                let s = di[j] - dmin;
                let w = (-beta * s).exp();
                row[j] = w;
                sum += w;
                dot += w * s;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            sum.ln() + beta * dot / sum
        };
        let mut h = entropy(beta, &mut row);
        for _ in 0..MAX_BISECTION_STEPS {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = entropy(beta, &mut row);
        }
        entropy_error[i] = (h - target).abs();
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    Ok(Conditional { p, n, entropy_error })
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(c: &Conditional) -> Vec<f64> {
    let n = c.n;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (c.p[i * n + j] + c.p[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<Vec<f64>>,
    /// `(iteration, KL(P || Q))` every 100 iterations.
    pub kl_history: Vec<(usize, f64)>,
    pub perplexity: f64,
    pub max_entropy_error: f64,
}

fn kernel_and_kl(y: &[f64], n: usize, dims: usize, p: &[f64], num: &mut [f64]) -> (f64, f64) {
    let mut z = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let d2: f64 = (0..dims).map(|k| (y[i * dims + k] - y[j * dims + k]).powi(2)).sum();
            let w = 1.0 / (1.0 + d2);
            num[i * n + j] = w;
            num[j * n + i] = w;
            z += 2.0 * w;
        }
    }
    let kl = p
        .iter()
        .zip(num.iter())
        .filter(|(pij, _)| **pij > 0.0)
        .map(|(pij, w)| pij * (pij / (w / z).max(f64::MIN_POSITIVE)).ln())
        .sum();
    (z, kl)
}

pub fn tsne(x: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    validate(x)?;
    let n = x.len();
    let perplexity = config.effective_perplexity(n);
    if perplexity < 2.0 {
        return Err(EvalError::Degenerate(format!("capped perplexity {perplexity} below 2")));
    }
    if config.components == 0 || config.iterations < 250 {
        return Err(EvalError::Degenerate("need at least one component and 250 iterations".into()));
    }
    let cond = conditional_affinities(x, perplexity)?;
    let max_entropy_error = cond.entropy_error.iter().copied().fold(0.0, f64::max);
    let p = joint_affinities(&cond);
    let dims = config.components;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid sigma");
    let mut y: Vec<f64> = (0..n * dims).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; n * dims];
    let mut gains = vec![1.0f64; n * dims];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n * dims];
    let mut kl_history = Vec::new();

    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iters { config.early_exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.momentum_initial } else { config.momentum_final };
        let (z, _) = kernel_and_kl(&y, n, dims, &p, &mut num);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = 4.0 * (exag * p[i * n + j] - w / z) * w;
                for k in 0..dims {
                    grad[i * dims + k] += coef * (y[i * dims + k] - y[j * dims + k]);
                }
            }
        }
        for idx in 0..n * dims {
            let same_sign = (grad[idx] > 0.0) == (update[idx] > 0.0);
            gains[idx] = if same_sign { gains[idx] * 0.8 } else { gains[idx] + 0.2 };
            gains[idx] = gains[idx].max(0.01);
            update[idx] = momentum * update[idx] - config.learning_rate * gains[idx] * grad[idx];
            y[idx] += update[idx];
        }
        for k in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + k]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * dims + k] -= mean);
        }
        if (it + 1) % 100 == 0 {
            let (_, kl) = kernel_and_kl(&y, n, dims, &p, &mut num);
            kl_history.push((it + 1, kl));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let coords = y.chunks_exact(dims).map(<[f64]>::to_vec).collect();
    Ok(TsneResult { coords, kl_history, perplexity, max_entropy_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::perceptron_separable;

    fn clusters(n_per: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                let mut v: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
                v[0] += sep * c as f64;
                x.push(v);
                labels.push(c);
            }
        }
        (x, labels)
    }

    #[test]
    fn affinities_are_calibrated_and_normalized() {
        let (x, _) = clusters(30, 10, 10.0, 1);
        let cond = conditional_affinities(&x, 19.0).unwrap();
        for i in 0..60 {
            let s: f64 = cond.p[i * 60..(i + 1) * 60].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(cond.entropy_error[i] < 1e-4, "{}", cond.entropy_error[i]);
        }
        let p = joint_affinities(&cond);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..60 {
            for j in 0..60 {
                assert_eq!(p[i * 60 + j], p[j * 60 + i]);
                assert!(p[i * 60 + j] >= 0.0);
            }
        }
    }

    #[test]
    fn separated_clusters_stay_separable_and_kl_settles() {
        let (x, labels) = clusters(30, 10, 10.0, 2);
        let r = tsne(&x, &TsneConfig::default()).unwrap();
        assert_eq!(r.coords.len(), 60);
        assert_eq!(r.kl_history.len(), 50);
        assert!((r.perplexity - 59.0 / 3.0).abs() < 1e-12);
        assert!(perceptron_separable(&r.coords, &labels, 1000));
        let at300 = r.kl_history.iter().find(|(i, _)| *i == 300).unwrap().1;
        let last = r.kl_history.last().unwrap().1;
        assert!(last <= at300 + 1e-3, "{last} vs {at300}");
    }

    #[test]
    fn duplicated_rows_stay_together() {
        let (mut x, _) = clusters(30, 10, 10.0, 3);
        x.push(x[7].clone());
        let r = tsne(&x, &TsneConfig::default()).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let mut diameter = 0.0f64;
        for a in &r.coords {
            for b in &r.coords {
                diameter = diameter.max(dist(a, b));
            }
        }
        let gap = dist(&r.coords[7], &r.coords[60]);
        assert!(gap < 0.01 * diameter, "{gap} vs {diameter}");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(tsne(&vec![vec![1.0, 2.0]; 20], &TsneConfig::default()).is_err());
        assert!(tsne(&vec![vec![1.0]; 5], &TsneConfig::default()).is_err());
    }
}
