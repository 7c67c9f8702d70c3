use super::{EvalError, Result};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(EvalError::LengthMismatch { left: points.len(), right: labels.len() });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(EvalError::Degenerate("silhouette needs at least two clusters".into()));
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += euclid(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// True when a perceptron with bias reaches zero training error on two
/// classes (labels 0 and non-zero) within `max_epochs` passes.
pub fn perceptron_separable(points: &[Vec<f64>], labels: &[usize], max_epochs: usize) -> bool {
    let d = points.first().map_or(0, Vec::len);
    let mut w = vec![0.0; d + 1];
    for _ in 0..max_epochs {
        let mut errors = 0;
        for (x, &l) in points.iter().zip(labels) {
            let y = if l == 0 { -1.0 } else { 1.0 };
            let act: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            if y * act <= 0.0 {
                errors += 1;
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += y * xi;
                }
                w[d] += y;
            }
        }
        if errors == 0 {
            return true;
        }
    }
    false
}

/// Multinomial logistic regression on standardized features, fit by
/// full-batch gradient descent. Returns accuracy on the fitting data.
pub fn logistic_probe_accuracy(points: &[Vec<f64>], labels: &[usize], epochs: usize) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(EvalError::LengthMismatch { left: points.len(), right: labels.len() });
    }
    let n = points.len();
    let d = points[0].len();
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    for p in points {
        for ((s, v), m) in std.iter_mut().zip(p).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    let x: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s.sqrt().max(1e-12)).collect())
        .collect();
    let mut w = vec![vec![0.0; d + 1]; k];
    let lr = 0.5;
    let mut logits = vec![0.0; k];
    for _ in 0..epochs {
        let mut g = vec![vec![0.0; d + 1]; k];
        for (xi, &yi) in x.iter().zip(labels) {
            for (c, wc) in w.iter().enumerate() {
                logits[c] = wc[d] + xi.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>();
            }
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for c in 0..k {
                let pc = (logits[c] - mx).exp() / z - if c == yi { 1.0 } else { 0.0 };
                for (gj, xj) in g[c].iter_mut().zip(xi) {
                    *gj += pc * xj / n as f64;
                }
                g[c][d] += pc / n as f64;
            }
        }
        for (wc, gc) in w.iter_mut().zip(&g) {
            for (a, b) in wc.iter_mut().zip(gc) {
                *a -= lr * b;
            }
        }
    }
    let correct = x
        .iter()
        .zip(labels)
        .filter(|(xi, &yi)| {
            let scores: Vec<f64> = w.iter().map(|wc| wc[d] + xi.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>()).collect();
            let best = (0..k).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap_or(0);
            best == yi
        })
        .count();
    Ok(correct as f64 / n as f64)
}
