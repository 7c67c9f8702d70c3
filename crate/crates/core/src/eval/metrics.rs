use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < min {
        return Err(EvalError::TooFew { needed: min, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

/// Pearson linear correlation coefficient.
pub fn lcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    lcc(&average_ranks(x), &average_ranks(y))
}

pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 1)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub lcc: f64,
    pub srcc: f64,
    pub mse: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(predicted: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self { lcc: lcc(predicted, truth)?, srcc: srcc(predicted, truth)?, mse: mse(predicted, truth)?, n: predicted.len() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_hand_computed_values() {
        let x = [1.0, 2.0, 3.0, 4.5];
        assert!((lcc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        let r = lcc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
        // sxy = 5, sxx = 2, syy = 38/3
        assert!((r - 5.0 / (2.0f64 * 38.0 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r - 0.9933992677987828).abs() < 1e-12);
        assert!((mse(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap() - 7.0).abs() < 1e-15);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((srcc(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(matches!(lcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(EvalError::ZeroVariance)));
        assert!(matches!(srcc(&[1.0], &[1.0]), Err(EvalError::TooFew { .. })));
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(mse(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn srcc_is_invariant_to_monotone_maps(xs in prop::collection::vec(-100.0f64..100.0, 3..40), ys in prop::collection::vec(-100.0f64..100.0, 40)) {
            let ys = &ys[..xs.len()];
            if let Ok(base) = srcc(&xs, ys) {
                let tx: Vec<f64> = xs.iter().map(|v| (v / 30.0).exp()).collect();
                let ty: Vec<f64> = ys.iter().map(|v| v * v * v + 2.0 * v).collect();
                prop_assert!((srcc(&tx, &ty).unwrap() - base).abs() < 1e-9);
                prop_assert!((srcc(ys, &xs).unwrap() - base).abs() < 1e-12);
                prop_assert!((lcc(ys, &xs).unwrap() - lcc(&xs, ys).unwrap()).abs() < 1e-12);
            }
        }
    }
}
