use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_grads, ModelConfig, Network, TaskMode};
use super::Result;

/// Largest elementwise disagreement between reverse-mode and
/// central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

pub const GRADCHECK_FRAMES: usize = 4;
pub const GRADCHECK_DENOM_FLOOR: f64 = 1e-6;

fn total_loss(net: &Network<f64>, x: &[f64], steps: usize, snr: f64, scene: usize) -> Result<f64> {
    let (out, _) = net.forward(x, steps)?;
    Ok(loss_and_grads(&out, net.mode, snr, scene, 1.0, 1.0).0.total)
}

/// Compares every parameter gradient of a multi-task network in `f64`
/// against central finite differences with step `1e-5 * max(1, |theta|)`.
pub fn check_gradients(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let mut net = Network::<f64>::new(config.clone(), TaskMode::Multi, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    // Perturb the zero-initialised biases and norm parameters so every path is exercised.
    for t in net.params_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let steps = GRADCHECK_FRAMES;
    let x: Vec<f64> = (0..steps * config.n_bins).map(|_| rng.random_range(-1.5..1.5)).collect();
    let scene = rng.random_range(0..config.asc_classes);
    let (out, cache) = net.forward(&x, steps)?;
    // A target near the current output keeps |loss| small, which keeps the
    // round-off of the difference quotient small.
    let snr = out.snr_hat.unwrap_or(0.0) + rng.random_range(-1.0..1.0);

    let mut grad = net.zeros_like();
    let (_, og) = loss_and_grads(&out, net.mode, snr, scene, 1.0, 1.0);
    net.backward(&cache, &og, &mut grad);
    let analytic: Vec<(String, Vec<f64>)> = grad.params().into_iter().map(|(n, t)| (n, t.data.clone())).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for (pi, (name, ana)) in analytic.iter().enumerate() {
        for (j, &a) in ana.iter().enumerate() {
            let orig = net.params()[pi].1.data[j];
            let h = 1e-5 * orig.abs().max(1.0);
            net.params_mut()[pi].data[j] = orig + h;
            let lp = total_loss(&net, &x, steps, snr, scene)?;
            net.params_mut()[pi].data[j] = orig - h;
            let lm = total_loss(&net, &x, steps, snr, scene)?;
            net.params_mut()[pi].data[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_DENOM_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{name}[{j}]");
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_network_passes_gradient_check() {
        let r = check_gradients(&ModelConfig::tiny(), 7).unwrap();
        eprintln!("{r:?}");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
