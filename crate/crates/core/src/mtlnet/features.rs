use serde::{Deserialize, Serialize};

use super::{MtlError, Result};
use crate::signal::{stft, AudioClip, StftParams};

pub const POWER_FLOOR: f64 = 1e-10;
pub const STD_FLOOR: f64 = 1e-6;

/// Per-utterance z-scored log-power spectrogram, `n_frames x n_bins` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub mean: f64,
    pub std: f64,
}

impl FeatureMatrix {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Frames `start..start + len` as a new matrix with the same normalization.
    pub fn crop(&self, start: usize, len: usize) -> FeatureMatrix {
        let end = (start + len).min(self.n_frames);
        FeatureMatrix {
            values: self.values[start * self.n_bins..end * self.n_bins].to_vec(),
            n_frames: end - start,
            n_bins: self.n_bins,
            mean: self.mean,
            std: self.std,
        }
    }

    /// The matrix repeated `times` along the time axis.
    pub fn tiled(&self, times: usize) -> FeatureMatrix {
        FeatureMatrix { values: self.values.repeat(times), n_frames: self.n_frames * times, ..self.clone() }
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Log-power (dB) features before normalization.
pub fn log_power(clip: &AudioClip, params: StftParams) -> Result<(Vec<f64>, usize, usize)> {
    let spec = stft(clip, params)?;
    let (t, f) = spec.shape();
    let values = spec.data().iter().map(|c| 10.0 * (c.norm_sqr() + POWER_FLOOR).log10()).collect();
    Ok((values, t, f))
}

pub fn extract_features(clip: &AudioClip, params: StftParams) -> Result<FeatureMatrix> {
    let (mut values, n_frames, n_bins) = log_power(clip, params)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MtlError::NonFinite("features".into()));
    }
    Ok(FeatureMatrix { values, n_frames, n_bins, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, seed: u64) -> AudioClip {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000).unwrap()
    }

    #[test]
    fn silence_collapses_to_zeros() {
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        let f = extract_features(&clip, StftParams::default()).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert!((f.mean + 100.0).abs() < 1e-9);
        assert_eq!(f.std, STD_FLOOR);
    }

    #[test]
    fn gain_shifts_raw_features_and_cancels_after_normalization() {
        let clip = noise(16000, 5);
        let louder = clip.scaled(2.0);
        let (a, _, _) = log_power(&clip, StftParams::default()).unwrap();
        let (b, _, _) = log_power(&louder, StftParams::default()).unwrap();
        let shift = 20.0 * 2f64.log10();
        // The additive power floor makes the shift inexact in near-empty bins.
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - shift).abs() < 1e-4, "{} vs {}", y - x, shift);
        }
        let fa = extract_features(&clip, StftParams::default()).unwrap();
        let fb = extract_features(&louder, StftParams::default()).unwrap();
        for (x, y) in fa.values.iter().zip(&fb.values) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn three_second_clip_has_188_frames() {
        let f = extract_features(&noise(48000, 1), StftParams::default()).unwrap();
        assert_eq!((f.n_frames, f.n_bins), (188, 257));
    }

    #[test]
    fn too_short_clip_is_rejected() {
        assert!(extract_features(&noise(100, 1), StftParams::default()).is_err());
    }
}
