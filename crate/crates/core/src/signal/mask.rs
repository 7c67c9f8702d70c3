use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Result, SignalError, Spectrogram};

/// Power floor in the ratio-mask denominator.
pub const IRM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "domain")]
pub enum MaskDomain {
    /// Values in [0, 1].
    Ratio,
    /// Values in [floor, 1] after floor scaling.
    Scaled { floor: f64 },
}

/// Real-valued T x F gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
    domain: MaskDomain,
}

impl Mask {
    pub fn new(values: Vec<f64>, n_frames: usize, n_bins: usize, domain: MaskDomain) -> Result<Self> {
        if values.len() != n_frames * n_bins {
            return Err(SignalError::ShapeMismatch((n_frames, n_bins), (values.len(), 1)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { values, n_frames, n_bins, domain })
    }

    pub fn filled(value: f64, n_frames: usize, n_bins: usize, domain: MaskDomain) -> Self {
        Self { values: vec![value; n_frames * n_bins], n_frames, n_bins, domain }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn domain(&self) -> MaskDomain {
        self.domain
    }

    pub fn is_ratio(&self) -> bool {
        self.domain == MaskDomain::Ratio
    }
}

/// Square-root Wiener style oracle mask `(|S|^2 / (|S|^2 + |N|^2 + eps))^0.5`.
pub fn ideal_ratio_mask(clean: &Spectrogram, noise: &Spectrogram) -> Result<Mask> {
    if clean.shape() != noise.shape() {
        return Err(SignalError::ShapeMismatch(clean.shape(), noise.shape()));
    }
    let values = clean
        .data()
        .iter()
        .zip(noise.data())
        .map(|(s, n)| {
            let ps = s.norm_sqr();
            (ps / (ps + n.norm_sqr() + IRM_EPSILON)).sqrt()
        })
        .collect();
    let (t, f) = clean.shape();
    Ok(Mask { values, n_frames: t, n_bins: f, domain: MaskDomain::Ratio })
}

/// Multiplies each cell by the real mask, keeping the mixture phase.
pub fn apply_mask(mixture: &Spectrogram, mask: &Mask) -> Result<Spectrogram> {
    if mixture.shape() != mask.shape() {
        return Err(SignalError::ShapeMismatch(mixture.shape(), mask.shape()));
    }
    let data: Vec<Complex64> = mixture
        .data()
        .iter()
        .zip(&mask.values)
        .map(|(c, m)| c * *m)
        .collect();
    Ok(mixture.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{istft, mix_at_snr, segmental_snr, stft, AudioClip, StftParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new((0..len).map(|_| StandardNormal.sample(&mut rng)).collect(), 16000).unwrap()
    }

    fn spec(clip: &AudioClip) -> Spectrogram {
        stft(clip, StftParams::default()).unwrap()
    }

    #[test]
    fn limiting_cases() {
        let s = spec(&gaussian(4096, 1));
        let zero = spec(&AudioClip::new(vec![0.0; 4096], 16000).unwrap());
        let m = ideal_ratio_mask(&s, &zero).unwrap();
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
        let m = ideal_ratio_mask(&zero, &s).unwrap();
        assert!(m.values().iter().all(|v| v.abs() < 1e-5));
        let m = ideal_ratio_mask(&s, &s).unwrap();
        assert!(m.values().iter().all(|v| (v - 0.5f64.sqrt()).abs() < 1e-6));
        assert!(m.is_ratio());
    }

    #[test]
    fn shape_mismatch() {
        let a = spec(&gaussian(4096, 1));
        let b = spec(&gaussian(2048, 2));
        assert!(ideal_ratio_mask(&a, &b).is_err());
        let m = Mask::filled(1.0, 3, 3, MaskDomain::Ratio);
        assert!(apply_mask(&a, &m).is_err());
    }

    #[test]
    fn unit_and_zero_masks() {
        let clip = gaussian(4096, 3);
        let s = spec(&clip);
        let (t, f) = s.shape();
        let ones = Mask::filled(1.0, t, f, MaskDomain::Ratio);
        assert_eq!(apply_mask(&s, &ones).unwrap(), s);
        let zeros = Mask::filled(0.0, t, f, MaskDomain::Ratio);
        let silent = istft(&apply_mask(&s, &zeros).unwrap()).unwrap();
        assert!(silent.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_mask_improves_segsnr() {
        for (seed, snr) in [(10u64, -9.0), (11, -3.0), (12, 0.0), (13, 3.0), (14, 9.0)] {
            let clean = gaussian(48000, seed);
            let noise = gaussian(48000, seed + 100);
            let mix = mix_at_snr(&clean, &noise, snr).unwrap();
            let mask = ideal_ratio_mask(&spec(&clean), &spec(&mix.scaled_noise)).unwrap();
            let enhanced = istft(&apply_mask(&spec(&mix.mixture), &mask).unwrap()).unwrap();
            let before = segmental_snr(&clean, &mix.mixture, 16.0).unwrap();
            let after = segmental_snr(&clean, &enhanced, 16.0).unwrap();
            assert!(after > before, "snr {snr}: {before} -> {after}");
        }
    }

    proptest::proptest! {
        #[test]
        fn mask_bounded_and_monotone(s in 0.0f64..10.0, ds in 0.0f64..10.0, n in 0.0f64..10.0) {
            let cell = |x: f64| Complex64::new(x.sqrt(), 0.0);
            let clean = Spectrogram::from_raw(vec![cell(s), cell(s + ds)], 1, 2);
            let noise = Spectrogram::from_raw(vec![cell(n), cell(n)], 1, 2);
            let m = ideal_ratio_mask(&clean, &noise).unwrap();
            let (lo, hi) = (m.values()[0], m.values()[1]);
            proptest::prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            proptest::prop_assert!(hi >= lo);
        }
    }
}
