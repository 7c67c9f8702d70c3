use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioClip, Result, SignalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    PeriodicHann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::PeriodicHann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { fft_size: 512, hop: 256, window: Window::PeriodicHann }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(SignalError::InvalidParams(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.fft_size % self.hop != 0 {
            return Err(SignalError::InvalidParams(format!(
                "hop {} does not divide fft_size {}",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples. Frames are centred, so the
    /// signal is reflect-padded by half a frame on each side.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Complex T x F time-frequency representation, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    params: StftParams,
    sample_rate: u32,
    signal_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Length of the time-domain signal this spectrogram was computed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.n_bins + f]
    }

    pub fn power(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|c| c.norm_sqr())
    }

    #[cfg(test)]
    pub(crate) fn from_raw(data: Vec<Complex64>, n_frames: usize, n_bins: usize) -> Self {
        Self {
            data,
            n_frames,
            n_bins,
            params: StftParams::default(),
            sample_rate: super::PIPELINE_RATE,
            signal_len: 0,
        }
    }

    pub(crate) fn with_data(&self, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { data, ..self.clone() }
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = i;
    // Single reflection suffices because the pad is shorter than the clip.
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

pub fn stft(clip: &AudioClip, params: StftParams) -> Result<Spectrogram> {
    params.validate()?;
    let x = clip.samples();
    if x.len() < params.fft_size {
        return Err(SignalError::TooShort { len: x.len(), fft_size: params.fft_size });
    }
    let n = params.fft_size;
    let pad = n / 2;
    let window = params.window.coefficients(n);
    let n_frames = params.n_frames(x.len());
    let n_bins = params.n_bins();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = (t * params.hop) as isize - pad as isize;
        for (k, slot) in buf.iter_mut().enumerate() {
            let s = x[reflect_index(start + k as isize, x.len())];
            *slot = Complex64::new(s * window[k], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(Spectrogram {
        data,
        n_frames,
        n_bins,
        params,
        sample_rate: clip.sample_rate(),
        signal_len: x.len(),
    })
}

/// Weighted overlap-add inverse, normalised by the summed squared window.
pub fn istft(spec: &Spectrogram) -> Result<AudioClip> {
    let params = spec.params;
    params.validate()?;
    let n = params.fft_size;
    let pad = n / 2;
    let window = params.window.coefficients(n);
    let padded_len = (spec.n_frames - 1) * params.hop + n;
    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.n_frames {
        let frame = spec.frame(t);
        buf[..spec.n_bins].copy_from_slice(frame);
        for k in spec.n_bins..n {
            buf[k] = frame[n - k].conj();
        }
        // DC and Nyquist bins of a real signal are real.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        ifft.process(&mut buf);
        let start = t * params.hop;
        for k in 0..n {
            let w = window[k];
            acc[start + k] += buf[k].re / n as f64 * w;
            norm[start + k] += w * w;
        }
    }
    let samples: Vec<f64> = (0..spec.signal_len)
        .map(|i| {
            let j = i + pad;
            if j < padded_len && norm[j] > 1e-10 {
                acc[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16000).unwrap()
    }

    fn rms_err(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn frame_count_for_three_seconds() {
        let spec = stft(&noise(48000, 1), StftParams::default()).unwrap();
        assert_eq!(spec.shape(), (188, 257));
    }

    #[test]
    fn dc_energy_in_bin_zero() {
        // The Hann main lobe spreads DC into bin 1 at -6 dB; nothing beyond.
        let clip = AudioClip::new(vec![0.5; 4000], 16000).unwrap();
        let spec = stft(&clip, StftParams::default()).unwrap();
        for t in 0..spec.n_frames() {
            let frame = spec.frame(t);
            let total: f64 = frame.iter().map(|c| c.norm_sqr()).sum();
            assert!((frame[0].norm_sqr() / total - 0.8).abs() < 1e-12);
            assert!(frame[2..].iter().all(|c| c.norm_sqr() / total < 1e-24));
        }
    }

    #[test]
    fn bin_centred_sine_has_no_sidelobe_leakage() {
        let bin = 40;
        let clip = AudioClip::new(
            (0..8192)
                .map(|n| (2.0 * PI * bin as f64 * n as f64 / 512.0).sin())
                .collect(),
            16000,
        )
        .unwrap();
        let spec = stft(&clip, StftParams::default()).unwrap();
        let frame = spec.frame(10);
        let peak = frame[bin].norm_sqr();
        let dominant = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .unwrap()
            .0;
        assert_eq!(dominant, bin);
        for (k, c) in frame.iter().enumerate() {
            if k.abs_diff(bin) >= 2 {
                assert!(10.0 * (c.norm_sqr() / peak).log10() <= -60.0, "bin {k}");
            }
        }
    }

    #[test]
    fn round_trip_noise() {
        let clip = noise(16000 * 3 + 77, 3);
        let back = istft(&stft(&clip, StftParams::default()).unwrap()).unwrap();
        assert_eq!(back.len(), clip.len());
        assert!(rms_err(clip.samples(), back.samples()) < 1e-6);
    }

    #[test]
    fn rejects_short_clip_and_bad_params() {
        assert!(matches!(
            stft(&noise(100, 1), StftParams::default()),
            Err(SignalError::TooShort { .. })
        ));
        let bad = StftParams { fft_size: 500, hop: 250, ..Default::default() };
        assert!(stft(&noise(1000, 1), bad).is_err());
        let bad_hop = StftParams { fft_size: 512, hop: 200, ..Default::default() };
        assert!(stft(&noise(1000, 1), bad_hop).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_any_length(len in 512usize..6000, seed in 0u64..1000, hop_div in 0usize..3) {
            let params = StftParams { hop: 512 >> (hop_div + 1), ..Default::default() };
            let clip = noise(len, seed);
            let back = istft(&stft(&clip, params).unwrap()).unwrap();
            proptest::prop_assert!(rms_err(clip.samples(), back.samples()) < 1e-6);
        }
    }
}
