//! Audio substrate: clips, WAV I/O, STFT analysis/synthesis, SNR-controlled
//! mixing, segmental SNR and oracle ratio masking.
//!
//! Everything here is a pure function of its inputs. The pipeline runs at a
//! fixed 16 kHz mono rate; other rates are carried through [`AudioClip`] but
//! rejected by [`AudioClip::require_rate`] where the pipeline needs it.

mod mask;
mod mix;
mod stft;
mod wav;

pub use mask::{apply_mask, ideal_ratio_mask, Mask, MaskDomain, IRM_EPSILON};
pub use mix::{global_snr, mix_at_snr, segmental_snr, MixOutput, SEGSNR_CEIL_DB, SEGSNR_FLOOR_DB};
pub use stft::{istft, stft, Spectrogram, StftParams, Window};
pub use wav::{read_wav, read_wav_bytes, write_wav, write_wav_bytes, SampleFormat};

use thiserror::Error;

/// Sample rate every pipeline stage operates at.
pub const PIPELINE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV codec: format tag {format}, {bits} bits")]
    UnsupportedCodec { format: u16, bits: u16 },
    #[error("WAV payload contains no samples")]
    EmptyPayload,
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("audio clip contains a non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate {got} Hz, expected {expected} Hz")]
    RateMismatch { expected: u32, got: u32 },
    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("clip of {len} samples is shorter than one {fft_size}-sample frame")]
    TooShort { len: usize, fft_size: usize },
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("zero-power input: {0}")]
    ZeroPower(&'static str),
    #[error("noise ({noise} samples) is shorter than speech ({speech} samples)")]
    NoiseTooShort { speech: usize, noise: usize },
    #[error("no segments retained for segmental SNR")]
    NoSegments,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("mask is not in the ratio domain")]
    NotRatioMask,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;

/// Mono audio at a fixed rate. Samples are nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(SignalError::EmptyClip);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        if sample_rate == 0 {
            return Err(SignalError::InvalidParams("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn require_rate(&self, expected: u32) -> Result<()> {
        if self.sample_rate != expected {
            return Err(SignalError::RateMismatch { expected, got: self.sample_rate });
        }
        Ok(())
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

/// Power ratio in dB.
pub fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}
