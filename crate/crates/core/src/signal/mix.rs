use super::{db, mean_power, AudioClip, Result, SignalError};

/// Per-segment SNR clamp applied before averaging.
pub const SEGSNR_FLOOR_DB: f64 = -10.0;
pub const SEGSNR_CEIL_DB: f64 = 35.0;

#[derive(Debug, Clone)]
pub struct MixOutput {
    pub mixture: AudioClip,
    pub scaled_noise: AudioClip,
    /// Gain applied to the (truncated) noise.
    pub gain: f64,
}

/// Scales `noise` so that the global speech-to-noise power ratio equals
/// `target_snr_db`, then adds it to `speech`. Noise is truncated to the
/// speech length.
pub fn mix_at_snr(speech: &AudioClip, noise: &AudioClip, target_snr_db: f64) -> Result<MixOutput> {
    speech.require_rate(noise.sample_rate())?;
    if noise.len() < speech.len() {
        return Err(SignalError::NoiseTooShort { speech: speech.len(), noise: noise.len() });
    }
    let noise = noise.truncated(speech.len());
    let ps = speech.power();
    let pn = noise.power();
    if ps <= 0.0 {
        return Err(SignalError::ZeroPower("speech"));
    }
    if pn <= 0.0 {
        return Err(SignalError::ZeroPower("noise"));
    }
    let gain = (ps / (pn * 10f64.powf(target_snr_db / 10.0))).sqrt();
    let scaled_noise = noise.scaled(gain);
    let mixture: Vec<f64> = speech
        .samples()
        .iter()
        .zip(scaled_noise.samples())
        .map(|(s, n)| s + n)
        .collect();
    Ok(MixOutput {
        mixture: AudioClip::new(mixture, speech.sample_rate())?,
        scaled_noise,
        gain,
    })
}

/// Mean of per-segment SNRs over non-overlapping `seg_ms` segments. Each
/// segment SNR is clamped to [`SEGSNR_FLOOR_DB`, `SEGSNR_CEIL_DB`]; segments
/// with no clean energy are skipped and a trailing partial segment is dropped.
pub fn segmental_snr(clean: &AudioClip, processed: &AudioClip, seg_ms: f64) -> Result<f64> {
    clean.require_rate(processed.sample_rate())?;
    if clean.len() != processed.len() {
        return Err(SignalError::LengthMismatch(clean.len(), processed.len()));
    }
    let seg_len = (seg_ms * clean.sample_rate() as f64 / 1000.0).round() as usize;
    if seg_len == 0 {
        return Err(SignalError::InvalidParams(format!("segment length {seg_ms} ms")));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (s, p) in clean
        .samples()
        .chunks_exact(seg_len)
        .zip(processed.samples().chunks_exact(seg_len))
    {
        let signal: f64 = s.iter().map(|x| x * x).sum();
        if signal == 0.0 {
            continue;
        }
        let error: f64 = s.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = if error == 0.0 { SEGSNR_CEIL_DB } else { db(signal / error) };
        sum += snr.clamp(SEGSNR_FLOOR_DB, SEGSNR_CEIL_DB);
        count += 1;
    }
    if count == 0 {
        return Err(SignalError::NoSegments);
    }
    Ok(sum / count as f64)
}

/// Global SNR of `speech` against `noise` in dB.
pub fn global_snr(speech: &AudioClip, noise: &AudioClip) -> f64 {
    db(mean_power(speech.samples()) / mean_power(noise.samples()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Exactly unit power.
        let p = mean_power(&x).sqrt();
        AudioClip::new(x.iter().map(|v| v / p).collect(), 16000).unwrap()
    }

    #[test]
    fn gain_closed_form() {
        let s = gaussian(16000, 1);
        let n = gaussian(16000, 2);
        let out = mix_at_snr(&s, &n, 0.0).unwrap();
        assert!((out.gain - 1.0).abs() < 1e-12);
        let out = mix_at_snr(&s, &n, 10.0 * 4f64.log10()).unwrap();
        assert!((out.gain - 0.5).abs() < 1e-12);
        let out = mix_at_snr(&s, &n, -9.0).unwrap();
        assert!((out.gain - 10f64.powf(0.45)).abs() < 1e-12);
        assert!((out.gain - 2.8184).abs() < 1e-4);
        assert!((global_snr(&s, &out.scaled_noise) + 9.0).abs() < 1e-10);
    }

    #[test]
    fn mix_errors() {
        let s = gaussian(1000, 1);
        let zero = AudioClip::new(vec![0.0; 1000], 16000).unwrap();
        assert!(matches!(mix_at_snr(&zero, &s, 0.0), Err(SignalError::ZeroPower(_))));
        assert!(matches!(mix_at_snr(&s, &zero, 0.0), Err(SignalError::ZeroPower(_))));
        assert!(matches!(
            mix_at_snr(&s, &s.truncated(10), 0.0),
            Err(SignalError::NoiseTooShort { .. })
        ));
        let other_rate = AudioClip::new(vec![0.1; 1000], 8000).unwrap();
        assert!(matches!(
            mix_at_snr(&s, &other_rate, 0.0),
            Err(SignalError::RateMismatch { .. })
        ));
    }

    #[test]
    fn identical_signals_hit_ceiling() {
        let s = gaussian(16000, 3);
        assert_eq!(segmental_snr(&s, &s, 16.0).unwrap(), SEGSNR_CEIL_DB);
    }

    #[test]
    fn negated_signal_is_minus_six_db() {
        let s = gaussian(16000, 4);
        let neg = s.scaled(-1.0);
        let expected = db(0.25);
        assert!((segmental_snr(&s, &neg, 16.0).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn stationary_zero_db_mixture() {
        let s = gaussian(48000, 5);
        let n = gaussian(48000, 6);
        let out = mix_at_snr(&s, &n, 0.0).unwrap();
        let seg = segmental_snr(&s, &out.mixture, 16.0).unwrap();
        assert!(seg.abs() <= 1.0, "segsnr {seg}");
    }

    #[test]
    fn silent_segments_skipped_and_errors() {
        let mut x = vec![0.0; 512];
        x.extend(gaussian(256, 7).samples());
        let clean = AudioClip::new(x, 16000).unwrap();
        let processed = clean.scaled(0.5);
        // Only the last segment has energy: 10log10(1/0.25).
        let v = segmental_snr(&clean, &processed, 16.0).unwrap();
        assert!((v - db(4.0)).abs() < 1e-9);

        let silent = AudioClip::new(vec![0.0; 1024], 16000).unwrap();
        assert!(matches!(
            segmental_snr(&silent, &silent, 16.0),
            Err(SignalError::NoSegments)
        ));
        let short = AudioClip::new(vec![0.1; 100], 16000).unwrap();
        assert!(matches!(
            segmental_snr(&short, &short, 16.0),
            Err(SignalError::NoSegments)
        ));
        assert!(matches!(
            segmental_snr(&clean, &silent, 16.0),
            Err(SignalError::LengthMismatch(..))
        ));
    }

    proptest::proptest! {
        #[test]
        fn segsnr_invariant_to_common_gain(seed in 0u64..500, alpha in 0.01f64..50.0) {
            let s = gaussian(4096, seed);
            let n = gaussian(4096, seed + 1000).scaled(0.7);
            let mix = mix_at_snr(&s, &n, 3.0).unwrap().mixture;
            let a = segmental_snr(&s, &mix, 16.0).unwrap();
            let b = segmental_snr(&s.scaled(alpha), &mix.scaled(alpha), 16.0).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn mix_hits_target(seed in 0u64..500, target in -20.0f64..20.0) {
            let s = gaussian(2048, seed);
            let n = gaussian(3000, seed + 7).scaled(0.3);
            let out = mix_at_snr(&s, &n, target).unwrap();
            proptest::prop_assert!((global_snr(&s, &out.scaled_noise) - target).abs() < 1e-9);
        }
    }
}
