//! Seeded procedural surrogates for scene noise and speech.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::dsp::{
    add_scaled, butter4_highpass, butter4_lowpass, normalize_rms, pink, white, Biquad, Resonator,
};
use super::{Result, SceneError, SceneLabel};
use crate::signal::{AudioClip, PIPELINE_RATE};

/// RMS level of generated noise before mixing.
pub const NOISE_RMS: f64 = 0.05;
/// RMS level of generated speech.
pub const SPEECH_RMS: f64 = 0.05;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_count(duration_s: f64) -> Result<usize> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SceneError::InvalidDuration(duration_s));
    }
    Ok((duration_s * PIPELINE_RATE as f64).round() as usize)
}

fn db_gain<R: Rng>(rng: &mut R, spread_db: f64) -> f64 {
    10f64.powf(rng.random_range(-spread_db..spread_db) / 20.0)
}

pub fn synth_noise(scene: SceneLabel, duration_s: f64, seed: u64) -> Result<AudioClip> {
    let len = sample_count(duration_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (0xA5A5_0000 + scene.index() as u64)));
    let mut out = match scene {
        SceneLabel::Bus => bus(&mut rng, len),
        SceneLabel::Cafe => babble(&mut rng, len),
        SceneLabel::Pedestrian => pedestrian(&mut rng, len),
        SceneLabel::Street => street(&mut rng, len),
    };
    normalize_rms(&mut out, NOISE_RMS);
    Ok(AudioClip::new(out, PIPELINE_RATE)?)
}

fn unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    normalize_rms(&mut x, 1.0);
    x
}

/// Engine drone: two low sinusoids, low-passed rumble, a little broadband rattle.
fn bus<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let rate = PIPELINE_RATE as f64;
    let tones: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(45.0..90.0),
                rng.random_range(0.7..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let wobble_hz = rng.random_range(0.2..0.5);
    let mut drone: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            let wobble = 1.0 + 0.1 * (2.0 * PI * wobble_hz * t).sin();
            wobble * tones.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>()
        })
        .collect();
    normalize_rms(&mut drone, 1.0);

    let mut rumble = white(rng, len);
    butter4_lowpass(&mut rumble, 250.0, rate);
    let rumble = unit_rms(rumble);

    let rattle = unit_rms(pink(rng, len));

    let mut out = drone;
    add_scaled(&mut out, &rumble, db_gain(rng, 1.5));
    add_scaled(&mut out, &rattle, 0.35 * db_gain(rng, 1.5));
    out
}

/// Speech-band pink noise with syllabic-rate amplitude modulation.
fn babble<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let rate = PIPELINE_RATE as f64;
    let mut x = pink(rng, len);
    butter4_highpass(&mut x, 300.0, rate);
    butter4_lowpass(&mut x, 3000.0, rate);
    let fm = rng.random_range(3.6..4.4);
    let phase = rng.random_range(0.0..2.0 * PI);
    let depth = rng.random_range(0.5..0.65);
    for (n, v) in x.iter_mut().enumerate() {
        *v *= 1.0 + depth * (2.0 * PI * fm * n as f64 / rate + phase).sin();
    }
    let mut x = unit_rms(x);
    // Faint broadband floor (room tone).
    let floor = unit_rms(pink(rng, len));
    add_scaled(&mut x, &floor, 0.03);
    x
}

/// Pink background, jittered 2 Hz footsteps and faint babble.
fn pedestrian<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let rate = PIPELINE_RATE as f64;
    let mut out = unit_rms(pink(rng, len));

    let mut steps = vec![0.0; len];
    let jitter = Normal::new(0.0, 0.03).unwrap();
    let mut t = rng.random_range(0.0..0.5);
    while t < len as f64 / rate {
        let at = ((t + jitter.sample(rng)).max(0.0) * rate) as usize;
        if at < len {
            steps[at] += rng.random_range(0.8..1.2);
        }
        t += 0.5;
    }
    let thump_hz = rng.random_range(90.0..160.0);
    let mut body = Biquad::bandpass(thump_hz, 2.0, rate);
    let mut click = Biquad::bandpass(rng.random_range(1500.0..2500.0), 1.0, rate);
    let steps: Vec<f64> = steps.iter().map(|&x| body.process(x) + 0.3 * click.process(x)).collect();
    let steps = unit_rms(steps);
    add_scaled(&mut out, &steps, 0.5 * db_gain(rng, 1.5));

    let chatter = babble(rng, len);
    add_scaled(&mut out, &chatter, 0.6 * db_gain(rng, 1.5));
    out
}

/// Broadband pink traffic bed, low rumble and sparse Poisson bursts.
fn street<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let rate = PIPELINE_RATE as f64;
    let mut out = unit_rms(pink(rng, len));

    let mut rumble = white(rng, len);
    butter4_lowpass(&mut rumble, 150.0, rate);
    let rumble = unit_rms(rumble);
    add_scaled(&mut out, &rumble, 0.8 * db_gain(rng, 1.5));

    let duration = len as f64 / rate;
    let count = Poisson::new(0.5 * duration).unwrap().sample(rng) as usize;
    for _ in 0..count {
        let start = rng.random_range(0..len);
        let burst_len = (rng.random_range(0.08..0.25) * rate) as usize;
        let decay = rng.random_range(0.03..0.08) * rate;
        let mut bp = Biquad::bandpass(rng.random_range(800.0..2500.0), 1.0, rate);
        let raw = white(rng, burst_len);
        let gain = rng.random_range(1.0..2.0);
        for (k, w) in raw.iter().enumerate() {
            let n = start + k;
            if n >= len {
                break;
            }
            out[n] += gain * (-(k as f64) / decay).exp() * bp.process(*w) * 2.0;
        }
    }
    out
}

/// Speech surrogate and its per-sample voicing labels.
#[derive(Debug, Clone)]
pub struct SpeechSurrogate {
    pub clip: AudioClip,
    pub voiced: Vec<bool>,
    pub f0_hz: f64,
}

const VOWELS: [[f64; 3]; 7] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 2500.0],
    [570.0, 840.0, 2410.0],
];

pub fn synth_speech(duration_s: f64, speaker_seed: u64) -> Result<AudioClip> {
    Ok(synth_speech_labeled(duration_s, speaker_seed)?.clip)
}

/// Harmonic pulse train through three moving formant resonators, alternating
/// with fricative noise at a syllabic rate.
pub fn synth_speech_labeled(duration_s: f64, speaker_seed: u64) -> Result<SpeechSurrogate> {
    let len = sample_count(duration_s)?;
    let rate = PIPELINE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(speaker_seed ^ 0x5EEC_0000));
    let f0 = rng.random_range(100.0..220.0);
    let vibrato_hz = rng.random_range(0.5..1.0);

    // Segment plan: (start, end, voiced, vowel, level).
    let mut segments = Vec::new();
    let mut pos = 0usize;
    let mut voiced = rng.random_bool(0.5);
    while pos < len {
        let dur = if voiced { rng.random_range(0.14..0.26) } else { rng.random_range(0.05..0.10) };
        let end = (pos + (dur * rate) as usize).min(len);
        segments.push((pos, end, voiced, rng.random_range(0..VOWELS.len()), rng.random_range(0.85..1.0)));
        pos = end;
        voiced = !voiced;
    }

    let fade = (0.015 * rate) as usize;
    let mut envelope = vec![0.0; len];
    let mut labels = vec![false; len];
    let mut targets = vec![VOWELS[0]; len];
    for &(start, end, is_voiced, vowel, level) in &segments {
        let n = end - start;
        for k in 0..n {
            let ramp_in = ((k as f64 + 0.5) / fade as f64).min(1.0);
            let ramp_out = ((n - k) as f64 / fade as f64).min(1.0);
            let shape = (0.5 - 0.5 * (PI * ramp_in.min(ramp_out)).cos()).max(0.0);
            // Floor keeps the envelope from reaching digital silence at joins.
            envelope[start + k] = level * (0.5 + 0.5 * shape);
            labels[start + k] = is_voiced;
            targets[start + k] = VOWELS[vowel];
        }
    }

    let mut voiced_stream = vec![0.0; len];
    let mut phase = 0.0;
    let mut tilt = 0.0;
    let mut formants = VOWELS[0];
    let mut resonators = [Resonator::default(); 3];
    let bandwidths = [110.0, 130.0, 160.0];
    let smooth = 1.0 - (-1.0 / (0.03 * rate)).exp();
    for n in 0..len {
        let t = n as f64 / rate;
        let pitch = f0 * (1.0 + 0.06 * (2.0 * PI * vibrato_hz * t).sin()) * (1.0 - 0.05 * t / duration_s);
        phase += pitch / rate;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        tilt = 0.9 * tilt + pulse;
        for (f, target) in formants.iter_mut().zip(targets[n]) {
            *f += smooth * (target - *f);
        }
        let mut y = tilt;
        for ((r, f), bw) in resonators.iter_mut().zip(formants).zip(bandwidths) {
            y = r.process(y, f, bw, rate);
        }
        voiced_stream[n] = y;
    }

    let mut frication = white(&mut rng, len);
    Biquad::bandpass(rng.random_range(3500.0..5500.0), 1.5, rate).run(&mut frication);
    butter4_highpass(&mut frication, 2000.0, rate);

    let voiced_rms = masked_rms(&voiced_stream, &labels, true);
    let unvoiced_rms = masked_rms(&frication, &labels, false);
    let samples: Vec<f64> = (0..len)
        .map(|n| {
            let v = voiced_stream[n] / voiced_rms;
            let u = 0.7 * frication[n] / unvoiced_rms;
            envelope[n] * if labels[n] { v } else { u }
        })
        .collect();
    let mut samples = samples;
    normalize_rms(&mut samples, SPEECH_RMS);
    Ok(SpeechSurrogate { clip: AudioClip::new(samples, PIPELINE_RATE)?, voiced: labels, f0_hz: f0 })
}

fn masked_rms(x: &[f64], labels: &[bool], want: bool) -> f64 {
    let (sum, count) = x
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == want)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v * v, c + 1));
    if count == 0 || sum == 0.0 {
        1.0
    } else {
        (sum / count as f64).sqrt()
    }
}
