//! Small filter and noise primitives used by the surrogate generators.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Direct-form I biquad (RBJ cookbook coefficients).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    fn from_coeffs(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    pub fn lowpass(cutoff: f64, q: f64, rate: f64) -> Self {
        let w = 2.0 * PI * cutoff / rate;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Self::from_coeffs(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    pub fn highpass(cutoff: f64, q: f64, rate: f64) -> Self {
        let w = 2.0 * PI * cutoff / rate;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Self::from_coeffs(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    /// Constant 0 dB peak gain band-pass.
    pub fn bandpass(centre: f64, q: f64, rate: f64) -> Self {
        let w = 2.0 * PI * centre / rate;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Self::from_coeffs([alpha, 0.0, -alpha], [1.0 + alpha, -2.0 * c, 1.0 - alpha])
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b1 * self.x1 + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }

    pub fn run(mut self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = self.process(*v);
        }
    }
}

/// Fourth-order Butterworth low-pass as two cascaded sections.
pub(crate) fn butter4_lowpass(x: &mut [f64], cutoff: f64, rate: f64) {
    Biquad::lowpass(cutoff, 0.541_196_1, rate).run(x);
    Biquad::lowpass(cutoff, 1.306_563, rate).run(x);
}

pub(crate) fn butter4_highpass(x: &mut [f64], cutoff: f64, rate: f64) {
    Biquad::highpass(cutoff, 0.541_196_1, rate).run(x);
    Biquad::highpass(cutoff, 1.306_563, rate).run(x);
}

pub(crate) fn white<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// 1/f noise via Paul Kellet's refined pinking filter.
pub(crate) fn pink<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

pub(crate) fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

pub(crate) fn normalize_rms(x: &mut [f64], target: f64) {
    let r = rms(x);
    if r > 0.0 {
        let g = target / r;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

pub(crate) fn add_scaled(dst: &mut [f64], src: &[f64], gain: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += gain * s;
    }
}

/// Two-pole resonator with unity gain at its centre frequency.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    #[inline]
    pub fn process(&mut self, x: f64, freq: f64, bandwidth: f64, rate: f64) -> f64 {
        let r = (-PI * bandwidth / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        // Approximate peak normalisation.
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        let y = gain * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}
