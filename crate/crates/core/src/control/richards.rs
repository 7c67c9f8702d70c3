use serde::{Deserialize, Serialize};

use super::{ControlError, Result};
use crate::signal::{Mask, MaskDomain};

/// Clipping applied to ratio-mask values before the logit.
pub const LOGIT_CLIP: f64 = 1e-7;

/// Generalised logistic `m = A + (K - A) / (C + Q e^{-B z})^{1/v}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsParams {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub v: f64,
}

impl Default for RichardsParams {
    fn default() -> Self {
        Self { a: 0.0, k: 1.0, c: 1.0, q: 1.0, b: 1.0, v: 1.0 }
    }
}

impl RichardsParams {
    pub fn with_floor(a: f64) -> Self {
        Self { a, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.k, self.c, self.q, self.b, self.v];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(ControlError::InvalidParams("parameters must be finite".into()));
        }
        if self.k < self.a {
            return Err(ControlError::InvalidParams("upper asymptote K must be at least A".into()));
        }
        if self.v <= 0.0 {
            return Err(ControlError::InvalidParams("shape exponent v must be positive".into()));
        }
        if self.c <= 0.0 || self.q < 0.0 {
            return Err(ControlError::InvalidParams("need C > 0 and Q >= 0".into()));
        }
        Ok(())
    }
}

pub fn richards(z: f64, p: &RichardsParams) -> Result<f64> {
    if !z.is_finite() {
        return Err(ControlError::NonFinite);
    }
    p.validate()?;
    Ok(eval(z, p))
}

#[inline]
fn eval(z: f64, p: &RichardsParams) -> f64 {
    let denom = (p.c + p.q * (-p.b * z).exp()).powf(1.0 / p.v);
    p.a + (p.k - p.a) / denom
}

/// Lifts a ratio mask to the floor `a`: each value goes through a clipped
/// logit and then the default Richards curve with lower asymptote `a`.
pub fn scale_mask(mask: &Mask, a: f64) -> Result<Mask> {
    if !mask.is_ratio() {
        return Err(ControlError::NotRatioMask);
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(ControlError::FloorOutOfRange(a));
    }
    let p = RichardsParams::with_floor(a);
    let values = mask
        .values()
        .iter()
        .map(|&m| {
            let m = m.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
            eval((m / (1.0 - m)).ln(), &p).clamp(a, 1.0)
        })
        .collect();
    let (t, f) = mask.shape();
    Ok(Mask::new(values, t, f, MaskDomain::Scaled { floor: a })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn closed_form_points() {
        let d = RichardsParams::default();
        assert_eq!(richards(0.0, &d).unwrap(), 0.5);
        let flat = RichardsParams::with_floor(1.0);
        assert_eq!(richards(-3.0, &flat).unwrap(), 1.0);
        let p = RichardsParams::with_floor(0.3);
        assert!((richards(40.0, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((richards(-40.0, &p).unwrap() - 0.3).abs() < 1e-12);
        assert!(richards(f64::NAN, &d).is_err());
        assert!(richards(0.0, &RichardsParams { v: 0.0, ..d }).is_err());
        assert!(richards(0.0, &RichardsParams { a: 0.9, k: 0.5, ..d }).is_err());
    }

    #[test]
    fn default_curve_is_the_logistic_sigmoid() {
        let d = RichardsParams::default();
        for i in 0..=8000 {
            let z = -40.0 + i as f64 * 0.01;
            assert!((richards(z, &d).unwrap() - sigmoid(z)).abs() <= 1e-12);
        }
    }

    #[test]
    fn scale_mask_examples() {
        let m = Mask::new(vec![0.5, 0.0, 1.0, 0.2], 2, 2, MaskDomain::Ratio).unwrap();
        let s = scale_mask(&m, 0.4).unwrap();
        assert!((s.values()[0] - 0.7).abs() < 1e-12);
        assert_eq!(s.domain(), MaskDomain::Scaled { floor: 0.4 });
        let id = scale_mask(&m, 0.0).unwrap();
        for (a, b) in id.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(scale_mask(&m, 1.0).unwrap().values().iter().all(|&v| v == 1.0));
        assert!(matches!(scale_mask(&s, 0.1), Err(ControlError::NotRatioMask)));
        assert!(matches!(scale_mask(&m, 1.5), Err(ControlError::FloorOutOfRange(_))));
    }

    proptest! {
        #[test]
        fn monotone_in_z(a in 0.0f64..1.0, dk in 0.0f64..2.0, c in 0.1f64..3.0, q in 0.0f64..3.0,
                         b in 0.0f64..3.0, v in 0.1f64..4.0, z1 in -30.0f64..30.0, dz in 0.0f64..10.0) {
            let p = RichardsParams { a, k: a + dk, c, q, b, v };
            prop_assert!(richards(z1 + dz, &p).unwrap() >= richards(z1, &p).unwrap() - 1e-12);
        }

        #[test]
        fn scaled_mask_is_affine_and_bounded(vals in prop::collection::vec(0.0f64..=1.0, 1..64), a in 0.0f64..=1.0) {
            let n = vals.len();
            let m = Mask::new(vals.clone(), 1, n, MaskDomain::Ratio).unwrap();
            let s = scale_mask(&m, a).unwrap();
            for (out, raw) in s.values().iter().zip(&vals) {
                prop_assert!(*out >= a - 1e-9 && *out <= 1.0 + 1e-9);
                prop_assert!((out - (a + (1.0 - a) * raw)).abs() < 1e-6);
            }
        }
    }
}
