use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Training-time perturbations, applied in the order shift, inversion, noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub noise: bool,
    pub noise_sigma: f64,
    pub shift: bool,
    pub max_shift_samples: usize,
    pub inversion: bool,
    pub inversion_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            noise: true,
            noise_sigma: 0.01,
            shift: true,
            max_shift_samples: 12,
            inversion: true,
            inversion_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self, window: usize) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("augment.noise_sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.inversion_probability) {
            return Err(Error::config("augment.inversion_probability", "must lie in [0, 1]"));
        }
        if self.max_shift_samples >= window {
            return Err(Error::config(
                "augment.max_shift_samples",
                format!("must be below the window length {window}"),
            ));
        }
        Ok(())
    }
}

/// Shifts every channel of `[C, T]` by `shift` samples (positive moves data
/// later in time), zero-filling the vacated edge.
pub fn shift_segment(segment: &Tensor, shift: i64) -> Tensor {
    let len = *segment.shape().last().unwrap();
    let mut out = Tensor::zeros(segment.shape()).expect("shape of an existing tensor");
    let s = shift.unsigned_abs() as usize;
    if s >= len {
        return out;
    }
    for (src, dst) in segment.data().chunks(len).zip(out.data_mut().chunks_mut(len)) {
        if shift >= 0 {
            dst[s..].copy_from_slice(&src[..len - s]);
        } else {
            dst[..len - s].copy_from_slice(&src[s..]);
        }
    }
    out
}

/// One stochastic augmentation draw. Disabled components consume no
/// randomness.
pub fn augment(segment: &Tensor, cfg: &AugmentConfig, rng: &mut RngStream) -> Tensor {
    if !cfg.enabled {
        return segment.clone();
    }
    let mut out = if cfg.shift && cfg.max_shift_samples > 0 {
        let m = cfg.max_shift_samples as i64;
        shift_segment(segment, rng.int_inclusive(-m, m))
    } else {
        segment.clone()
    };
    if cfg.inversion && rng.bernoulli(cfg.inversion_probability) {
        out.scale(-1.0);
    }
    if cfg.noise && cfg.noise_sigma > 0.0 {
        for v in out.data_mut() {
            *v += cfg.noise_sigma * rng.normal();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg() -> Tensor {
        Tensor::from_vec(&[2, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0, -1.0, -2.0, -3.0, -4.0, -5.0]).unwrap()
    }

    #[test]
    fn shift_fills_with_zeros() {
        assert_eq!(shift_segment(&seg(), 2).data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 0.0, 0.0, -1.0, -2.0, -3.0]);
        assert_eq!(shift_segment(&seg(), -1).data(), &[2.0, 3.0, 4.0, 5.0, 0.0, -2.0, -3.0, -4.0, -5.0, 0.0]);
        assert_eq!(shift_segment(&seg(), 0), seg());
        assert!(shift_segment(&seg(), 9).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forced_inversion_negates_exactly() {
        let cfg = AugmentConfig {
            noise: false,
            shift: false,
            inversion_probability: 1.0,
            ..AugmentConfig::default()
        };
        let out = augment(&seg(), &cfg, &mut RngStream::new(0));
        let neg: Vec<f64> = seg().data().iter().map(|v| -v).collect();
        assert_eq!(out.data(), &neg[..]);
    }

    #[test]
    fn zero_shift_draw_is_identity() {
        let cfg = AugmentConfig {
            noise: false,
            inversion: false,
            max_shift_samples: 0,
            ..AugmentConfig::default()
        };
        assert_eq!(augment(&seg(), &cfg, &mut RngStream::new(5)), seg());
        assert_eq!(augment(&seg(), &AugmentConfig::disabled(), &mut RngStream::new(5)), seg());
    }

    #[test]
    fn validation_rules() {
        let mut cfg = AugmentConfig::default();
        assert!(cfg.validate(250).is_ok());
        cfg.max_shift_samples = 250;
        assert!(cfg.validate(250).is_err());
        let cfg = AugmentConfig { inversion_probability: 1.5, ..AugmentConfig::default() };
        assert!(cfg.validate(250).unwrap_err().to_string().contains("inversion_probability"));
        let cfg = AugmentConfig { noise_sigma: -0.1, ..AugmentConfig::default() };
        assert!(cfg.validate(250).is_err());
    }
}
