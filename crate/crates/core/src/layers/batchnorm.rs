use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Parameter, Tensor};

/// Per-feature-map batch normalization over data laid out as `[B, F, S]`:
/// statistics for feature `f` pool the batch axis and the `S` inner values.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
    /// Normalized-input buffer kept between passes to avoid reallocating.
    spare: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch: usize,
    inner: usize,
}

impl BatchNorm {
    pub fn new(prefix: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::full(&[features], 1.0)?, true),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[features])?, true),
            running_mean: Tensor::zeros(&[features])?,
            running_var: Tensor::full(&[features], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
            spare: Vec::new(),
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x` (`batch * features * inner` values) in place.
    pub fn forward(&mut self, x: &mut [f64], batch: usize, inner: usize, mode: Mode) -> Result<()> {
        let features = self.features();
        if x.len() != batch * features * inner {
            return Err(Error::Shape(format!(
                "batch norm over {features} features got {} values for batch {batch} x inner {inner}",
                x.len()
            )));
        }
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let n = (batch * inner) as f64;

        match mode {
            Mode::Infer => {
                let mean = self.running_mean.data();
                let var = self.running_var.data();
                for b in 0..batch {
                    for f in 0..features {
                        let inv = 1.0 / (var[f] + self.eps).sqrt();
                        let block = &mut x[(b * features + f) * inner..][..inner];
                        for v in block {
                            *v = gamma[f] * (*v - mean[f]) * inv + beta[f];
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                let mut mean = vec![0.0; features];
                let mut var = vec![0.0; features];
                for b in 0..batch {
                    for f in 0..features {
                        mean[f] += x[(b * features + f) * inner..][..inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for b in 0..batch {
                    for f in 0..features {
                        let m = mean[f];
                        var[f] += x[(b * features + f) * inner..][..inner]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

                let mut xhat = std::mem::take(&mut self.spare);
                xhat.resize(x.len(), 0.0);
                for b in 0..batch {
                    for f in 0..features {
                        let start = (b * features + f) * inner;
                        for (v, h) in x[start..start + inner].iter_mut().zip(&mut xhat[start..start + inner]) {
                            *h = (*v - mean[f]) * inv_std[f];
                            *v = gamma[f] * *h + beta[f];
                        }
                    }
                }

                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = self.momentum;
                for f in 0..features {
                    let rm = &mut self.running_mean.data_mut()[f];
                    *rm = (1.0 - m) * *rm + m * mean[f];
                    let rv = &mut self.running_var.data_mut()[f];
                    *rv = (1.0 - m) * *rv + m * var[f] * unbias;
                }
                self.cache = Some(BnCache {
                    xhat,
                    inv_std,
                    batch,
                    inner,
                });
            }
        }
        Ok(())
    }

    /// Turns `dy` into `dx` in place and accumulates into the gamma/beta gradients.
    pub fn backward(&mut self, dy: &mut [f64]) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batch norm backward without a training forward pass".into()))?;
        let features = self.features();
        let (batch, inner) = (cache.batch, cache.inner);
        if dy.len() != cache.xhat.len() {
            self.cache = Some(cache);
            return Err(Error::Shape("batch norm upstream gradient size mismatch".into()));
        }
        let n = (batch * inner) as f64;
        let mut sum_dy = vec![0.0; features];
        let mut sum_dy_xhat = vec![0.0; features];
        for b in 0..batch {
            for f in 0..features {
                let start = (b * features + f) * inner;
                for (g, h) in dy[start..start + inner].iter().zip(&cache.xhat[start..start + inner]) {
                    sum_dy[f] += g;
                    sum_dy_xhat[f] += g * h;
                }
            }
        }
        {
            let dgamma = self.gamma.grad.data_mut();
            for f in 0..features {
                dgamma[f] += sum_dy_xhat[f];
            }
            let dbeta = self.beta.grad.data_mut();
            for f in 0..features {
                dbeta[f] += sum_dy[f];
            }
        }
        let gamma = self.gamma.value.data();
        for b in 0..batch {
            for f in 0..features {
                let start = (b * features + f) * inner;
                let k = gamma[f] * cache.inv_std[f] / n;
                let (s1, s2) = (sum_dy[f], sum_dy_xhat[f]);
                for (g, h) in dy[start..start + inner].iter_mut().zip(&cache.xhat[start..start + inner]) {
                    *g = k * (n * *g - s1 - h * s2);
                }
            }
        }
        self.spare = cache.xhat;
        Ok(())
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.gamma, &self.beta]
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
        self.spare = Vec::new();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_values(n: usize, seed: u64) -> Vec<f64> {
        let mut r = RngStream::new(seed);
        (0..n).map(|_| 3.0 + 2.0 * r.normal()).collect()
    }

    #[test]
    fn train_output_moments_follow_gamma_beta() {
        let mut bn = BatchNorm::new("bn", 2).unwrap();
        bn.gamma.value.data_mut().copy_from_slice(&[1.5, 0.5]);
        bn.beta.value.data_mut().copy_from_slice(&[-1.0, 2.0]);
        let (batch, inner) = (4, 50);
        let mut x = random_values(batch * 2 * inner, 1);
        bn.forward(&mut x, batch, inner, Mode::Train).unwrap();
        for f in 0..2 {
            let vals: Vec<f64> = (0..batch)
                .flat_map(|b| x[(b * 2 + f) * inner..][..inner].to_vec())
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let (g, b) = ([1.5, 0.5][f], [-1.0, 2.0][f]);
            assert!((mean - b).abs() < 1e-10);
            assert!((var - g * g).abs() < 1e-3 * g * g);
        }
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut bn = BatchNorm::new("bn", 1).unwrap();
        let mut x = vec![10.0, 12.0, 14.0, 16.0];
        bn.forward(&mut x, 2, 2, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 1.3).abs() < 1e-12);
        // unbiased variance 20/3, blended with momentum 0.1
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_with_identity_stats_maps_zero_to_beta() {
        let mut bn = BatchNorm::new("bn", 3).unwrap();
        let mut x = vec![0.0; 6];
        bn.forward(&mut x, 1, 2, Mode::Infer).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_requires_training_pass() {
        let mut bn = BatchNorm::new("bn", 1).unwrap();
        let mut x = vec![1.0, 2.0];
        bn.forward(&mut x, 1, 2, Mode::Infer).unwrap();
        let mut g = vec![1.0, 1.0];
        assert!(matches!(bn.backward(&mut g), Err(Error::State(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (batch, features, inner) = (3, 2, 4);
        let x0 = random_values(batch * features * inner, 7);
        let weights = random_values(x0.len(), 8);
        let loss = |bn: &mut BatchNorm, x: &[f64]| {
            let mut y = x.to_vec();
            bn.forward(&mut y, batch, inner, Mode::Train).unwrap();
            y.iter().zip(&weights).map(|(a, w)| a * a * w).sum::<f64>()
        };
        let mut bn = BatchNorm::new("bn", features).unwrap();
        bn.gamma.value.data_mut().copy_from_slice(&[0.7, 1.3]);
        let mut y = x0.clone();
        bn.forward(&mut y, batch, inner, Mode::Train).unwrap();
        let mut dy: Vec<f64> = y.iter().zip(&weights).map(|(a, w)| 2.0 * a * w).collect();
        bn.backward(&mut dy).unwrap();

        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let fd = (loss(&mut bn, &xp) - loss(&mut bn, &xm)) / (2.0 * h);
            assert!((fd - dy[i]).abs() < 1e-6 * (1.0 + fd.abs()), "i={i}: {fd} vs {}", dy[i]);
        }
    }
}
