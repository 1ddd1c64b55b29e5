//! Adam and early stopping.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments of parameter `index`, once it has been updated.
    pub fn moments(&self, index: usize) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(index)?.as_ref().map(|(m, v)| (m, v))
    }

    /// One bias-corrected Adam update of every trainable parameter from its
    /// `grad`. Parameters are matched to their moments by position, so the
    /// same ordering must be passed on every call. Nothing is modified when
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    p.trainable.then(|| {
                        let z = Tensor::zeros(p.value.shape()).expect("parameter shapes are valid");
                        (z.clone(), z)
                    })
                })
                .collect();
        } else if self.moments.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for p in params.iter().filter(|p| p.trainable) {
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {}[{i}]", p.name)));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (p, slot) in params.iter_mut().zip(self.moments.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let (m, v) = slot
                .as_mut()
                .ok_or_else(|| Error::State(format!("{} became trainable mid-run", p.name)))?;
            if m.shape() != p.value.shape() {
                return Err(Error::Shape(format!("{} changed shape between steps", p.name)));
            }
            let g = p.grad.data();
            let value = p.value.data_mut();
            for (((x, &g), m), v) in value.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Stops after `patience` consecutive epochs without a strictly greater metric.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_improvement: usize,
    epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_improvement: 0,
            epochs: 0,
        }
    }

    /// Records one epoch's metric; true means the metric is a new best.
    pub fn observe(&mut self, metric: f64) -> Result<bool> {
        if !metric.is_finite() {
            return Err(Error::Numeric(format!("early-stopping metric is {metric}")));
        }
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = self.epochs;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.epochs += 1;
        Ok(improved)
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Zero-based index of the best epoch observed so far.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs
    }
}
