use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Distribution, Parameter, Tensor};

/// Global average pooling over time: `[H, T] -> [H]`.
pub fn gap(states: &Tensor) -> Result<Tensor> {
    let shape = states.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("gap expects [H, T], got {shape:?}")));
    }
    let (h, t) = (shape[0], shape[1]);
    let pooled = (0..h)
        .map(|i| states.row(i).iter().sum::<f64>() / t as f64)
        .collect();
    Tensor::from_vec(&[h], pooled)
}

/// Argmax per row of `[B, K]` logits; ties go to the lowest index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fully connected layer `y = W x + b` over a batch `[B, in] -> [B, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
    cache: Option<Tensor>,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(inputs)`; bias starts at zero.
    pub fn new(prefix: &str, inputs: usize, outputs: usize, rng: &mut RngStream) -> Result<Self> {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = Tensor::sample(&[outputs, inputs], Distribution::Uniform { low: -bound, high: bound }, rng)?;
        Ok(Self {
            weight: Parameter::new(format!("{prefix}.weight"), w, true),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[outputs])?, true),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor, keep_cache: bool) -> Result<Tensor> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if x.shape().len() != 2 || x.shape()[1] != n_in {
            return Err(Error::Shape(format!(
                "linear layer with {n_in} inputs got {:?}",
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = Vec::with_capacity(batch * n_out);
        for b in 0..batch {
            let row = x.row(b);
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                out.push(bias[o] + wr.iter().zip(row).map(|(a, v)| a * v).sum::<f64>());
            }
        }
        self.cache = keep_cache.then(|| x.clone());
        Tensor::from_vec(&[batch, n_out], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::State("linear backward without a cached forward pass".into()))?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let batch = x.shape()[0];
        grad.expect_shape(&[batch, n_out], "linear upstream gradient")?;
        let w = self.weight.value.data().to_vec();
        let mut dx = vec![0.0; batch * n_in];
        for b in 0..batch {
            let row = x.row(b);
            let g = grad.row(b);
            let dw = self.weight.grad.data_mut();
            for o in 0..n_out {
                for i in 0..n_in {
                    dw[o * n_in + i] += g[o] * row[i];
                    dx[b * n_in + i] += g[o] * w[o * n_in + i];
                }
            }
            let db = self.bias.grad.data_mut();
            for o in 0..n_out {
                db[o] += g[o];
            }
        }
        Tensor::from_vec(&[batch, n_in], dx)
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Batch-mean cross-entropy of softmax probabilities.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probabilities: Tensor,
    /// `(softmax - onehot) / B`, the gradient with respect to the logits.
    pub grad: Tensor,
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("logits must be [B, K], got {shape:?}")));
    }
    let (batch, k) = (shape[0], shape[1]);
    if labels.len() != batch {
        return Err(Error::Data(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = vec![0.0; batch * k];
    let mut grad = vec![0.0; batch * k];
    let mut total = 0.0;
    for b in 0..batch {
        let row = logits.row(b);
        let top = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        let max = row[top];
        // ln(1 + sum of the non-maximal terms) keeps confident rows exact
        let rest: f64 = (0..k).filter(|&j| j != top).map(|j| (row[j] - max).exp()).sum();
        let log_sum = rest.ln_1p();
        let log_norm = max + log_sum;
        total += (max - row[labels[b]]) + log_sum;
        for j in 0..k {
            let p = (row[j] - log_norm).exp();
            probs[b * k + j] = p;
            let onehot = if j == labels[b] { 1.0 } else { 0.0 };
            grad[b * k + j] = (p - onehot) / batch as f64;
        }
    }
    Ok(CrossEntropy {
        loss: total / batch as f64,
        probabilities: Tensor::from_vec(&[batch, k], probs)?,
        grad: Tensor::from_vec(&[batch, k], grad)?,
    })
}
