//! ESNNet assembly: temporal conv -> spatial conv -> reservoir -> time
//! average -> linear head, and the conv-only ablation that skips the
//! reservoir.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::Differentiable;
use crate::layers::{self, gap, softmax_cross_entropy, Linear, Mode, SpatialConv, TemporalConv};
use crate::reservoir::{esn_backward, esn_forward, init_reservoir, Reservoir, ReservoirConfig, StateTrajectory};
use crate::rng::{tag, RngStream};
use crate::tensor::{Parameter, Tensor};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    ConvOnly,
}

/// Front-end and input geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub channels: usize,
    pub samples: usize,
    /// Temporal filter count `D`.
    pub filters: usize,
    /// Temporal kernel length `k` (odd).
    pub kernel_len: usize,
    /// One `[D, k]` kernel bank for all channels instead of `[D, C, k]`.
    pub shared_kernels: bool,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 72,
            samples: 250,
            filters: 5,
            kernel_len: 125,
            shared_kernels: false,
            variant: Variant::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Coefficient of the `sum ||theta||^2` loss term.
    pub l2: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 40,
            patience: 8,
            l2: 1e-4,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub model: NetConfig,
    pub esn: ReservoirConfig,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// Small geometry used by gradient checks and fast tests.
    pub fn micro() -> Self {
        Self {
            model: NetConfig {
                channels: 4,
                samples: 20,
                filters: 2,
                kernel_len: 3,
                shared_kernels: false,
                variant: Variant::Full,
            },
            esn: ReservoirConfig {
                size: 8,
                density: 0.5,
                ..ReservoirConfig::default()
            },
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        for (key, v) in [
            ("model.channels", m.channels),
            ("model.samples", m.samples),
            ("model.filters", m.filters),
            ("model.kernel_len", m.kernel_len),
            ("train.batch_size", self.train.batch_size),
            ("train.max_epochs", self.train.max_epochs),
            ("train.patience", self.train.patience),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if m.kernel_len % 2 == 0 {
            return Err(Error::config("model.kernel_len", format!("{} is not odd", m.kernel_len)));
        }
        if m.kernel_len > m.samples {
            return Err(Error::config(
                "model.kernel_len",
                format!("{} exceeds the segment length {}", m.kernel_len, m.samples),
            ));
        }
        self.esn.validate()?;
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(t.l2 >= 0.0 && t.l2.is_finite()) {
            return Err(Error::config("train.l2", "must be non-negative"));
        }
        if t.seeds.is_empty() {
            return Err(Error::config("train.seeds", "at least one seed is required"));
        }
        Ok(())
    }
}

/// Parts of the training objective.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub l2_penalty: f64,
    pub total: f64,
    pub probabilities: Tensor,
    grad_logits: Tensor,
}

#[derive(Debug, Clone)]
struct NetCache {
    trajectories: Vec<StateTrajectory>,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct EsnNet {
    config: ModelConfig,
    seed: u64,
    pub temporal: TemporalConv,
    pub spatial: SpatialConv,
    pub reservoir: Option<Reservoir>,
    pub head: Linear,
    cache: Option<NetCache>,
}

/// Deterministic initialization. Every stage draws from its own stream
/// derived from `seed`, so the full and conv-only variants share identical
/// front-end weights for equal seeds.
pub fn build(config: &ModelConfig, seed: u64) -> Result<EsnNet> {
    config.validate()?;
    let m = &config.model;
    let root = RngStream::new(seed);
    let temporal = TemporalConv::new(
        m.channels,
        m.filters,
        m.kernel_len,
        m.shared_kernels,
        &mut root.derive(tag("temporal")),
    )?;
    let spatial = SpatialConv::new(m.filters, m.channels, &mut root.derive(tag("spatial")))?;
    let (reservoir, features) = match m.variant {
        Variant::Full => {
            let res = init_reservoir(&config.esn, m.filters, root.derive(tag("reservoir")).seed())?;
            (Some(res), config.esn.size)
        }
        Variant::ConvOnly => (None, m.filters),
    };
    let head = Linear::new("head", features, NUM_CLASSES, &mut root.derive(tag("head")))?;
    Ok(EsnNet {
        config: config.clone(),
        seed,
        temporal,
        spatial,
        reservoir,
        head,
        cache: None,
    })
}

impl EsnNet {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn variant(&self) -> Variant {
        self.config.model.variant
    }

    /// Logits `[B, 3]` for a batch `[B, C, T]`. The reservoir starts from
    /// a zero state for every sample.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let m = &self.config.model;
        let shape = batch.shape();
        if shape.len() != 3 || shape[1] != m.channels || shape[2] != m.samples {
            return Err(Error::Shape(format!(
                "model expects [B, {}, {}], got {shape:?}",
                m.channels, m.samples
            )));
        }
        let (b_n, d_n, t_n) = (shape[0], m.filters, m.samples);
        let temporal_out = self.temporal.forward(batch, mode)?;
        let spatial_out = self.spatial.forward(&temporal_out, mode)?;
        drop(temporal_out);

        let mut trajectories = Vec::new();
        let features = match self.reservoir.as_ref() {
            Some(res) => {
                let h_n = res.size();
                let h0 = Tensor::zeros(&[h_n])?;
                let mut pooled = Vec::with_capacity(b_n * h_n);
                for b in 0..b_n {
                    let u = Tensor::from_vec(&[d_n, t_n], spatial_out.row(b).to_vec())?;
                    let traj = esn_forward(&u, res, &h0)?;
                    pooled.extend_from_slice(gap(&traj.states)?.data());
                    if mode == Mode::Train {
                        trajectories.push(traj);
                    }
                }
                Tensor::from_vec(&[b_n, h_n], pooled)?
            }
            None => {
                let mut pooled = Vec::with_capacity(b_n * d_n);
                for b in 0..b_n {
                    let maps = Tensor::from_vec(&[d_n, t_n], spatial_out.row(b).to_vec())?;
                    pooled.extend_from_slice(gap(&maps)?.data());
                }
                Tensor::from_vec(&[b_n, d_n], pooled)?
            }
        };
        let logits = self.head.forward(&features, mode == Mode::Train)?;
        self.cache = match mode {
            Mode::Train => Some(NetCache { trajectories, len: t_n }),
            Mode::Infer => None,
        };
        Ok(logits)
    }

    /// Backpropagates `dL/dlogits`, accumulating into every trainable gradient.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("model backward without a training forward pass".into()))?;
        let dfeat = self.head.backward(grad_logits)?;
        let b_n = dfeat.shape()[0];
        let t_n = cache.len;
        let d_n = self.config.model.filters;
        let mut dspatial = Vec::with_capacity(b_n * d_n * t_n);
        match self.reservoir.as_mut() {
            Some(res) => {
                let h_n = res.size();
                for (b, traj) in cache.trajectories.iter().enumerate() {
                    let mut up = Vec::with_capacity(h_n * t_n);
                    for &g in dfeat.row(b) {
                        up.extend(std::iter::repeat_n(g / t_n as f64, t_n));
                    }
                    let up = Tensor::from_vec(&[h_n, t_n], up)?;
                    let du = esn_backward(res, traj, &up)?;
                    dspatial.extend_from_slice(du.data());
                }
            }
            None => {
                for b in 0..b_n {
                    for &g in dfeat.row(b) {
                        dspatial.extend(std::iter::repeat_n(g / t_n as f64, t_n));
                    }
                }
            }
        }
        let dspatial = Tensor::from_vec(&[b_n, d_n, t_n], dspatial)?;
        let dtemporal = self.spatial.backward(&dspatial)?;
        self.temporal.backward(dtemporal)
    }

    /// Cross-entropy plus `l2 * sum ||theta||^2` over trainable parameters.
    pub fn loss(&self, logits: &Tensor, labels: &[usize]) -> Result<LossBreakdown> {
        let ce = softmax_cross_entropy(logits, labels)?;
        let l2 = self.config.train.l2;
        let penalty = l2
            * self
                .parameters()
                .iter()
                .filter(|p| p.trainable)
                .map(|p| p.value.sum_squares())
                .sum::<f64>();
        Ok(LossBreakdown {
            cross_entropy: ce.loss,
            l2_penalty: penalty,
            total: ce.loss + penalty,
            probabilities: ce.probabilities,
            grad_logits: ce.grad,
        })
    }

    /// Forward in training mode, loss, and full gradient. Gradients are reset
    /// first.
    pub fn loss_and_backward(&mut self, batch: &Tensor, labels: &[usize]) -> Result<LossBreakdown> {
        self.zero_grad();
        let logits = self.forward(batch, Mode::Train)?;
        let loss = self.loss(&logits, labels)?;
        self.backward(&loss.grad_logits)?;
        let l2 = self.config.train.l2;
        if l2 > 0.0 {
            for p in self.parameters_mut().into_iter().filter(|p| p.trainable) {
                let value = p.value.clone();
                p.grad.axpy(2.0 * l2, &value)?;
            }
        }
        Ok(loss)
    }

    pub fn predict(&mut self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch, Mode::Infer)?;
        Ok(layers::predict(&logits))
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Every parameter in a fixed order; the reservoir `W` is included with
    /// `trainable == false`.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v = self.temporal.parameters();
        v.extend(self.spatial.parameters());
        if let Some(res) = self.reservoir.as_ref() {
            v.push(&res.w);
            v.push(&res.w_in);
        }
        v.extend(self.head.parameters());
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.temporal.parameters_mut();
        v.extend(self.spatial.parameters_mut());
        if let Some(res) = self.reservoir.as_mut() {
            v.push(&mut res.w);
            v.push(&mut res.w_in);
        }
        v.extend(self.head.parameters_mut());
        v
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.parameters().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    /// Batch-norm running statistics by name, in a fixed order.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        if let Some(bn) = self.temporal.bn.as_ref() {
            v.push(("temporal.bn.running_mean".to_string(), &bn.running_mean));
            v.push(("temporal.bn.running_var".to_string(), &bn.running_var));
        }
        if let Some(bn) = self.spatial.bn.as_ref() {
            v.push(("spatial.bn.running_mean".to_string(), &bn.running_mean));
            v.push(("spatial.bn.running_var".to_string(), &bn.running_var));
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        if let Some(bn) = self.temporal.bn.as_mut() {
            v.push(("temporal.bn.running_mean".to_string(), &mut bn.running_mean));
            v.push(("temporal.bn.running_var".to_string(), &mut bn.running_var));
        }
        if let Some(bn) = self.spatial.bn.as_mut() {
            v.push(("spatial.bn.running_mean".to_string(), &mut bn.running_mean));
            v.push(("spatial.bn.running_var".to_string(), &mut bn.running_var));
        }
        v
    }

    /// Copies of all parameter values and buffers, for restoring a best epoch.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.parameters()
            .iter()
            .map(|p| p.value.clone())
            .chain(self.buffers().into_iter().map(|(_, t)| t.clone()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        let n_params = self.parameters().len();
        if snapshot.len() != n_params + self.buffers().len() {
            return Err(Error::State("snapshot does not match model layout".into()));
        }
        for (p, v) in self.parameters_mut().into_iter().zip(snapshot) {
            p.value.ensure_same_shape(v)?;
            p.value = v.clone();
        }
        for ((_, b), v) in self.buffers_mut().into_iter().zip(&snapshot[n_params..]) {
            b.ensure_same_shape(v)?;
            *b = v.clone();
        }
        self.clear_cache();
        Ok(())
    }

    /// SHA-256 of the fixed reservoir matrix, if present.
    pub fn reservoir_digest(&self) -> Option<[u8; 32]> {
        self.reservoir.as_ref().map(|r| r.w.value.digest())
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
        self.temporal.clear_cache();
        self.spatial.clear_cache();
        self.head.clear_cache();
    }
}

/// Argmax per row of `[B, 3]` logits, lowest index on ties.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    layers::predict(logits)
}

/// A model with one fixed labeled batch, exposed as a differentiable loss.
pub struct ModelLoss<'a> {
    pub model: &'a mut EsnNet,
    pub batch: &'a Tensor,
    pub labels: &'a [usize],
}

impl Differentiable for ModelLoss<'_> {
    fn loss(&mut self) -> Result<f64> {
        let logits = self.model.forward(self.batch, Mode::Train)?;
        let total = self.model.loss(&logits, self.labels)?.total;
        self.model.clear_cache();
        Ok(total)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        Ok(self.model.loss_and_backward(self.batch, self.labels)?.total)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.model.parameters_mut()
    }
}
