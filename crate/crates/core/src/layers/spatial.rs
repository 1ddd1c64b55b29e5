use crate::error::{Error, Result};
use crate::layers::{Activation, BatchNorm, Mode};
use crate::rng::RngStream;
use crate::tensor::{Distribution, Parameter, Tensor};

/// Spatial convolution `[B, D, C, T] -> [B, D, T]`: each filter map `d`
/// mixes its channels with weights `w[d, c]` at every time step, followed by
/// batch norm and ELU.
#[derive(Debug, Clone)]
pub struct SpatialConv {
    pub weight: Parameter,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
    cache: Option<SpatialCache>,
}

#[derive(Debug, Clone)]
struct SpatialCache {
    input: Tensor,
    output: Vec<f64>,
}

impl SpatialConv {
    pub fn new(filters: usize, channels: usize, rng: &mut RngStream) -> Result<Self> {
        let bound = 1.0 / (channels as f64).sqrt();
        let w = Tensor::sample(&[filters, channels], Distribution::Uniform { low: -bound, high: bound }, rng)?;
        Ok(Self {
            weight: Parameter::new("spatial.weight", w, true),
            bn: Some(BatchNorm::new("spatial.bn", filters)?),
            activation: Activation::Elu,
            cache: None,
        })
    }

    pub fn without_batch_norm(mut self) -> Self {
        self.bn = None;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (filters, channels) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != filters || shape[2] != channels {
            return Err(Error::Shape(format!(
                "spatial conv with weights [{filters}, {channels}] got input {shape:?}"
            )));
        }
        let (batch, len) = (shape[0], shape[3]);
        let w = self.weight.value.data();
        let mut out = vec![0.0; batch * filters * len];
        for b in 0..batch {
            for d in 0..filters {
                let dst = &mut out[(b * filters + d) * len..][..len];
                for c in 0..channels {
                    let wc = w[d * channels + c];
                    let src = &x.data()[((b * filters + d) * channels + c) * len..][..len];
                    for (o, v) in dst.iter_mut().zip(src) {
                        *o += wc * v;
                    }
                }
            }
        }
        if let Some(bn) = self.bn.as_mut() {
            bn.forward(&mut out, batch, len, mode)?;
        }
        self.activation.apply_in_place(&mut out);
        self.cache = match mode {
            Mode::Train => Some(SpatialCache {
                input: x.clone(),
                output: out.clone(),
            }),
            Mode::Infer => None,
        };
        Tensor::from_vec(&[batch, filters, len], out)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("spatial conv backward without a training forward pass".into()))?;
        let shape = cache.input.shape().to_vec();
        let (batch, filters, channels, len) = (shape[0], shape[1], shape[2], shape[3]);
        grad.expect_shape(&[batch, filters, len], "spatial conv upstream gradient")?;

        let mut g = grad.data().to_vec();
        self.activation.backward_in_place(&cache.output, &mut g);
        if let Some(bn) = self.bn.as_mut() {
            bn.backward(&mut g)?;
        }

        let w = self.weight.value.data().to_vec();
        let mut dx = vec![0.0; cache.input.len()];
        let dw = self.weight.grad.data_mut();
        for b in 0..batch {
            for d in 0..filters {
                let gd = &g[(b * filters + d) * len..][..len];
                for c in 0..channels {
                    let off = ((b * filters + d) * channels + c) * len;
                    let src = &cache.input.data()[off..off + len];
                    dw[d * channels + c] += gd.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    let wc = w[d * channels + c];
                    for (o, gv) in dx[off..off + len].iter_mut().zip(gd) {
                        *o = wc * gv;
                    }
                }
            }
        }
        Tensor::from_vec(&shape, dx)
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = vec![&mut self.weight];
        if let Some(bn) = self.bn.as_mut() {
            v.extend(bn.parameters_mut());
        }
        v
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v = vec![&self.weight];
        if let Some(bn) = self.bn.as_ref() {
            v.extend(bn.parameters());
        }
        v
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
        if let Some(bn) = self.bn.as_mut() {
            bn.clear_cache();
        }
    }
}
