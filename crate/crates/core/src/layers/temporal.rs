use realfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::layers::fft::{fast_len, RealFft};
use crate::layers::{Activation, BatchNorm, Mode};
use crate::rng::RngStream;
use crate::tensor::{Distribution, Parameter, Tensor};

/// Temporal convolution `[B, C, T] -> [B, D, C, T]`, followed by batch norm
/// and ELU.
///
/// Each output filter `d` slides a length-`k` kernel along time, separately
/// for every channel, with `(k - 1) / 2` zeros of padding per side so the
/// time axis keeps its length:
///
/// `z[b, d, c, t] = sum_j kernel[d, (c), j] * x[b, c, t + j - (k - 1) / 2]`
///
/// With `shared = true` the kernel bank is `[D, k]` and every channel uses the
/// same kernel; otherwise it is `[D, C, k]`.
///
/// The convolution runs through real FFTs. Only the kernel gradient is
/// produced by the backward pass; this layer always sees raw data, so no input
/// gradient is needed.
#[derive(Debug, Clone)]
pub struct TemporalConv {
    pub kernel: Parameter,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
    channels: usize,
    filters: usize,
    kernel_len: usize,
    shared: bool,
    fft: Option<RealFft>,
    cache: Option<TemporalCache>,
}

#[derive(Debug, Clone)]
struct TemporalCache {
    batch: usize,
    len: usize,
    /// Input spectra, `[B, C]` blocks of `bins` values.
    input_spec: Vec<Complex64>,
    /// Layer output after activation, shared with the returned tensor.
    output: Tensor,
}

impl TemporalConv {
    pub fn new(
        channels: usize,
        filters: usize,
        kernel_len: usize,
        shared: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if kernel_len % 2 == 0 {
            return Err(Error::config("model.kernel_len", "temporal kernel length must be odd"));
        }
        let bound = 1.0 / (kernel_len as f64).sqrt();
        let shape: Vec<usize> = if shared {
            vec![filters, kernel_len]
        } else {
            vec![filters, channels, kernel_len]
        };
        let kernel = Tensor::sample(&shape, Distribution::Uniform { low: -bound, high: bound }, rng)?;
        Ok(Self {
            kernel: Parameter::new("temporal.kernel", kernel, true),
            bn: Some(BatchNorm::new("temporal.bn", filters)?),
            activation: Activation::Elu,
            channels,
            filters,
            kernel_len,
            shared,
            fft: None,
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

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    fn kernel_row(&self, d: usize, c: usize) -> &[f64] {
        let k = self.kernel_len;
        let row = if self.shared { d } else { d * self.channels + c };
        &self.kernel.value.data()[row * k..(row + 1) * k]
    }

    fn kernel_rows(&self) -> usize {
        if self.shared {
            self.filters
        } else {
            self.filters * self.channels
        }
    }

    /// Circular convolution of this length reproduces every output sample
    /// and every kernel-gradient lag without wrap-around.
    fn take_fft(&mut self, len: usize) -> RealFft {
        let n = fast_len(len + (self.kernel_len - 1) / 2);
        match self.fft.take() {
            Some(f) if f.len() == n => f,
            _ => RealFft::new(n),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::Shape(format!(
                "temporal conv expects [B, {}, T], got {shape:?}",
                self.channels
            )));
        }
        let (batch, channels, len) = (shape[0], shape[1], shape[2]);
        if len < self.kernel_len {
            return Err(Error::Shape(format!(
                "time extent {len} shorter than kernel length {}",
                self.kernel_len
            )));
        }
        let (filters, k) = (self.filters, self.kernel_len);
        let pad = (k - 1) / 2;

        let mut fft = self.take_fft(len);
        let n = fft.len();
        let bins = fft.bins();
        let zero = Complex64::new(0.0, 0.0);

        let rows = self.kernel_rows();
        let mut kernel_spec = vec![zero; rows * bins];
        let mut reversed = vec![0.0; k];
        for r in 0..rows {
            let (d, c) = if self.shared { (r, 0) } else { (r / channels, r % channels) };
            for (dst, src) in reversed.iter_mut().zip(self.kernel_row(d, c).iter().rev()) {
                *dst = *src;
            }
            fft.forward(&reversed, &mut kernel_spec[r * bins..(r + 1) * bins]);
        }

        let mut input_spec = vec![zero; batch * channels * bins];
        for (row, spec) in input_spec.chunks_mut(bins).enumerate() {
            fft.forward(&x.data()[row * len..(row + 1) * len], spec);
        }

        let scale = 1.0 / n as f64;
        let mut out = vec![0.0; batch * filters * channels * len];
        let mut prod = vec![zero; bins];
        let mut full = vec![0.0; n];
        for b in 0..batch {
            for d in 0..filters {
                for c in 0..channels {
                    let u = &input_spec[(b * channels + c) * bins..][..bins];
                    let r = if self.shared { d } else { d * channels + c };
                    let kspec = &kernel_spec[r * bins..][..bins];
                    for ((p, a), w) in prod.iter_mut().zip(u).zip(kspec) {
                        *p = a * w;
                    }
                    fft.inverse(&prod, &mut full);
                    let dst = &mut out[((b * filters + d) * channels + c) * len..][..len];
                    for (o, v) in dst.iter_mut().zip(&full[pad..pad + len]) {
                        *o = v * scale;
                    }
                }
            }
        }
        self.fft = Some(fft);

        if let Some(bn) = self.bn.as_mut() {
            bn.forward(&mut out, batch, channels * len, mode)?;
        }
        self.activation.apply_in_place(&mut out);

        let out = Tensor::from_vec(&[batch, filters, channels, len], out)?;
        self.cache = match mode {
            Mode::Train => Some(TemporalCache {
                batch,
                len,
                input_spec,
                output: out.clone(),
            }),
            Mode::Infer => None,
        };
        Ok(out)
    }

    /// Accumulates the kernel gradient (and batch-norm gradients) from the
    /// gradient with respect to this layer's output.
    pub fn backward(&mut self, grad: Tensor) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("temporal conv backward without a training forward pass".into()))?;
        let (batch, len) = (cache.batch, cache.len);
        let (filters, channels, k) = (self.filters, self.channels, self.kernel_len);
        grad.expect_shape(&[batch, filters, channels, len], "temporal conv upstream gradient")?;

        let mut g = grad.into_vec();
        self.activation.backward_in_place(cache.output.data(), &mut g);
        if let Some(bn) = self.bn.as_mut() {
            bn.backward(&mut g)?;
        }

        let mut fft = self.take_fft(len);
        let n = fft.len();
        let bins = fft.bins();
        let zero = Complex64::new(0.0, 0.0);
        let rows = self.kernel_rows();
        let mut acc = vec![zero; rows * bins];
        let mut gspec = vec![zero; bins];
        for b in 0..batch {
            for d in 0..filters {
                for c in 0..channels {
                    fft.forward(&g[((b * filters + d) * channels + c) * len..][..len], &mut gspec);
                    let u = &cache.input_spec[(b * channels + c) * bins..][..bins];
                    let r = if self.shared { d } else { d * channels + c };
                    for ((a, gs), us) in acc[r * bins..(r + 1) * bins].iter_mut().zip(&gspec).zip(u) {
                        *a += gs.conj() * us;
                    }
                }
            }
        }

        // dK[j] = sum_t g[t] x[t + j - pad], the cross-correlation at lag j - pad
        let pad = (k - 1) / 2;
        let scale = 1.0 / n as f64;
        let mut full = vec![0.0; n];
        let kgrad = self.kernel.grad.data_mut();
        for r in 0..rows {
            fft.inverse(&acc[r * bins..(r + 1) * bins], &mut full);
            for j in 0..k {
                let lag = (j + n - pad) % n;
                kgrad[r * k + j] += full[lag] * scale;
            }
        }
        self.fft = Some(fft);
        Ok(())
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = vec![&mut self.kernel];
        if let Some(bn) = self.bn.as_mut() {
            v.extend(bn.parameters_mut());
        }
        v
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v = vec![&self.kernel];
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
