use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

/// Smallest length >= `min` whose only prime factors are 2, 3 and 5.
pub(crate) fn fast_len(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

/// Real FFT pair of one fixed length with reusable buffers.
pub(crate) struct RealFft {
    n: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    real_buf: Vec<f64>,
    spec_buf: Vec<Complex64>,
    scratch_fwd: Vec<Complex64>,
    scratch_inv: Vec<Complex64>,
}

impl std::fmt::Debug for RealFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFft").field("n", &self.n).finish()
    }
}

impl Clone for RealFft {
    fn clone(&self) -> Self {
        RealFft::new(self.n)
    }
}

impl RealFft {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let r2c = planner.plan_fft_forward(n);
        let c2r = planner.plan_fft_inverse(n);
        let scratch_fwd = r2c.make_scratch_vec();
        let scratch_inv = c2r.make_scratch_vec();
        Self {
            n,
            real_buf: vec![0.0; n],
            spec_buf: vec![Complex64::new(0.0, 0.0); n / 2 + 1],
            r2c,
            c2r,
            scratch_fwd,
            scratch_inv,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    pub(crate) fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Spectrum of `signal` zero-padded to the transform length.
    pub(crate) fn forward(&mut self, signal: &[f64], out: &mut [Complex64]) {
        self.real_buf[..signal.len()].copy_from_slice(signal);
        self.real_buf[signal.len()..].iter_mut().for_each(|v| *v = 0.0);
        self.r2c
            .process_with_scratch(&mut self.real_buf, out, &mut self.scratch_fwd)
            .expect("forward fft buffer sizes");
    }

    /// Unnormalized inverse transform; `out` receives all `n` samples.
    pub(crate) fn inverse(&mut self, spec: &[Complex64], out: &mut [f64]) {
        self.spec_buf.copy_from_slice(spec);
        // real-signal spectra have real DC and Nyquist bins
        self.spec_buf[0].im = 0.0;
        if self.n % 2 == 0 {
            let last = self.spec_buf.len() - 1;
            self.spec_buf[last].im = 0.0;
        }
        let _ = self
            .c2r
            .process_with_scratch(&mut self.spec_buf, out, &mut self.scratch_inv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(374), 375);
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(1), 1);
        assert_eq!(fast_len(121), 125);
    }

    #[test]
    fn roundtrip() {
        let mut f = RealFft::new(12);
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut spec = vec![Complex64::new(0.0, 0.0); f.bins()];
        f.forward(&x, &mut spec);
        let mut back = vec![0.0; 12];
        f.inverse(&spec, &mut back);
        for i in 0..10 {
            assert!((back[i] / 12.0 - x[i]).abs() < 1e-12);
        }
        assert!(back[10].abs() < 1e-12 && back[11].abs() < 1e-12);
    }
}
