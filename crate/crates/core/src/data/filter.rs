//! Butterworth band-pass design and zero-phase filtering in second-order
//! sections.

use realfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cascade of biquads, each `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 5]>,
}

/// Band-pass with an `order`-pole lowpass prototype (so `2 * order` poles in
/// total), designed by the prewarped bilinear transform and normalized to
/// unit gain at the geometric band center.
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::config("preprocess.filter_order", "must be at least 1"));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::config("sample_rate", format!("{fs} is not a positive rate")));
    }
    let nyquist = fs / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz) {
        return Err(Error::config(
            "preprocess.low_hz",
            format!("band {low_hz}..{high_hz} Hz needs 0 < low < high"),
        ));
    }
    if high_hz >= nyquist {
        return Err(Error::config(
            "preprocess.high_hz",
            format!("{high_hz} Hz is not below the Nyquist frequency {nyquist} Hz"),
        ));
    }

    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let (wl, wh) = (warp(low_hz), warp(high_hz));
    let bw = wh - wl;
    let w0_sq = wl * wh;
    let two_fs = Complex64::new(2.0 * fs, 0.0);

    let mut upper = Vec::new();
    let mut real = Vec::new();
    for k in 0..order {
        let theta = std::f64::consts::PI * (2 * k + 1 + order) as f64 / (2 * order) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let q = proto * (bw / 2.0);
        let disc = (q * q - w0_sq).sqrt();
        for s in [q + disc, q - disc] {
            let z = (two_fs + s) / (two_fs - s);
            if z.im.abs() <= 1e-12 * z.norm().max(1.0) {
                real.push(z.re);
            } else if z.im > 0.0 {
                upper.push(z);
            }
        }
    }
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<[f64; 5]> = upper
        .iter()
        .map(|z| [1.0, 0.0, -1.0, -2.0 * z.re, z.norm_sqr()])
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push([1.0, 0.0, -1.0, -(r1 + r2), r1 * r2]);
    }
    if sections.len() != order {
        return Err(Error::Numeric(format!(
            "band-pass design produced {} sections for order {order}",
            sections.len()
        )));
    }

    let mut sos = Sos { sections };
    let center = 2.0 * (w0_sq.sqrt() / (2.0 * fs)).atan() * fs / (2.0 * std::f64::consts::PI);
    let gain = 1.0 / sos.response(center, fs).norm();
    for c in &mut sos.sections[0][..3] {
        *c *= gain;
    }
    Ok(sos)
}

impl Sos {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = s[0] + z1 * s[1] + z2 * s[2];
            let den = 1.0 + z1 * s[3] + z2 * s[4];
            acc * num / den
        })
    }

    /// Direct-form-II-transposed states `[z1, z2]` per section for the steady
    /// response to a unit step.
    pub fn step_state(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let gain = (s[0] + s[1] + s[2]) / (1.0 + s[3] + s[4]);
                let z2 = (s[2] - s[4] * gain) * level;
                let z1 = (s[1] - s[3] * gain) * level + z2;
                level *= gain;
                [z1, z2]
            })
            .collect()
    }

    /// Filters `x` in place from the given per-section state.
    pub fn run(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for v in x.iter_mut() {
            let mut u = *v;
            for (s, z) in self.sections.iter().zip(state.iter_mut()) {
                let y = s[0] * u + z[0];
                z[0] = s[1] * u - s[3] * y + z[1];
                z[1] = s[2] * u - s[4] * y;
                u = y;
            }
            *v = u;
        }
    }

    /// Forward-backward filtering with odd reflection of `pad` samples at each
    /// end and steady-state initial conditions for both passes.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Result<Vec<f64>> {
        let n = x.len();
        if n <= pad {
            return Err(Error::Data(format!(
                "signal of {n} samples is too short for {pad} samples of edge padding"
            )));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let step = self.step_state();
        let scaled = |level: f64| -> Vec<[f64; 2]> { step.iter().map(|z| [z[0] * level, z[1] * level]).collect() };

        let mut state = scaled(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        let mut state = scaled(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        ext.truncate(n + pad);
        ext.drain(..pad);
        Ok(ext)
    }
}

/// Edge padding for zero-phase filtering: three times the band-pass order.
pub fn edge_pad(prototype_order: usize) -> usize {
    3 * 2 * prototype_order
}

/// Zero-phase Butterworth band-pass of every channel of `[C, N]`.
pub fn bandpass(signal: &Tensor, low_hz: f64, high_hz: f64, fs: f64, order: usize) -> Result<Tensor> {
    if signal.shape().len() != 2 {
        return Err(Error::Shape(format!("band-pass expects [C, N], got {:?}", signal.shape())));
    }
    let sos = butter_bandpass(order, low_hz, high_hz, fs)?;
    let n = signal.shape()[1];
    let mut out = Vec::with_capacity(signal.len());
    for ch in signal.data().chunks(n) {
        out.extend(sos.filtfilt(ch, edge_pad(order))?);
    }
    Tensor::from_vec(signal.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analog Butterworth band-pass magnitude at the prewarped frequency.
    fn analog_magnitude(order: usize, low: f64, high: f64, fs: f64, f: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
        let (wl, wh, w) = (warp(low), warp(high), warp(f));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn design_matches_analog_prototype() {
        let sos = butter_bandpass(4, 1.0, 40.0, 500.0).unwrap();
        assert_eq!(sos.sections.len(), 4);
        for f in [0.3, 1.0, 5.0, 10.0, 40.0, 60.0, 120.0, 240.0] {
            let got = sos.response(f, 500.0).norm();
            let want = analog_magnitude(4, 1.0, 40.0, 500.0, f);
            assert!((got - want).abs() < 1e-9, "{f} Hz: {got} vs {want}");
        }
        // -3 dB at both band edges
        for f in [1.0, 40.0] {
            assert!((sos.response(f, 500.0).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        }
    }

    #[test]
    fn poles_inside_unit_circle() {
        for (lo, hi) in [(1.0, 40.0), (0.5, 2.0), (100.0, 240.0)] {
            let sos = butter_bandpass(4, lo, hi, 500.0).unwrap();
            for s in &sos.sections {
                // |z|^2 = a2 for a complex pair
                assert!(s[4] < 1.0 && s[4] > 0.0);
            }
        }
    }

    #[test]
    fn odd_prototype_order() {
        let sos = butter_bandpass(3, 2.0, 30.0, 250.0).unwrap();
        assert_eq!(sos.sections.len(), 3);
        let got = sos.response(10.0, 250.0).norm();
        assert!((got - analog_magnitude(3, 2.0, 30.0, 250.0, 10.0)).abs() < 1e-9);
    }

    #[test]
    fn invalid_bands() {
        assert!(butter_bandpass(4, 0.0, 40.0, 500.0).is_err());
        assert!(butter_bandpass(4, 40.0, 1.0, 500.0).is_err());
        let err = butter_bandpass(4, 1.0, 250.0, 500.0).unwrap_err();
        assert!(err.to_string().contains("preprocess.high_hz"));
    }

    #[test]
    fn step_state_is_steady() {
        let sos = butter_bandpass(4, 1.0, 40.0, 500.0).unwrap();
        let mut state: Vec<[f64; 2]> = sos.step_state().iter().map(|z| [z[0] * 2.5, z[1] * 2.5]).collect();
        let mut x = vec![2.5; 50];
        sos.run(&mut x, &mut state);
        assert!(x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn filtfilt_is_zero_phase() {
        // a symmetric pulse stays symmetric about its center
        let (n, mid) = (8001, 4000);
        let x: Vec<f64> = (0..n).map(|i| (-((i as f64 - mid as f64) / 8.0).powi(2)).exp()).collect();
        let sos = butter_bandpass(4, 1.0, 40.0, 500.0).unwrap();
        let y = sos.filtfilt(&x, 24).unwrap();
        let peak = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, mid);
        for k in 1..1000 {
            assert!((y[mid - k] - y[mid + k]).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn short_signal_rejected() {
        let sos = butter_bandpass(4, 1.0, 40.0, 500.0).unwrap();
        assert!(sos.filtfilt(&[1.0; 24], 24).is_err());
    }
}
