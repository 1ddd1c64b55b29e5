use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::filter::bandpass;
use crate::data::trial::{SampleId, Segment, Trial};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Band-pass the continuous trial, cut one window per event, z-score each
/// window per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Prototype order; the band-pass has twice as many poles.
    pub filter_order: usize,
    /// Window start relative to the event onset.
    pub window_offset_s: f64,
    pub window_samples: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            low_hz: 1.0,
            high_hz: 40.0,
            filter_order: 4,
            window_offset_s: 0.2,
            window_samples: 250,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_samples == 0 {
            return Err(Error::config("preprocess.window_samples", "must be at least 1"));
        }
        if !(self.window_offset_s >= 0.0 && self.window_offset_s.is_finite()) {
            return Err(Error::config("preprocess.window_offset_s", "must be non-negative"));
        }
        if self.filter_order == 0 {
            return Err(Error::config("preprocess.filter_order", "must be at least 1"));
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return Err(Error::config("preprocess.low_hz", "needs 0 < low_hz < high_hz"));
        }
        Ok(())
    }
}

/// Sample range `[start, start + len)` of the window for an event at
/// `onset_s`, with `start = round((onset_s + offset_s) * fs)`.
pub fn window_bounds(onset_s: f64, fs: f64, offset_s: f64, len: usize) -> (usize, usize) {
    let start = ((onset_s + offset_s) * fs).round().max(0.0) as usize;
    (start, start + len)
}

/// Copies the window of every channel out of `[C, N]`.
pub fn extract_window(samples: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (channels, n) = (samples.shape()[0], samples.shape()[1]);
    if start + len > n {
        return Err(Error::Data(format!(
            "window [{start}, {}) exceeds the recording of {n} samples",
            start + len
        )));
    }
    let mut out = Vec::with_capacity(channels * len);
    for ch in samples.data().chunks(n) {
        out.extend_from_slice(&ch[start..start + len]);
    }
    Tensor::from_vec(&[channels, len], out)
}

/// Per channel: subtract the mean, divide by the population standard
/// deviation. Channels with std below 1e-8 become all zeros.
pub fn zscore(segment: &Tensor) -> Tensor {
    let len = *segment.shape().last().unwrap();
    let mut out = segment.clone();
    for ch in out.data_mut().chunks_mut(len) {
        let mean = ch.iter().sum::<f64>() / len as f64;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let std = var.sqrt();
        if std < 1e-8 {
            ch.iter_mut().for_each(|v| *v = 0.0);
        } else {
            ch.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    out
}

/// The raw (unfiltered, unnormalized) window of one event.
pub fn extract_segment(trial: &Trial, event: usize, cfg: &PreprocessConfig) -> Result<Tensor> {
    let ev = trial
        .events
        .get(event)
        .ok_or_else(|| Error::Data(format!("trial has no event {event}")))?;
    let (start, _) = window_bounds(ev.onset_s, trial.sample_rate, cfg.window_offset_s, cfg.window_samples);
    extract_window(&trial.samples, start, cfg.window_samples)
}

/// Full pipeline for one trial; `trial_index` is recorded in each segment id.
pub fn segment_trial(trial: &Trial, trial_index: usize, cfg: &PreprocessConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let filtered = bandpass(&trial.samples, cfg.low_hz, cfg.high_hz, trial.sample_rate, cfg.filter_order)?;
    trial
        .events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let (start, _) = window_bounds(ev.onset_s, trial.sample_rate, cfg.window_offset_s, cfg.window_samples);
            let raw = extract_window(&filtered, start, cfg.window_samples)
                .map_err(|e| Error::Data(format!("trial {trial_index}, event {i}: {e}")))?;
            Ok(Segment {
                data: zscore(&raw),
                label: ev.label,
                subject: trial.subject.clone(),
                id: SampleId { trial: trial_index, event: i },
            })
        })
        .collect()
}

/// Segments of every trial, in trial then event order. Trials are processed
/// in parallel; the result does not depend on the thread count.
pub fn preprocess(trials: &[Trial], cfg: &PreprocessConfig) -> Result<Vec<Segment>> {
    let per_trial: Vec<Vec<Segment>> = trials
        .par_iter()
        .enumerate()
        .map(|(i, t)| segment_trial(t, i, cfg))
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::trial::{Class, Event};

    fn ramp_trial(channels: usize, n: usize, onsets: &[f64]) -> Trial {
        let data = (0..channels * n).map(|i| (i % n) as f64 + 1000.0 * (i / n) as f64).collect();
        Trial::new(
            "s",
            "",
            500.0,
            Tensor::from_vec(&[channels, n], data).unwrap(),
            onsets.iter().map(|&o| Event { onset_s: o, label: Class::Backside }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_bounds(0.0, 500.0, 0.2, 250), (100, 350));
        assert_eq!(window_bounds(1.0, 500.0, 0.2, 250), (600, 850));
    }

    #[test]
    fn ramp_segment_is_index_ramp() {
        let trial = ramp_trial(3, 1000, &[0.0, 1.0]);
        let seg = extract_segment(&trial, 0, &PreprocessConfig::default()).unwrap();
        assert_eq!(seg.shape(), &[3, 250]);
        for c in 0..3 {
            for t in 0..250 {
                assert_eq!(seg.get(&[c, t]).unwrap(), (100 + t) as f64 + 1000.0 * c as f64);
            }
        }
    }

    #[test]
    fn window_past_end_rejected() {
        let trial = ramp_trial(1, 400, &[]);
        assert!(extract_window(&trial.samples, 151, 250).is_err());
        assert!(extract_window(&trial.samples, 150, 250).is_ok());
    }

    #[test]
    fn zscore_hand_values() {
        let x = Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        let z = zscore(&x);
        // mean 2.5, population std sqrt(1.25)
        let s = 1.25f64.sqrt();
        let want = [-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s];
        for (a, b) in z.data()[..4].iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(&z.data()[4..], &[0.0; 4]);
    }

    #[test]
    fn pipeline_output_is_normalized_and_deterministic() {
        let mut r = crate::rng::RngStream::new(3);
        let n = 1500;
        let data = (0..4 * n).map(|_| r.normal()).collect();
        let trial = Trial::new(
            "s9",
            "led",
            500.0,
            Tensor::from_vec(&[4, n], data).unwrap(),
            vec![Event { onset_s: 0.5, label: Class::Pumping }, Event { onset_s: 2.2, label: Class::Frontside }],
        )
        .unwrap();
        let cfg = PreprocessConfig::default();
        let a = preprocess(std::slice::from_ref(&trial), &cfg).unwrap();
        let b = preprocess(std::slice::from_ref(&trial), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].id, SampleId { trial: 0, event: 1 });
        assert_eq!(a[1].label, Class::Frontside);
        for seg in &a {
            for ch in seg.data.data().chunks(250) {
                let mean = ch.iter().sum::<f64>() / 250.0;
                let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 250.0;
                assert!(mean.abs() < 1e-12);
                assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}
