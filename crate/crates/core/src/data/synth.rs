//! Synthetic three-class recordings.
//!
//! Class `c` is an oscillation at `CLASS_FREQUENCIES_HZ[c]` that appears
//! shortly after each event onset, projected onto the channels through a
//! class-specific spatial pattern. Each subject sees a randomly perturbed copy
//! of every pattern. Background activity is pink plus white noise on every
//! channel.

use serde::{Deserialize, Serialize};

use crate::data::trial::{Class, Event, Trial};
use crate::error::{Error, Result};
use crate::layers::fft::{fast_len, RealFft};
use crate::rng::{tag, RngStream};
use crate::tensor::Tensor;

pub const CLASS_FREQUENCIES_HZ: [f64; 3] = [8.0, 14.0, 22.0];

/// Silence before the first event.
const LEAD_S: f64 = 0.5;
/// Signal after the last onset.
const TAIL_S: f64 = 1.0;
/// Burst extent relative to the onset, and its cosine ramp length.
const BURST_START_S: f64 = 0.1;
const BURST_END_S: f64 = 0.8;
const RAMP_S: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    /// Events per class per subject.
    pub per_class: usize,
    pub channels: usize,
    pub sample_rate: f64,
    /// Standard deviation of each of the pink and white noise components.
    pub noise_scale: f64,
    pub signal_amplitude: f64,
    /// Size of the per-subject pattern perturbation relative to the pattern.
    pub subject_variability: f64,
    pub events_per_trial: usize,
    pub event_spacing_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 3,
            per_class: 300,
            channels: 72,
            sample_rate: 500.0,
            noise_scale: 0.5,
            signal_amplitude: 1.0,
            subject_variability: 0.5,
            events_per_trial: 60,
            event_spacing_s: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("synth.subjects", self.subjects),
            ("synth.per_class", self.per_class),
            ("synth.channels", self.channels),
            ("synth.events_per_trial", self.events_per_trial),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.sample_rate > 2.0 * CLASS_FREQUENCIES_HZ[2]) {
            return Err(Error::config("synth.sample_rate", "too low for the class frequencies"));
        }
        if !(self.event_spacing_s >= BURST_END_S) {
            return Err(Error::config(
                "synth.event_spacing_s",
                format!("must be at least {BURST_END_S} s"),
            ));
        }
        for (key, v) in [
            ("synth.noise_scale", self.noise_scale),
            ("synth.signal_amplitude", self.signal_amplitude),
            ("synth.subject_variability", self.subject_variability),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct TrialPlan {
    subject: usize,
    condition: &'static str,
    labels: Vec<Class>,
}

/// Deterministic generator; trial `i` depends only on the config and `i`.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    cfg: SynthConfig,
    /// `[subject][class][channel]`
    patterns: Vec<[Vec<f64>; 3]>,
    plan: Vec<TrialPlan>,
}

pub fn subject_name(s: usize) -> String {
    format!("s{:02}", s + 1)
}

impl SynthGenerator {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let root = RngStream::new(cfg.seed);
        let c = cfg.channels;
        let mut base = root.derive(tag("synth.patterns"));
        let base: [Vec<f64>; 3] = std::array::from_fn(|_| (0..c).map(|_| base.normal()).collect());

        let mut patterns = Vec::with_capacity(cfg.subjects);
        let mut plan = Vec::new();
        for s in 0..cfg.subjects {
            let mut r = root.derive(tag(&format!("synth.subject.{s}")));
            patterns.push(std::array::from_fn(|k| {
                base[k].iter().map(|a| a + cfg.subject_variability * r.normal()).collect()
            }));
            let mut labels: Vec<Class> = Class::ALL
                .iter()
                .flat_map(|&k| std::iter::repeat_n(k, cfg.per_class))
                .collect();
            root.derive(tag(&format!("synth.labels.{s}"))).shuffle(&mut labels);
            for (j, chunk) in labels.chunks(cfg.events_per_trial).enumerate() {
                plan.push(TrialPlan {
                    subject: s,
                    condition: if j % 2 == 0 { "laser" } else { "led" },
                    labels: chunk.to_vec(),
                });
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            patterns,
            plan,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn trial_count(&self) -> usize {
        self.plan.len()
    }

    pub fn trial(&self, index: usize) -> Result<Trial> {
        let plan = self
            .plan
            .get(index)
            .ok_or_else(|| Error::Data(format!("synthetic dataset has no trial {index}")))?;
        let cfg = &self.cfg;
        let fs = cfg.sample_rate;
        let c = cfg.channels;
        let events = plan.labels.len();
        let duration = LEAD_S + (events - 1) as f64 * cfg.event_spacing_s + TAIL_S;
        let n = (duration * fs).round() as usize;
        let mut rng = RngStream::new(self.cfg.seed).derive(tag(&format!("synth.trial.{index}")));

        let mut fft = RealFft::new(fast_len(n));
        let mut data = Vec::with_capacity(c * n);
        for _ in 0..c {
            let pink = pink_noise(&mut fft, n, &mut rng);
            data.extend(pink.iter().map(|p| cfg.noise_scale * (p + rng.normal())));
        }

        let ramp = (RAMP_S * fs).round().max(1.0);
        let burst_len = ((BURST_END_S - BURST_START_S) * fs).round() as usize;
        let mut event_list = Vec::with_capacity(events);
        for (j, &label) in plan.labels.iter().enumerate() {
            let onset_s = LEAD_S + j as f64 * cfg.event_spacing_s;
            let amp = cfg.signal_amplitude * (1.0 + 0.2 * rng.normal()).max(0.2);
            let freq = CLASS_FREQUENCIES_HZ[label.index()] * (1.0 + 0.02 * rng.normal());
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            let start = ((onset_s + BURST_START_S) * fs).round() as usize;
            let pattern = &self.patterns[plan.subject][label.index()];
            for k in 0..burst_len.min(n.saturating_sub(start)) {
                let edge = (k as f64).min((burst_len - 1 - k) as f64);
                let env = if edge < ramp {
                    0.5 - 0.5 * (std::f64::consts::PI * edge / ramp).cos()
                } else {
                    1.0
                };
                let v = amp * env * (std::f64::consts::TAU * freq * k as f64 / fs + phase).sin();
                for (ch, p) in pattern.iter().enumerate() {
                    data[ch * n + start + k] += p * v;
                }
            }
            event_list.push(Event { onset_s, label });
        }
        // payloads are stored as f32; keep in-memory trials identical to loaded ones
        data.iter_mut().for_each(|v| *v = *v as f32 as f64);

        Trial::new(
            subject_name(plan.subject),
            plan.condition,
            fs,
            Tensor::from_vec(&[c, n], data)?,
            event_list,
        )
    }
}

/// Unit-variance 1/f noise of length `n` shaped in the frequency domain.
fn pink_noise(fft: &mut RealFft, n: usize, rng: &mut RngStream) -> Vec<f64> {
    use realfft::num_complex::Complex64;
    let bins = fft.bins();
    let mut spec = Vec::with_capacity(bins);
    spec.push(Complex64::new(0.0, 0.0));
    for k in 1..bins {
        let scale = 1.0 / (k as f64).sqrt();
        spec.push(Complex64::new(rng.normal() * scale, rng.normal() * scale));
    }
    let mut out = vec![0.0; fft.len()];
    fft.inverse(&spec, &mut out);
    out.truncate(n);
    let mean = out.iter().sum::<f64>() / n as f64;
    let std = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    out.iter_mut().for_each(|v| *v = (*v - mean) / std);
    out
}

/// All trials of a synthetic dataset, in subject order.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Trial>> {
    let g = SynthGenerator::new(cfg)?;
    (0..g.trial_count()).map(|i| g.trial(i)).collect()
}
