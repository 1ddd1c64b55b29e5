//! Dataset manifests.
//!
//! A dataset is a directory holding `manifest.json` and one payload file per
//! trial. The manifest:
//!
//! ```json
//! {
//!   "version": 1,
//!   "sample_rate": 500.0,
//!   "channels": 72,
//!   "trials": [
//!     {
//!       "file": "trial_000.f32",
//!       "subject": "s01",
//!       "condition": "laser",
//!       "samples": 30750,
//!       "events": [{ "onset_s": 0.5, "label": "pumping" }]
//!     }
//!   ]
//! }
//! ```
//!
//! `file` is relative to the manifest. `samples` (per channel) is optional;
//! without it the payload length only has to divide evenly by `channels`.
//! Labels are `backside`, `frontside` or `pumping`.
//!
//! A payload is raw little-endian IEEE-754 `f32`, channel-major: all samples
//! of channel 0, then channel 1, and so on, `channels * samples * 4` bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::trial::{Class, Event, Trial};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub sample_rate: f64,
    pub channels: usize,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub file: String,
    pub subject: String,
    #[serde(default)]
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    pub events: Vec<EventEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub onset_s: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_rate: f64,
    pub channels: usize,
    pub trials: Vec<Trial>,
}

impl Dataset {
    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.trials {
            if !out.contains(&t.subject) {
                out.push(t.subject.clone());
            }
        }
        out
    }
}

/// 1-based line of the `n`-th occurrence of `"key"` followed by a colon.
fn key_line(text: &str, key: &str, n: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let mut seen = 0;
    let mut from = 0;
    while let Some(pos) = text[from..].find(&needle) {
        let at = from + pos;
        from = at + needle.len();
        if text[from..].trim_start().starts_with(':') {
            if seen == n {
                return Some(text[..at].matches('\n').count() + 1);
            }
            seen += 1;
        }
    }
    None
}

fn at_line(line: Option<usize>) -> String {
    line.map_or_else(|| "manifest".to_string(), |l| format!("manifest line {l}"))
}

fn read_payload(path: &Path, channels: usize, declared: Option<usize>, what: &str) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{what}: cannot read {}: {e}", path.display())))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!("{what}: payload size {} is not a multiple of 4", bytes.len())));
    }
    let values = bytes.len() / 4;
    let per_channel = match declared {
        Some(n) if n * channels != values => {
            return Err(Error::Data(format!(
                "{what}: payload holds {values} values, {channels} channels x {n} samples needs {}",
                n * channels
            )))
        }
        Some(n) => n,
        None if values % channels != 0 => {
            return Err(Error::Data(format!(
                "{what}: payload of {values} values does not split into {channels} channels"
            )))
        }
        None => values / channels,
    };
    if per_channel == 0 {
        return Err(Error::Data(format!("{what}: empty payload")));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::from_vec(&[channels, per_channel], data)
}

/// Reads and validates a whole dataset. Any inconsistency rejects it, naming
/// the manifest line of the offending trial or event.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Data(format!(
            "{}: manifest version {} is not supported (expected {MANIFEST_VERSION})",
            at_line(key_line(&text, "version", 0)),
            manifest.version
        )));
    }
    if manifest.channels == 0 {
        return Err(Error::Data(format!("{}: channels must be positive", at_line(key_line(&text, "channels", 0)))));
    }
    if !(manifest.sample_rate > 0.0 && manifest.sample_rate.is_finite()) {
        return Err(Error::Data(format!(
            "{}: sample_rate must be positive",
            at_line(key_line(&text, "sample_rate", 0))
        )));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let mut trials = Vec::with_capacity(manifest.trials.len());
    let mut event_no = 0;
    for (ti, entry) in manifest.trials.iter().enumerate() {
        let what = format!("{} (trial {ti}, {})", at_line(key_line(&text, "file", ti)), entry.file);
        let samples = read_payload(&base.join(&entry.file), manifest.channels, entry.samples, &what)?;
        let mut events = Vec::with_capacity(entry.events.len());
        for ev in &entry.events {
            let label: Class = ev.label.parse().map_err(|e: Error| {
                Error::Data(format!("{}: {e}", at_line(key_line(&text, "label", event_no))))
            })?;
            events.push(Event { onset_s: ev.onset_s, label });
            event_no += 1;
        }
        let first_event = event_no - entry.events.len();
        let trial = Trial {
            subject: entry.subject.clone(),
            condition: entry.condition.clone(),
            sample_rate: manifest.sample_rate,
            samples,
            events,
        };
        trial.validate().map_err(|e| {
            let msg = e.to_string();
            // point at the event's own line when the failure is per-event
            let line = msg
                .strip_prefix("data error: event ")
                .and_then(|rest| rest.split_whitespace().next())
                .and_then(|n| n.parse::<usize>().ok())
                .and_then(|n| key_line(&text, "onset_s", first_event + n));
            Error::Data(format!("{what}: {msg}{}", line.map_or(String::new(), |l| format!(" (line {l})"))))
        })?;
        trials.push(trial);
    }
    Ok(Dataset {
        sample_rate: manifest.sample_rate,
        channels: manifest.channels,
        trials,
    })
}

/// Writes `trials` as `dir/manifest.json` plus `trial_NNN.f32` payloads and
/// returns the manifest path. Samples are stored as `f32`.
pub fn write_dataset(dir: &Path, trials: &[Trial]) -> Result<PathBuf> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Data("cannot write an empty dataset".into()))?;
    let (sample_rate, channels) = (first.sample_rate, first.channels());
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(trials.len());
    for (i, t) in trials.iter().enumerate() {
        if t.sample_rate != sample_rate || t.channels() != channels {
            return Err(Error::Data(format!(
                "trial {i} has {} channels at {} Hz, dataset has {channels} at {sample_rate} Hz",
                t.channels(),
                t.sample_rate
            )));
        }
        let file = format!("trial_{i:03}.f32");
        let mut bytes = Vec::with_capacity(t.samples.len() * 4);
        for v in t.samples.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        entries.push(TrialEntry {
            file,
            subject: t.subject.clone(),
            condition: t.condition.clone(),
            samples: Some(t.len()),
            events: t
                .events
                .iter()
                .map(|e| EventEntry {
                    onset_s: e.onset_s,
                    label: e.label.name().to_string(),
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        sample_rate,
        channels,
        trials: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}
