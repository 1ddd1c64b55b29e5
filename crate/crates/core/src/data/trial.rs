use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maneuver classes, in label-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Backside,
    Frontside,
    Pumping,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Backside, Class::Frontside, Class::Pumping];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Data(format!("class index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Backside => "backside",
            Class::Frontside => "frontside",
            Class::Pumping => "pumping",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown label `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub onset_s: f64,
    pub label: Class,
}

/// Seconds of signal an event needs after its onset.
pub const EVENT_SPAN_S: f64 = 0.7;

/// One continuous recording `[C, N]` with its labeled events.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject: String,
    pub condition: String,
    pub sample_rate: f64,
    pub samples: Tensor,
    pub events: Vec<Event>,
}

impl Trial {
    pub fn new(
        subject: impl Into<String>,
        condition: impl Into<String>,
        sample_rate: f64,
        samples: Tensor,
        events: Vec<Event>,
    ) -> Result<Self> {
        let trial = Self {
            subject: subject.into(),
            condition: condition.into(),
            sample_rate,
            samples,
            events,
        };
        trial.validate()?;
        Ok(trial)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Data(format!("sample rate {} is not positive", self.sample_rate)));
        }
        if self.samples.shape().len() != 2 {
            return Err(Error::Data(format!(
                "trial samples must be [channels, N], got {:?}",
                self.samples.shape()
            )));
        }
        if let Some(i) = self.samples.data().iter().position(|v| !v.is_finite()) {
            let n = self.len();
            return Err(Error::Data(format!(
                "non-finite sample at channel {}, index {}",
                i / n,
                i % n
            )));
        }
        let duration = self.duration_s();
        for (i, e) in self.events.iter().enumerate() {
            if !(e.onset_s >= 0.0 && e.onset_s + EVENT_SPAN_S <= duration + 1e-9) {
                return Err(Error::Data(format!(
                    "event {i} onset {} s leaves less than {EVENT_SPAN_S} s in a {duration} s recording",
                    e.onset_s
                )));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[0]
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }
}

/// Where a segment came from: trial index within its dataset and event index
/// within the trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId {
    pub trial: usize,
    pub event: usize,
}

/// A model-ready window `[C, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub data: Tensor,
    pub label: Class,
    pub subject: String,
    pub id: SampleId,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for c in Class::ALL {
            assert_eq!(c.name().parse::<Class>().unwrap(), c);
            assert_eq!(Class::from_index(c.index()).unwrap(), c);
        }
        assert!("sideways".parse::<Class>().is_err());
        assert!(Class::from_index(3).is_err());
    }

    #[test]
    fn onset_range_enforced() {
        let samples = Tensor::zeros(&[2, 1000]).unwrap();
        let ok = Event { onset_s: 1.3, label: Class::Pumping };
        assert!(Trial::new("s1", "laser", 500.0, samples.clone(), vec![ok]).is_ok());
        let late = Event { onset_s: 1.31, label: Class::Pumping };
        let err = Trial::new("s1", "laser", 500.0, samples, vec![ok, late]).unwrap_err();
        assert!(err.to_string().contains("event 1"), "{err}");
    }

    #[test]
    fn nan_payload_rejected() {
        let mut samples = Tensor::zeros(&[2, 10]).unwrap();
        samples.set(&[1, 4], f64::NAN).unwrap();
        let err = Trial::new("s1", "led", 500.0, samples, vec![]).unwrap_err();
        assert!(err.to_string().contains("channel 1, index 4"), "{err}");
    }
}
