//! Mini-batch Adam training with early stopping on validation accuracy.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentConfig, Segment};
use crate::error::{Error, Result};
use crate::model::{build, EsnNet, ModelConfig};
use crate::optim::{AdamState, EarlyStopper};
use crate::rng::{tag, RngStream};
use crate::tensor::Tensor;

/// Identifies one training run: the evaluated subject (the held-out one for
/// LOSO) and the seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub subject: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    /// Used in a training batch (gradients, batch-norm statistics).
    Train,
    /// Passed through augmentation.
    Augment,
    /// Scored for early stopping.
    Validate,
    /// Scored for the final report.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

/// Hooks into the training loop. Called from worker threads.
pub trait TrainingObserver: Sync {
    fn sample(&self, _run: &RunKey, _access: Access, _segment: &Segment) {}
    fn epoch(&self, _run: &RunKey, _log: &EpochLog) {}
}

pub struct NoObserver;

impl TrainingObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights restored to the best validation epoch.
    pub model: EsnNet,
    pub history: Vec<EpochLog>,
    /// One-based.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Stacks segments into a `[B, C, T]` batch.
pub fn stack(segments: &[&Segment]) -> Result<Tensor> {
    let first = segments
        .first()
        .ok_or_else(|| Error::Data("cannot batch zero segments".into()))?;
    let shape = first.data.shape().to_vec();
    let mut data = Vec::with_capacity(segments.len() * first.data.len());
    for s in segments {
        if s.data.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "segment {:?} has shape {:?}, expected {shape:?}",
                s.id,
                s.data.shape()
            )));
        }
        data.extend_from_slice(s.data.data());
    }
    Tensor::from_vec(&[segments.len(), shape[0], shape[1]], data)
}

/// Inference-mode predictions, in input order.
pub fn predict_segments(model: &mut EsnNet, segments: &[&Segment], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(batch_size.max(1)) {
        out.extend(model.predict(&stack(chunk)?)?);
    }
    Ok(out)
}

fn accuracy(pred: &[usize], segments: &[&Segment]) -> f64 {
    let hits = pred.iter().zip(segments).filter(|(&p, s)| p == s.label.index()).count();
    hits as f64 / segments.len().max(1) as f64
}

fn argmax_rows(probabilities: &Tensor) -> Vec<usize> {
    probabilities
        .data()
        .chunks(probabilities.shape()[1])
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Trains a fresh model built from `seed`. Augmentation is applied to
/// training batches only; validation segments are scored untouched.
pub fn train_model(
    config: &ModelConfig,
    augmentation: &AugmentConfig,
    train: &[&Segment],
    val: &[&Segment],
    run: &RunKey,
    observer: &dyn TrainingObserver,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "run {}/{}: {} training and {} validation segments",
            run.subject,
            run.seed,
            train.len(),
            val.len()
        )));
    }
    augmentation.validate(config.model.samples)?;
    let tc = &config.train;
    let mut model = build(config, run.seed)?;
    let mut adam = AdamState::new(tc.learning_rate);
    let mut stopper = EarlyStopper::new(tc.patience);
    let root = RngStream::new(run.seed);
    let mut order_rng = root.derive(tag("train.order"));
    let mut aug_rng = root.derive(tag("train.augment"));
    let mut best = model.snapshot();
    let mut history = Vec::new();
    let start = Instant::now();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=tc.max_epochs {
        order_rng.shuffle(&mut order);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let mut rows = Vec::with_capacity(chunk.len() * train[0].data.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let seg = train[i];
                observer.sample(run, Access::Train, seg);
                if augmentation.enabled {
                    observer.sample(run, Access::Augment, seg);
                    rows.extend_from_slice(augment(&seg.data, augmentation, &mut aug_rng).data());
                } else {
                    rows.extend_from_slice(seg.data.data());
                }
                labels.push(seg.label.index());
            }
            let shape = train[chunk[0]].data.shape();
            let batch = Tensor::from_vec(&[chunk.len(), shape[0], shape[1]], rows)?;
            let loss = model.loss_and_backward(&batch, &labels)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "run {}/{}: non-finite loss at epoch {epoch}, batch {b}",
                    run.subject, run.seed
                )));
            }
            adam.step(&mut model.parameters_mut())?;
            loss_sum += loss.cross_entropy * chunk.len() as f64;
            hits += argmax_rows(&loss.probabilities)
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
        }

        for seg in val {
            observer.sample(run, Access::Validate, seg);
        }
        let val_pred = predict_segments(&mut model, val, tc.batch_size)?;
        let val_accuracy = accuracy(&val_pred, val);
        if stopper.observe(val_accuracy)? {
            best = model.snapshot();
        }
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        observer.epoch(run, &log);
        history.push(log);
        if stopper.should_stop() {
            break;
        }
    }
    model.restore(&best)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best_epoch() + 1,
        best_val_accuracy: stopper.best().unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Class, SampleId};
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Micro-sized separable task: class k has a constant offset on channel k.
    pub(crate) fn toy_segments(n_per_class: usize, cfg: &ModelConfig, seed: u64) -> Vec<Segment> {
        let (c, t) = (cfg.model.channels, cfg.model.samples);
        let mut rng = RngStream::new(seed);
        let mut out = Vec::new();
        for i in 0..n_per_class {
            for class in Class::ALL {
                let mut data: Vec<f64> = (0..c * t).map(|_| 0.3 * rng.normal()).collect();
                for v in &mut data[class.index() * t..(class.index() + 1) * t] {
                    *v += 1.0;
                }
                out.push(Segment {
                    data: Tensor::from_vec(&[c, t], data).unwrap(),
                    label: class,
                    subject: "toy".into(),
                    id: SampleId {
                        trial: i,
                        event: class.index(),
                    },
                });
            }
        }
        out
    }

    fn micro() -> ModelConfig {
        let mut cfg = ModelConfig::micro();
        cfg.train.batch_size = 8;
        cfg.train.max_epochs = 30;
        cfg.train.learning_rate = 1e-2;
        cfg
    }

    #[derive(Default)]
    struct Counter {
        augmented: AtomicUsize,
        validated: AtomicUsize,
        epochs: AtomicUsize,
        val_ids: std::sync::Mutex<Vec<SampleId>>,
    }

    impl TrainingObserver for Counter {
        fn sample(&self, _run: &RunKey, access: Access, seg: &Segment) {
            match access {
                Access::Augment => {
                    self.augmented.fetch_add(1, Ordering::Relaxed);
                    assert!(!self.val_ids.lock().unwrap().contains(&seg.id));
                }
                Access::Validate => {
                    self.validated.fetch_add(1, Ordering::Relaxed);
                }
                _ => {}
            }
        }
        fn epoch(&self, _run: &RunKey, _log: &EpochLog) {
            self.epochs.fetch_add(1, Ordering::Relaxed);
        }
    }

    #[test]
    fn learns_separable_task_and_restores_best() {
        let mut cfg = micro();
        cfg.train.max_epochs = 60;
        cfg.train.patience = 20;
        let segs = toy_segments(20, &cfg, 1);
        let (train, val): (Vec<&Segment>, Vec<&Segment>) = segs.iter().partition(|s| s.id.trial < 14);
        let run = RunKey { subject: "toy".into(), seed: 3 };
        let counter = Counter::default();
        counter.val_ids.lock().unwrap().extend(val.iter().map(|s| s.id));
        let out = train_model(&cfg, &AugmentConfig::default(), &train, &val, &run, &counter).unwrap();
        assert!(out.best_val_accuracy >= 0.9, "{}", out.best_val_accuracy);
        let mut model = out.model.clone();
        let acc = accuracy(&predict_segments(&mut model, &val, 8).unwrap(), &val);
        assert_eq!(acc, out.best_val_accuracy);
        assert_eq!(counter.epochs.load(Ordering::Relaxed), out.history.len());
        assert_eq!(counter.augmented.load(Ordering::Relaxed), out.history.len() * train.len());
        assert_eq!(counter.validated.load(Ordering::Relaxed), out.history.len() * val.len());
        assert!(out.history.iter().all(|h| h.train_loss.is_finite()));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = micro();
        let segs = toy_segments(6, &cfg, 2);
        let (train, val): (Vec<&Segment>, Vec<&Segment>) = segs.iter().partition(|s| s.id.trial < 4);
        let run = RunKey { subject: "toy".into(), seed: 9 };
        let a = train_model(&cfg, &AugmentConfig::default(), &train, &val, &run, &NoObserver).unwrap();
        let b = train_model(&cfg, &AugmentConfig::default(), &train, &val, &run, &NoObserver).unwrap();
        assert_eq!(a.model.snapshot(), b.model.snapshot());
        let strip = |h: &[EpochLog]| h.iter().map(|l| (l.train_loss, l.val_accuracy)).collect::<Vec<_>>();
        assert_eq!(strip(&a.history), strip(&b.history));
    }

    #[test]
    fn early_stopping_bounds_epochs() {
        let mut cfg = micro();
        cfg.train.patience = 2;
        cfg.train.max_epochs = 40;
        let segs = toy_segments(6, &cfg, 2);
        let (train, val): (Vec<&Segment>, Vec<&Segment>) = segs.iter().partition(|s| s.id.trial < 4);
        let run = RunKey { subject: "toy".into(), seed: 0 };
        let out = train_model(&cfg, &AugmentConfig::disabled(), &train, &val, &run, &NoObserver).unwrap();
        assert!(out.history.len() <= out.best_epoch + 2);
    }

    #[test]
    fn empty_sets_rejected() {
        let cfg = micro();
        let segs = toy_segments(2, &cfg, 0);
        let all: Vec<&Segment> = segs.iter().collect();
        let run = RunKey { subject: "toy".into(), seed: 0 };
        assert!(train_model(&cfg, &AugmentConfig::default(), &all, &[], &run, &NoObserver).is_err());
    }
}
