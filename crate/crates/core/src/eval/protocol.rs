//! Within-subject and leave-one-subject-out experiments.

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, Segment};
use crate::error::{Error, Result};
use crate::eval::metrics::confusion_and_f1;
use crate::eval::report::{aggregate_runs, EvalReport, RunRecord};
use crate::eval::split::{loso_folds, stratified_split, EVAL_FRACTION};
use crate::eval::trainer::{predict_segments, train_model, Access, EpochLog, RunKey, TrainingObserver};
use crate::model::{build, EsnNet, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Per subject: stratified 70/30 split, scored on the 30%.
    #[default]
    WithinSubject,
    /// Per subject: train on everyone else, scored on that subject. The
    /// early-stopping set is a stratified 30% of the training subjects.
    Loso,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub protocol: Protocol,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub record: RunRecord,
    pub history: Vec<EpochLog>,
    pub model: EsnNet,
}

struct Task {
    key: RunKey,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn subjects_in_order(segments: &[Segment]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in segments {
        if !out.contains(&s.subject) {
            out.push(s.subject.clone());
        }
    }
    out
}

fn plan(segments: &[Segment], exp: &Experiment) -> Result<Vec<Task>> {
    let seeds = &exp.model.train.seeds;
    if seeds.is_empty() {
        return Err(Error::config("train.seeds", "at least one seed is required"));
    }
    let mut tasks = Vec::new();
    match exp.protocol {
        Protocol::WithinSubject => {
            for subject in subjects_in_order(segments) {
                let idx: Vec<usize> = (0..segments.len()).filter(|&i| segments[i].subject == subject).collect();
                let labels: Vec<_> = idx.iter().map(|&i| segments[i].label).collect();
                for &seed in seeds {
                    let split = stratified_split(&labels, EVAL_FRACTION, seed)
                        .map_err(|e| Error::Data(format!("subject {subject}: {e}")))?;
                    let eval: Vec<usize> = split.eval.iter().map(|&j| idx[j]).collect();
                    tasks.push(Task {
                        key: RunKey { subject: subject.clone(), seed },
                        train: split.train.iter().map(|&j| idx[j]).collect(),
                        val: eval.clone(),
                        test: eval,
                    });
                }
            }
        }
        Protocol::Loso => {
            let subjects: Vec<String> = segments.iter().map(|s| s.subject.clone()).collect();
            for fold in loso_folds(&subjects)? {
                let held = fold.held_out.clone().unwrap_or_default();
                let labels: Vec<_> = fold.train.iter().map(|&i| segments[i].label).collect();
                for &seed in seeds {
                    let split = stratified_split(&labels, EVAL_FRACTION, seed)?;
                    tasks.push(Task {
                        key: RunKey { subject: held.clone(), seed },
                        train: split.train.iter().map(|&j| fold.train[j]).collect(),
                        val: split.eval.iter().map(|&j| fold.train[j]).collect(),
                        test: fold.eval.clone(),
                    });
                }
            }
        }
    }
    Ok(tasks)
}

fn execute(segments: &[Segment], exp: &Experiment, task: &Task, observer: &dyn TrainingObserver) -> Result<RunResult> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| &segments[i]).collect::<Vec<_>>();
    let (train, val, test) = (pick(&task.train), pick(&task.val), pick(&task.test));
    let out = train_model(&exp.model, &exp.augment, &train, &val, &task.key, observer)?;
    let mut model = out.model;
    for seg in &test {
        observer.sample(&task.key, Access::Test, seg);
    }
    let pred = predict_segments(&mut model, &test, exp.model.train.batch_size)?;
    let labels: Vec<usize> = test.iter().map(|s| s.label.index()).collect();
    let metrics = confusion_and_f1(&pred, &labels)?;
    let separate_val = task.val != task.test;
    Ok(RunResult {
        record: RunRecord {
            subject: task.key.subject.clone(),
            seed: task.key.seed,
            train_size: train.len(),
            val_size: if separate_val { val.len() } else { 0 },
            eval_size: test.len(),
            epochs_run: out.history.len(),
            best_epoch: out.best_epoch,
            best_val_accuracy: out.best_val_accuracy,
            metrics,
        },
        history: out.history,
        model,
    })
}

/// Runs every (subject, seed) pair of the protocol, in parallel up to
/// `exp.jobs`. Results come back in plan order regardless of scheduling.
pub fn run_experiment(
    segments: &[Segment],
    exp: &Experiment,
    observer: &dyn TrainingObserver,
) -> Result<(EvalReport, Vec<RunResult>)> {
    exp.model.validate()?;
    exp.augment.validate(exp.model.model.samples)?;
    if segments.is_empty() {
        return Err(Error::Data("no segments".into()));
    }
    let tasks = plan(segments, exp)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let results: Vec<RunResult> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|t| execute(segments, exp, t, observer))
            .collect::<Result<Vec<_>>>()
    })?;
    let params = build(&exp.model, 0)?.trainable_parameter_count();
    let report = aggregate_runs(
        exp.model.model.variant,
        exp.protocol,
        params,
        results.iter().map(|r| r.record.clone()).collect(),
    )?;
    Ok((report, results))
}

/// Scores an already trained model on `segments`.
pub fn evaluate_model(model: &mut EsnNet, segments: &[Segment]) -> Result<RunRecord> {
    let refs: Vec<&Segment> = segments.iter().collect();
    let pred = predict_segments(model, &refs, model.config().train.batch_size)?;
    let labels: Vec<usize> = refs.iter().map(|s| s.label.index()).collect();
    Ok(RunRecord {
        subject: subjects_in_order(segments).join("+"),
        seed: model.seed(),
        train_size: 0,
        val_size: 0,
        eval_size: refs.len(),
        epochs_run: 0,
        best_epoch: 0,
        best_val_accuracy: 0.0,
        metrics: confusion_and_f1(&pred, &labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Class, SampleId};
    use crate::rng::RngStream;
    use crate::tensor::Tensor;
    use std::collections::HashMap;
    use std::sync::Mutex;

    fn toy(subjects: usize, per_class: usize, cfg: &ModelConfig) -> Vec<Segment> {
        let (c, t) = (cfg.model.channels, cfg.model.samples);
        let mut rng = RngStream::new(5);
        let mut out = Vec::new();
        for s in 0..subjects {
            for i in 0..per_class {
                for class in Class::ALL {
                    let mut data: Vec<f64> = (0..c * t).map(|_| 0.3 * rng.normal()).collect();
                    for v in &mut data[class.index() * t..(class.index() + 1) * t] {
                        *v += 1.0;
                    }
                    out.push(Segment {
                        data: Tensor::from_vec(&[c, t], data).unwrap(),
                        label: class,
                        subject: format!("s{s}"),
                        id: SampleId {
                            trial: s,
                            event: i * 3 + class.index(),
                        },
                    });
                }
            }
        }
        out
    }

    fn experiment(protocol: Protocol) -> Experiment {
        let mut model = ModelConfig::micro();
        model.train.max_epochs = 3;
        model.train.batch_size = 8;
        model.train.seeds = vec![0, 1];
        Experiment {
            model,
            augment: AugmentConfig::default(),
            protocol,
            jobs: 2,
        }
    }

    #[derive(Default)]
    struct Taint {
        seen: Mutex<HashMap<(String, u64), Vec<(Access, String)>>>,
    }

    impl TrainingObserver for Taint {
        fn sample(&self, run: &RunKey, access: Access, seg: &Segment) {
            self.seen
                .lock()
                .unwrap()
                .entry((run.subject.clone(), run.seed))
                .or_default()
                .push((access, seg.subject.clone()));
        }
    }

    #[test]
    fn loso_never_trains_on_held_out_subject() {
        let exp = experiment(Protocol::Loso);
        let segs = toy(3, 4, &exp.model);
        let taint = Taint::default();
        let (report, runs) = run_experiment(&segs, &exp, &taint).unwrap();
        assert_eq!(runs.len(), 6);
        assert_eq!(report.subjects.len(), 3);
        let seen = taint.seen.lock().unwrap();
        assert_eq!(seen.len(), 6);
        for ((held, _), events) in seen.iter() {
            for (access, subject) in events {
                match access {
                    Access::Test => assert_eq!(subject, held),
                    _ => assert_ne!(subject, held, "{access:?}"),
                }
            }
        }
        for r in &runs {
            assert_eq!(r.record.eval_size, 12);
            assert_eq!(r.record.train_size + r.record.val_size, 24);
        }
    }

    #[test]
    fn within_subject_scores_the_held_out_thirty_percent() {
        let exp = experiment(Protocol::WithinSubject);
        let segs = toy(2, 10, &exp.model);
        let (report, runs) = run_experiment(&segs, &exp, &crate::eval::NoObserver).unwrap();
        for r in &runs {
            assert_eq!(r.record.eval_size, 9);
            assert_eq!(r.record.train_size, 21);
            assert_eq!(r.record.metrics.total(), 9);
            assert_eq!(r.record.best_val_accuracy, r.record.metrics.accuracy);
        }
        assert_eq!(report.runs.len(), 4);
        assert_eq!(report.runs[0].subject, "s0");
        assert_eq!(report.runs[1].seed, 1);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let mut exp = experiment(Protocol::WithinSubject);
        let segs = toy(2, 6, &exp.model);
        let (a, _) = run_experiment(&segs, &exp, &crate::eval::NoObserver).unwrap();
        exp.jobs = 1;
        let (b, _) = run_experiment(&segs, &exp, &crate::eval::NoObserver).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn single_subject_loso_is_a_protocol_error() {
        let exp = experiment(Protocol::Loso);
        let segs = toy(1, 4, &exp.model);
        assert!(matches!(
            run_experiment(&segs, &exp, &crate::eval::NoObserver),
            Err(Error::Protocol(_))
        ));
    }
}
