use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use esnnet::checkpoint::{load_checkpoint, save_checkpoint};
use esnnet::data::{load_dataset, preprocess, synth_generate, write_dataset, Segment, Trial};
use esnnet::eval::{
    evaluate_model, render_tables, run_experiment, EpochLog, EvalReport, Experiment, Protocol, RunKey, RunRecord,
    TrainingObserver,
};
use esnnet::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const EVAL_JSON: &str = "eval.json";

/// Prints one progress line per epoch to stderr.
pub struct Progress {
    pub quiet: bool,
}

impl TrainingObserver for Progress {
    fn epoch(&self, run: &RunKey, log: &EpochLog) {
        if !self.quiet {
            eprintln!(
                "{} seed {} epoch {:>2}: loss {:.4}  train {:.3}  val {:.3}",
                run.subject, run.seed, log.epoch, log.train_loss, log.train_accuracy, log.val_accuracy
            );
        }
    }
}

/// Trials from the manifest if one is configured, otherwise synthesized.
pub fn load_trials(cfg: &RunConfig) -> Result<Vec<Trial>> {
    let trials = match &cfg.data.manifest {
        Some(path) => load_dataset(path)?.trials,
        None => synth_generate(&cfg.data.synth)?,
    };
    if let Some(t) = trials.iter().find(|t| t.channels() != cfg.model.channels) {
        return Err(Error::config(
            "model.channels",
            format!("{} but trial of subject {} has {} channels", cfg.model.channels, t.subject, t.channels()),
        ));
    }
    Ok(trials)
}

pub fn load_segments(cfg: &RunConfig) -> Result<Vec<Segment>> {
    preprocess(&load_trials(cfg)?, &cfg.preprocess)
}

/// Writes the synthetic dataset described by `[data.synth]` into `dir`.
pub fn synth(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let trials = synth_generate(&cfg.data.synth)?;
    let manifest = write_dataset(dir, &trials)?;
    cfg.write_to(dir)?;
    Ok(manifest)
}

fn run_dir(output: &Path, record: &RunRecord) -> PathBuf {
    output.join("runs").join(format!("{}_seed{}", record.subject, record.seed))
}

fn write_epoch_log(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for log in history {
        writeln!(file, "{}", serde_json::to_string(log).expect("log serializes"))?;
    }
    Ok(())
}

/// Runs the protocol, then writes every artifact from this thread: the
/// effective config, one checkpoint and epoch log per run, and the report as
/// JSON and text.
pub fn experiment(cfg: &RunConfig, protocol: Protocol, observer: &dyn TrainingObserver) -> Result<EvalReport> {
    let cfg = RunConfig {
        protocol,
        ..cfg.clone()
    };
    let out = &cfg.output_dir;
    cfg.write_to(out)?;
    let segments = load_segments(&cfg)?;
    let exp = Experiment {
        model: cfg.model_config(),
        augment: cfg.augment.clone(),
        protocol,
        jobs: cfg.jobs,
    };
    let (report, runs) = run_experiment(&segments, &exp, observer)?;
    for run in &runs {
        let dir = run_dir(out, &run.record);
        fs::create_dir_all(&dir)?;
        save_checkpoint(&run.model, &dir.join("model.ckpt"))?;
        write_epoch_log(&dir.join("epochs.jsonl"), &run.history)?;
    }
    fs::write(out.join(REPORT_JSON), report.to_json())?;
    fs::write(out.join(REPORT_TEXT), render_tables(std::slice::from_ref(&report)))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub checkpoint: PathBuf,
    pub trainable_parameters: usize,
    pub result: RunRecord,
}

/// Scores a checkpoint on the configured data, optionally restricted to some
/// subjects.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, subjects: &[String]) -> Result<CheckpointEval> {
    let mut model = load_checkpoint(checkpoint)?;
    let m = &model.config().model;
    if m.channels != cfg.model.channels || m.samples != cfg.preprocess.window_samples {
        return Err(Error::config(
            "model",
            format!(
                "checkpoint expects {}x{} segments, configuration produces {}x{}",
                m.channels, m.samples, cfg.model.channels, cfg.preprocess.window_samples
            ),
        ));
    }
    let mut segments = load_segments(cfg)?;
    if !subjects.is_empty() {
        segments.retain(|s| subjects.contains(&s.subject));
        if segments.is_empty() {
            return Err(Error::Data(format!("no segments for subjects {subjects:?}")));
        }
    }
    let result = evaluate_model(&mut model, &segments)?;
    let out = CheckpointEval {
        checkpoint: checkpoint.to_path_buf(),
        trainable_parameters: model.trainable_parameter_count(),
        result,
    };
    cfg.write_to(&cfg.output_dir)?;
    let mut text = serde_json::to_string_pretty(&out).expect("eval serializes");
    text.push('\n');
    fs::write(cfg.output_dir.join(EVAL_JSON), text)?;
    Ok(out)
}

/// Renders stored reports. Each path may be a report file or a run directory.
pub fn report(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        return Err(Error::config("report", "no report files given"));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let file = if p.is_dir() { p.join(REPORT_JSON) } else { p.clone() };
        let text = fs::read_to_string(&file)?;
        reports.push(EvalReport::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?);
    }
    Ok(render_tables(&reports))
}
