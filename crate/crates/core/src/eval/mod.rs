//! Splits, training runs, metrics and reports.

pub mod metrics;
pub mod protocol;
pub mod report;
pub mod split;
pub mod trainer;

pub use metrics::{confusion_and_f1, summarize, ClassScores, RunMetrics, Summary};
pub use protocol::{evaluate_model, run_experiment, Experiment, Protocol, RunResult};
pub use report::{aggregate_runs, model_label, render_tables, EvalReport, GroupSummary, RunRecord, SubjectSummary};
pub use split::{loso_folds, stratified_split, Scheme, SplitPlan, EVAL_FRACTION};
pub use trainer::{predict_segments, stack, train_model, Access, EpochLog, NoObserver, RunKey, TrainOutcome, TrainingObserver};
