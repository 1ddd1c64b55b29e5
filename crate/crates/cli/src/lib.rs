//! Command-line front-end: dataset synthesis, training, evaluation, LOSO
//! runs and report rendering.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use esnnet::eval::Protocol;
use esnnet::{Error, ErrorCategory};

pub use config::{parse_config, parse_config_str, DataConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "esnnet", version, about = "ESNNet EEG classifier: synthesize, train, evaluate, report")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set esn.leak_rate=0.3`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replaces `output_dir`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Replaces `jobs`.
    #[arg(short, long)]
    pub jobs: Option<usize>,
    /// No per-epoch progress on stderr.
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the `[data.synth]` dataset as a manifest plus payload files.
    Synth(ConfigArgs),
    /// Within-subject protocol over every subject and seed.
    Train(ConfigArgs),
    /// Score a checkpoint on the configured data.
    Eval {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict to these subjects. Repeatable.
        #[arg(long = "subject")]
        subjects: Vec<String>,
    },
    /// Leave-one-subject-out protocol.
    Loso(ConfigArgs),
    /// Render stored JSON reports as tables.
    Report {
        /// Report files or run directories.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the tables here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
        ErrorCategory::Io => 5,
    }
}

fn resolve(args: &ConfigArgs) -> esnnet::Result<RunConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(out) = &args.output {
        overrides.push(format!("output_dir={}", toml::Value::String(out.display().to_string())));
    }
    if let Some(j) = args.jobs {
        overrides.push(format!("jobs={j}"));
    }
    parse_config(args.config.as_deref(), &overrides)
}

/// Executes one command, printing its human-readable result on stdout.
pub fn run(cli: Cli) -> esnnet::Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let cfg = resolve(&args)?;
            let manifest = commands::synth(&cfg, &cfg.output_dir)?;
            println!("{}", manifest.display());
        }
        Command::Train(args) => {
            let cfg = resolve(&args)?;
            let report = commands::experiment(&cfg, Protocol::WithinSubject, &commands::Progress { quiet: args.quiet })?;
            print!("{}", esnnet::eval::render_tables(&[report]));
        }
        Command::Loso(args) => {
            let cfg = resolve(&args)?;
            let report = commands::experiment(&cfg, Protocol::Loso, &commands::Progress { quiet: args.quiet })?;
            print!("{}", esnnet::eval::render_tables(&[report]));
        }
        Command::Eval { args, checkpoint, subjects } => {
            let cfg = resolve(&args)?;
            let out = commands::eval(&cfg, &checkpoint, &subjects)?;
            let m = &out.result.metrics;
            println!("accuracy {:.4} over {} segments", m.accuracy, m.total());
            for (c, s) in esnnet::data::Class::ALL.iter().zip(&m.per_class) {
                println!("{:<10} precision {:.3}  recall {:.3}  f1 {:.3}", c.name(), s.precision, s.recall, s.f1);
            }
        }
        Command::Report { reports, out } => {
            let text = commands::report(&reports)?;
            if let Some(path) = out {
                std::fs::write(path, &text)?;
            }
            print!("{text}");
        }
    }
    Ok(())
}
