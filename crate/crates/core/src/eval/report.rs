//! Multi-seed aggregation and table rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Class;
use crate::error::{Error, Result};
use crate::eval::metrics::{summarize, RunMetrics, Summary};
use crate::eval::Protocol;
use crate::model::{Variant, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Evaluated subject; the held-out one under LOSO.
    pub subject: String,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub eval_size: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub metrics: RunMetrics,
}

/// Mean and sample std of accuracy, per-class F1 and macro F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub accuracy: Summary,
    pub f1: [Summary; NUM_CLASSES],
    pub macro_f1: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    #[serde(flatten)]
    pub summary: GroupSummary,
}

/// Everything an experiment produced that is a function of config and data.
/// Timing is kept out so repeated runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub variant: Variant,
    pub protocol: Protocol,
    pub trainable_parameters: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    /// Across seeds, per subject.
    pub subjects: Vec<SubjectSummary>,
    /// Mean and std over the per-subject means.
    pub macro_average: GroupSummary,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid report JSON: {e}")))
    }
}

pub fn model_label(variant: Variant) -> &'static str {
    match variant {
        Variant::Full => "ESNNet",
        Variant::ConvOnly => "Conv-only",
    }
}

fn group(accuracy: &[f64], f1: &[[f64; NUM_CLASSES]], macro_f1: &[f64]) -> GroupSummary {
    GroupSummary {
        accuracy: summarize(accuracy),
        f1: std::array::from_fn(|k| summarize(&f1.iter().map(|r| r[k]).collect::<Vec<_>>())),
        macro_f1: summarize(macro_f1),
    }
}

/// Per-subject summaries across seeds (subjects in first-appearance order),
/// then the macro row over the subject means.
pub fn aggregate_runs(variant: Variant, protocol: Protocol, trainable_parameters: usize, runs: Vec<RunRecord>) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(Error::Protocol("no runs to aggregate".into()));
    }
    let mut subjects: Vec<String> = Vec::new();
    let mut seeds: Vec<u64> = Vec::new();
    for r in &runs {
        if !subjects.contains(&r.subject) {
            subjects.push(r.subject.clone());
        }
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    let per_subject: Vec<SubjectSummary> = subjects
        .iter()
        .map(|s| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| &r.subject == s).collect();
            let acc: Vec<f64> = mine.iter().map(|r| r.metrics.accuracy).collect();
            let f1: Vec<[f64; NUM_CLASSES]> = mine
                .iter()
                .map(|r| std::array::from_fn(|k| r.metrics.per_class[k].f1))
                .collect();
            let mf1: Vec<f64> = mine.iter().map(|r| r.metrics.macro_f1).collect();
            SubjectSummary {
                subject: s.clone(),
                summary: group(&acc, &f1, &mf1),
            }
        })
        .collect();
    let acc: Vec<f64> = per_subject.iter().map(|s| s.summary.accuracy.mean).collect();
    let f1: Vec<[f64; NUM_CLASSES]> = per_subject
        .iter()
        .map(|s| std::array::from_fn(|k| s.summary.f1[k].mean))
        .collect();
    let mf1: Vec<f64> = per_subject.iter().map(|s| s.summary.macro_f1.mean).collect();
    Ok(EvalReport {
        model: model_label(variant).to_string(),
        variant,
        protocol,
        trainable_parameters,
        seeds,
        runs,
        subjects: per_subject,
        macro_average: group(&acc, &f1, &mf1),
    })
}

fn percent(s: &Summary) -> String {
    format!("{:.1} ± {:.1}%", 100.0 * s.mean, 100.0 * s.std)
}

fn score(s: &Summary) -> String {
    format!("{:.2} ± {:.2}", s.mean, s.std)
}

fn table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = (0..cols)
            .map(|j| {
                let c = row.get(j).map(String::as_str).unwrap_or("");
                format!("{c}{}", " ".repeat(width[j] - c.chars().count()))
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("-|-"));
        }
    }
}

fn accuracy_table(out: &mut String, title: &str, reports: &[&EvalReport], first_col: &str, last_row: &str) {
    let _ = writeln!(out, "{title}\n");
    let mut subjects: Vec<&str> = Vec::new();
    for r in reports {
        for s in &r.subjects {
            if !subjects.contains(&s.subject.as_str()) {
                subjects.push(&s.subject);
            }
        }
    }
    let mut rows = vec![std::iter::once(first_col.to_string())
        .chain(reports.iter().map(|r| r.model.clone()))
        .collect::<Vec<_>>()];
    for s in subjects {
        let mut row = vec![s.to_string()];
        for r in reports {
            row.push(
                r.subjects
                    .iter()
                    .find(|x| x.subject == s)
                    .map(|x| percent(&x.summary.accuracy))
                    .unwrap_or_else(|| "-".into()),
            );
        }
        rows.push(row);
    }
    rows.push(
        std::iter::once(last_row.to_string())
            .chain(reports.iter().map(|r| percent(&r.macro_average.accuracy)))
            .collect(),
    );
    table(out, &rows);
    out.push('\n');
}

fn f1_table(out: &mut String, title: &str, reports: &[&EvalReport]) {
    let _ = writeln!(out, "{title}\n");
    let mut header = vec!["Model".to_string()];
    header.extend(Class::ALL.iter().map(|c| {
        let name = c.name();
        format!("{}{} (F1)", name[..1].to_uppercase(), &name[1..])
    }));
    header.push("Macro F1".into());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.model.clone()];
        row.extend(r.macro_average.f1.iter().map(score));
        row.push(score(&r.macro_average.macro_f1));
        rows.push(row);
    }
    table(out, &rows);
    out.push('\n');
}

/// Text tables: per-subject accuracy with a macro row and per-class F1, one
/// column or row per report, grouped by protocol.
pub fn render_tables(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let within: Vec<&EvalReport> = reports.iter().filter(|r| r.protocol == Protocol::WithinSubject).collect();
    let loso: Vec<&EvalReport> = reports.iter().filter(|r| r.protocol == Protocol::Loso).collect();
    if !within.is_empty() {
        accuracy_table(
            &mut out,
            "Within-subject validation accuracy (mean ± std over seeds)",
            &within,
            "Subject",
            "Macro Average",
        );
        f1_table(&mut out, "Within-subject F1 by class (macro over subjects)", &within);
    }
    if !loso.is_empty() {
        accuracy_table(
            &mut out,
            "Leave-one-subject-out test accuracy (mean ± std over seeds)",
            &loso,
            "Held-out subject",
            "Mean Accuracy",
        );
        f1_table(&mut out, "Leave-one-subject-out F1 by class (macro over folds)", &loso);
    }
    out
}
