use serde::{Deserialize, Serialize};

use crate::data::Class;
use crate::error::{Error, Result};
use crate::rng::{tag, RngStream};

/// Fraction of each class held out for evaluation.
pub const EVAL_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    StratifiedHoldout,
    Loso,
}

/// Index sets into some sample list. Both lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub scheme: Scheme,
    pub seed: u64,
    pub held_out: Option<String>,
}

/// Per class: seeded shuffle, then the first `round(eval_fraction * n_c)`
/// indices go to evaluation and the rest to training.
pub fn stratified_split(labels: &[Class], eval_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::config("eval_fraction", format!("{eval_fraction} outside (0, 1)")));
    }
    let root = RngStream::new(seed).derive(tag("split.stratified"));
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in Class::ALL {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} samples; a stratified split needs at least 2",
                idx.len()
            )));
        }
        root.derive(class.index() as u64).shuffle(&mut idx);
        let n_eval = ((eval_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        eval.extend_from_slice(&idx[..n_eval]);
        train.extend_from_slice(&idx[n_eval..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok(SplitPlan {
        train,
        eval,
        scheme: Scheme::StratifiedHoldout,
        seed,
        held_out: None,
    })
}

/// One fold per distinct subject (first-appearance order): that subject's
/// samples are evaluated, every other sample trains.
pub fn loso_folds(subjects: &[String]) -> Result<Vec<SplitPlan>> {
    let mut distinct: Vec<&String> = Vec::new();
    for s in subjects {
        if !distinct.contains(&s) {
            distinct.push(s);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            distinct.len()
        )));
    }
    Ok(distinct
        .into_iter()
        .map(|held| {
            let (eval, train): (Vec<usize>, Vec<usize>) = (0..subjects.len()).partition(|&i| &subjects[i] == held);
            SplitPlan {
                train,
                eval,
                scheme: Scheme::Loso,
                seed: 0,
                held_out: Some(held.clone()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: [usize; 3]) -> Vec<Class> {
        Class::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn seventy_thirty_per_class() {
        let l = labels([100, 100, 100]);
        let plan = stratified_split(&l, EVAL_FRACTION, 4).unwrap();
        for c in Class::ALL {
            assert_eq!(plan.eval.iter().filter(|&&i| l[i] == c).count(), 30);
            assert_eq!(plan.train.iter().filter(|&&i| l[i] == c).count(), 70);
        }
        assert_eq!(plan, stratified_split(&l, EVAL_FRACTION, 4).unwrap());
        assert_ne!(plan, stratified_split(&l, EVAL_FRACTION, 5).unwrap());
    }

    #[test]
    fn small_class_rounding() {
        let l = labels([7, 2, 3]);
        let plan = stratified_split(&l, EVAL_FRACTION, 0).unwrap();
        let count = |set: &[usize], c| set.iter().filter(|&&i| l[i] == c).count();
        assert_eq!(count(&plan.eval, Class::Backside), 2);
        assert_eq!(count(&plan.train, Class::Backside), 5);
        assert_eq!(count(&plan.eval, Class::Frontside), 1);
        assert_eq!(count(&plan.eval, Class::Pumping), 1);
    }

    #[test]
    fn tiny_class_rejected() {
        let err = stratified_split(&labels([5, 1, 5]), EVAL_FRACTION, 0).unwrap_err();
        assert!(err.to_string().contains("frontside"));
    }

    #[test]
    fn loso_fold_per_subject() {
        let subjects: Vec<String> = ["b", "a", "b", "c", "a"].iter().map(|s| s.to_string()).collect();
        let folds = loso_folds(&subjects).unwrap();
        assert_eq!(folds.len(), 3);
        assert_eq!(folds[0].held_out.as_deref(), Some("b"));
        assert_eq!(folds[0].eval, vec![0, 2]);
        assert_eq!(folds[0].train, vec![1, 3, 4]);
        assert!(loso_folds(&subjects[..1]).is_err());
    }
}
