//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// A scalar loss over a set of parameters, with fixed inputs baked in.
pub trait Differentiable {
    /// Loss at the current parameter values, without touching gradients.
    fn loss(&mut self) -> Result<f64>;

    /// Loss at the current parameter values; overwrites every parameter's
    /// gradient with the analytic derivative.
    fn loss_and_grad(&mut self) -> Result<f64>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub checked: usize,
}

fn perturb(frag: &mut dyn Differentiable, p: usize, i: usize, delta: f64) {
    let mut params = frag.parameters_mut();
    params[p].value.data_mut()[i] += delta;
}

fn set_value(frag: &mut dyn Differentiable, p: usize, i: usize, value: f64) {
    let mut params = frag.parameters_mut();
    params[p].value.data_mut()[i] = value;
}

/// Compares the analytic gradient of every trainable scalar against
/// `(L(p + eps) - L(p - eps)) / (2 eps)` and returns the largest
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(frag: &mut dyn Differentiable, eps: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::config("eps", format!("{eps} outside [1e-7, 1e-4]")));
    }
    frag.loss_and_grad()?;
    let analytic: Vec<(String, bool, Vec<f64>)> = frag
        .parameters_mut()
        .iter()
        .map(|p| (p.name.clone(), p.trainable, p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (pi, (name, trainable, grads)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        for (i, &a) in grads.iter().enumerate() {
            let original = frag.parameters_mut()[pi].value.data()[i];
            perturb(frag, pi, i, eps);
            let plus = frag.loss();
            set_value(frag, pi, i, original - eps);
            let minus = frag.loss();
            set_value(frag, pi, i, original);
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss when perturbing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_relative_error || report.checked == 1 {
                report.max_relative_error = rel;
                report.worst_parameter = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
