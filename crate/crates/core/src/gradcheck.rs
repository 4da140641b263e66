//! Central finite-difference oracle for the analytic reverse passes.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::nets::{loss_and_gradients, Critic, Objective};
use crate::params::{capture, ParamGroup, Parameterized};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Entries probed per tensor; larger tensors are subsampled.
    pub max_entries_per_tensor: usize,
    /// Denominator floor of the relative error, so entries whose true
    /// derivative is numerically zero are judged on absolute error.
    pub floor: f64,
    /// Relative agreement required between central differences at `step`
    /// and `step / 10` before the first is trusted.
    pub agree_tol: f64,
    /// Largest fraction of probed entries that may be skipped as kinks.
    pub max_kink_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries_per_tensor: 24,
            floor: 1e-4,
            agree_tol: 5e-6,
            max_kink_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[flat index]` of the worst entry.
    pub worst: Option<String>,
    pub checked: usize,
    /// Probed entries skipped because no step size gave a stable difference.
    pub kinks: usize,
    pub max_kink_fraction: f64,
    /// Trainable tensors the reverse pass skipped.
    pub missing: Vec<String>,
    /// Frozen tensors the reverse pass produced a gradient for.
    pub frozen_with_gradient: Vec<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        let probed = (self.checked + self.kinks).max(1) as f64;
        self.max_rel_error < tol
            && self.kinks as f64 <= self.max_kink_fraction * probed
            && self.missing.is_empty()
            && self.frozen_with_gradient.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn set_entry<P: Parameterized<f64>>(net: &mut P, name: &str, index: usize, value: f64) {
    net.visit_params_mut("", &mut |n, _, mut view| {
        if n == name {
            if let Some(slot) = view.iter_mut().nth(index) {
                *slot = value;
            }
        }
    });
}

/// Compares every trainable tensor's analytic gradient with central
/// differences of the objective.
pub fn check_gradients<C: Critic<f64>>(
    critic: &C,
    x: ArrayView2<'_, f64>,
    objective: &Objective<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradients(critic, x, objective)?;
    let base_loss = objective.loss(critic.predict(x)?.view())?;
    let mut report = GradCheckReport {
        max_kink_fraction: opts.max_kink_fraction,
        ..GradCheckReport::default()
    };
    let mut probe = critic.clone();
    let mut rng = rng::stream(opts.seed, Stream::Noise);
    let h = opts.step;
    for (name, (group, value)) in capture(critic) {
        if group == ParamGroup::Frozen {
            if grads.contains(&name) {
                report.frozen_with_gradient.push(name);
            }
            continue;
        }
        let Some(grad) = grads.get(&name) else {
            report.missing.push(name);
            continue;
        };
        if grad.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                context: "gradient",
                expected: value.shape().to_vec(),
                got: grad.shape().to_vec(),
            });
        }
        let n = value.len();
        let entries: Vec<usize> = if n <= opts.max_entries_per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, opts.max_entries_per_tensor).into_vec()
        };
        let flat: Vec<f64> = value.iter().copied().collect();
        let analytic: Vec<f64> = grad.iter().copied().collect();
        for i in entries {
            let orig = flat[i];
            // (central difference, forward minus backward slope) at one step
            let mut probe_at = |step: f64| -> Result<(f64, f64)> {
                set_entry(&mut probe, &name, i, orig + step);
                let plus = objective.loss(probe.predict(x)?.view())?;
                set_entry(&mut probe, &name, i, orig - step);
                let minus = objective.loss(probe.predict(x)?.view())?;
                set_entry(&mut probe, &name, i, orig);
                Ok(((plus - minus) / (2.0 * step), (plus + minus - 2.0 * base_loss) / step))
            };
            // rounding in the loss, amplified by the division by the step
            let roundoff = |step: f64| 8.0 * f64::EPSILON * base_loss.abs().max(1.0) / step;
            let agree = |a: f64, b: f64, step: f64| {
                (a - b).abs() <= opts.agree_tol * a.abs().max(b.abs()).max(opts.floor) + roundoff(step)
            };
            // A ReLU kink within the step shows up as disagreement with a
            // ten times smaller step; fall back to the smaller step when it
            // is itself stable.
            let ((c1, d1), (c2, d2)) = (probe_at(h)?, probe_at(h / 10.0)?);
            let numeric = if agree(c1, c2, h / 10.0) {
                Some(c1)
            } else if agree(c2, probe_at(h / 100.0)?.0, h / 100.0) {
                Some(c2)
            } else {
                None
            };
            // A kink closer than the smallest step biases every central
            // difference alike. There the slope jump does not shrink with
            // the step, where smooth curvature would shrink tenfold.
            let numeric = numeric.filter(|&c| {
                relative_error(analytic[i], c, opts.floor) <= 2.0 * opts.agree_tol || d2.abs() <= 0.5 * d1.abs() + 2.0 * roundoff(h / 10.0)
            });
            let Some(numeric) = numeric else {
                report.kinks += 1;
                continue;
            };
            let err = relative_error(analytic[i], numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(format!("{name}[{i}]"));
            }
        }
    }
    Ok(report)
}
