//! White-box refinement: projected gradient ascent with momentum and the
//! checkpointed step-size schedule of Auto-PGD.

use serde::{Deserialize, Serialize};

use super::{Norm, PerturbationBudget, RefineResult, Tracker};
use crate::domain::{l2_norm, LatentCode};
use crate::error::{Error, Result};
use crate::models::{Access, TargetSession};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// Weight of the fresh gradient step against the previous displacement.
    pub momentum: f64,
    /// Initial step as a fraction of epsilon.
    pub initial_step: f64,
    /// First checkpoint as a fraction of the iteration budget.
    pub first_checkpoint: f64,
    /// Each checkpoint gap shrinks by this fraction...
    pub checkpoint_shrink: f64,
    /// ...but never below this one.
    pub min_checkpoint_gap: f64,
    /// A window counts as progressing when at least this fraction of its
    /// steps improved the objective.
    pub rho: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            momentum: 0.75,
            initial_step: 0.1,
            first_checkpoint: 0.22,
            checkpoint_shrink: 0.03,
            min_checkpoint_gap: 0.06,
            rho: 0.75,
        }
    }
}

/// Iteration indices at which the step size is reconsidered.
pub fn checkpoints(n_iter: usize, cfg: &StepConfig) -> Vec<usize> {
    let mut p = vec![0.0, cfg.first_checkpoint];
    let mut out: Vec<usize> = Vec::new();
    while p[p.len() - 1] < 1.0 {
        let j = p.len() - 1;
        // tolerance keeps products like 0.22 * 100 from rounding up past 22
        let w = (p[j] * n_iter as f64 - 1e-9).ceil() as usize;
        if w > 0 && w < n_iter && out.last() != Some(&w) {
            out.push(w);
        }
        p.push(p[j] + (p[j] - p[j - 1] - cfg.checkpoint_shrink).max(cfg.min_checkpoint_gap));
    }
    out
}

fn ascent_direction(grad: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L2 => {
            let n = l2_norm(grad);
            if n == 0.0 {
                vec![0.0; grad.len()]
            } else {
                grad.iter().map(|g| g / n).collect()
            }
        }
        Norm::Linf => grad
            .iter()
            .map(|&g| if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 })
            .collect(),
    }
}

/// Refine `start` with at most `t_max` objective evaluations (the first is
/// the unperturbed code), stopping as soon as similarity reaches `tau_c`.
pub fn refine_whitebox(
    start: &LatentCode,
    session: &TargetSession<'_>,
    budget: &PerturbationBudget,
    t_max: usize,
    tau_c: f64,
    cfg: &StepConfig,
) -> Result<RefineResult> {
    if session.access() != Access::WhiteBox {
        return Err(Error::GradientUnavailable);
    }
    if t_max == 0 {
        return Err(Error::ConfigInvalid("t_max must be at least 1".into()));
    }
    if start.len() != session.latent_dim() {
        return Err(Error::DimensionMismatch {
            expected: session.latent_dim(),
            got: start.len(),
        });
    }
    let center = &start.values;
    let mut tracker = Tracker::new(center, tau_c);

    let mut x = center.clone();
    let (mut f, mut g) = session.loss_and_gradient(&x)?;
    if tracker.record(&x, f)? {
        return Ok(tracker.finish(start, true));
    }
    let mut best_grad = g.clone();
    let mut x_prev = x.clone();

    let alpha = cfg.momentum;
    let mut eta = cfg.initial_step * budget.epsilon;
    let marks = checkpoints(t_max, cfg);
    let mut next_mark = 0;
    let mut last_mark = 0usize;
    let mut successes = 0usize;
    let mut halved_last = false;
    let mut best_at_last = tracker.best_value;
    let mut steps = 0usize;

    while tracker.evaluations() < t_max {
        let dir = ascent_direction(&g, budget.norm);
        let z: Vec<f64> = x.iter().zip(&dir).map(|(xi, d)| xi + eta * d).collect();
        let z = budget.project_point(center, &z);
        let x_next = if steps == 0 {
            z
        } else {
            let mixed: Vec<f64> = x
                .iter()
                .zip(&z)
                .zip(&x_prev)
                .map(|((xi, zi), pi)| xi + alpha * (zi - xi) + (1.0 - alpha) * (xi - pi))
                .collect();
            budget.project_point(center, &mixed)
        };

        let (f_next, g_next) = session.loss_and_gradient(&x_next)?;
        let improved_best = f_next > tracker.best_value;
        let reached = tracker.record(&x_next, f_next)?;
        if improved_best {
            best_grad.clone_from(&g_next);
        }
        if f_next > f {
            successes += 1;
        }
        x_prev = std::mem::replace(&mut x, x_next);
        f = f_next;
        g = g_next;
        steps += 1;
        if reached {
            return Ok(tracker.finish(start, true));
        }

        if marks.get(next_mark) == Some(&steps) {
            let window = steps - last_mark;
            let stalled = (successes as f64) < cfg.rho * window as f64;
            let flat = !halved_last && best_at_last == tracker.best_value;
            halved_last = stalled || flat;
            if halved_last {
                eta *= 0.5;
                x.clone_from(&tracker.best_point);
                x_prev.clone_from(&x);
                f = tracker.best_value;
                g.clone_from(&best_grad);
            }
            successes = 0;
            last_mark = steps;
            best_at_last = tracker.best_value;
            next_mark += 1;
        }
    }
    Ok(tracker.finish(start, false))
}
