//! Black-box refinement by greedy coordinate search.
//!
//! Coordinates are visited in order of their exponentially decayed record of
//! past gains. For each one a `+step` / `-step` move is proposed (the
//! direction that last worked goes first), the objective is queried, and the
//! move is kept only if it improves. A full sweep without any improvement
//! halves the step. The search never depends on the query cap, so a run
//! with a larger cap replays a smaller-cap run and then continues.

use serde::{Deserialize, Serialize};

use super::{PerturbationBudget, RefineResult, Tracker};
use crate::domain::LatentCode;
use crate::error::{Error, Result};
use crate::models::TargetSession;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreedyConfig {
    pub initial_step: f64,
    /// Floor for the step after repeated halving.
    pub min_step: f64,
    /// Per-sweep decay of a coordinate's accumulated gain.
    pub gain_decay: f64,
    /// Optional cap on how many distinct coordinates may be perturbed.
    pub max_touched: Option<usize>,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            min_step: 1e-3,
            gain_decay: 0.9,
            max_touched: None,
        }
    }
}

pub fn refine_blackbox(
    start: &LatentCode,
    session: &TargetSession<'_>,
    budget: &PerturbationBudget,
    query_cap: u64,
    tau_c: f64,
    cfg: &GreedyConfig,
) -> Result<RefineResult> {
    if query_cap == 0 {
        return Err(Error::ConfigInvalid("query cap must be at least 1".into()));
    }
    if !(cfg.initial_step > 0.0 && cfg.min_step > 0.0) {
        return Err(Error::ConfigInvalid("greedy steps must be positive".into()));
    }
    let dim = session.latent_dim();
    if start.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: start.len(),
        });
    }
    let cap = usize::try_from(query_cap).unwrap_or(usize::MAX);
    let center = &start.values;
    let mut tracker = Tracker::new(center, tau_c);

    let mut x = center.clone();
    let mut f = session.loss(&x)?;
    if tracker.record(&x, f)? {
        return Ok(tracker.finish(start, true));
    }

    let mut step = cfg.initial_step;
    let mut gains = vec![0.0f64; dim];
    let mut last_sign = vec![1.0f64; dim];
    let mut touched = vec![false; dim];
    let mut touched_count = 0usize;

    loop {
        let mut order: Vec<usize> = (0..dim)
            .filter(|&i| touched[i] || cfg.max_touched.is_none_or(|m| touched_count < m))
            .collect();
        if order.is_empty() {
            break;
        }
        order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));

        let mut improved_any = false;
        for i in order {
            if !touched[i] && cfg.max_touched.is_some_and(|m| touched_count >= m) {
                continue;
            }
            let mut improved = false;
            for sign in [last_sign[i], -last_sign[i]] {
                if tracker.evaluations() >= cap {
                    return Ok(tracker.finish(start, false));
                }
                let mut cand = x.clone();
                cand[i] += sign * step;
                let cand = budget.project_point(center, &cand);
                let fc = session.loss(&cand)?;
                let reached = tracker.record(&cand, fc)?;
                if fc > f {
                    gains[i] = cfg.gain_decay * gains[i] + (fc - f);
                    last_sign[i] = sign;
                    if !touched[i] {
                        touched[i] = true;
                        touched_count += 1;
                    }
                    x = cand;
                    f = fc;
                    improved = true;
                }
                if reached {
                    return Ok(tracker.finish(start, true));
                }
                if improved {
                    break;
                }
            }
            if !improved {
                gains[i] *= cfg.gain_decay;
            }
            improved_any |= improved;
        }
        if !improved_any {
            step = (step * 0.5).max(cfg.min_step);
        }
    }
    Ok(tracker.finish(start, false))
}
