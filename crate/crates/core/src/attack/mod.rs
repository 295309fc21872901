//! Refinement of a single latent code inside an L2 or L-infinity ball.
//!
//! Both refiners record one trace entry per objective evaluation, starting
//! with the unperturbed code, and stop at the first evaluation whose
//! similarity reaches the confidence threshold. The returned code is always
//! the best one seen.

use serde::{Deserialize, Serialize};

use crate::domain::{l2_norm, LatentCode};
use crate::error::{Error, Result};

mod apgd;
mod greedy;

pub use apgd::{checkpoints, refine_whitebox, StepConfig};
pub use greedy::{refine_blackbox, GreedyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub norm: Norm,
    pub epsilon: f64,
}

impl PerturbationBudget {
    pub fn new(norm: Norm, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::ConfigInvalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { norm, epsilon })
    }

    pub fn measure(&self, delta: &[f64]) -> f64 {
        match self.norm {
            Norm::L2 => l2_norm(delta),
            Norm::Linf => delta.iter().fold(0.0, |m, d| m.max(d.abs())),
        }
    }

    /// Project `point` onto the ball around `center`.
    pub fn project_point(&self, center: &[f64], point: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = point.iter().zip(center).map(|(p, c)| p - c).collect();
        project(&delta, self)
            .into_iter()
            .zip(center)
            .map(|(d, c)| c + d)
            .collect()
    }
}

pub fn project(delta: &[f64], budget: &PerturbationBudget) -> Vec<f64> {
    let eps = budget.epsilon;
    match budget.norm {
        Norm::L2 => {
            let n = l2_norm(delta);
            if n <= eps {
                delta.to_vec()
            } else {
                let s = eps / n;
                delta.iter().map(|d| d * s).collect()
            }
        }
        Norm::Linf => delta.iter().map(|d| d.clamp(-eps, eps)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ConfidenceReached,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub refined: LatentCode,
    pub final_similarity: f64,
    pub iterations_used: usize,
    pub queries_used: u64,
    pub stop_reason: StopReason,
    /// Similarity at every evaluated iterate, in order.
    pub trace: Vec<f64>,
}

/// Best-so-far bookkeeping shared by both refiners.
struct Tracker {
    trace: Vec<f64>,
    best_value: f64,
    best_point: Vec<f64>,
    tau_c: f64,
}

impl Tracker {
    fn new(start: &[f64], tau_c: f64) -> Self {
        Self {
            trace: Vec::new(),
            best_value: f64::NEG_INFINITY,
            best_point: start.to_vec(),
            tau_c,
        }
    }

    /// Record one evaluation; true when the threshold is reached.
    fn record(&mut self, point: &[f64], value: f64) -> Result<bool> {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.trace.len(),
                trace: std::mem::take(&mut self.trace),
            });
        }
        self.trace.push(value);
        if value > self.best_value {
            self.best_value = value;
            self.best_point.copy_from_slice(point);
        }
        Ok(value >= self.tau_c)
    }

    fn evaluations(&self) -> usize {
        self.trace.len()
    }

    fn finish(self, start: &LatentCode, reached: bool) -> RefineResult {
        let n = self.trace.len();
        RefineResult {
            refined: start.with_values(self.best_point),
            final_similarity: self.best_value,
            iterations_used: n,
            queries_used: n as u64,
            stop_reason: if reached {
                StopReason::ConfidenceReached
            } else {
                StopReason::BudgetExhausted
            },
            trace: self.trace,
        }
    }
}
