//! Attack assembly: rank the pool against a target, then refine the top
//! candidates one by one until one is confident enough, keeping exact count
//! of every query made to the target model.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{
    refine_blackbox, refine_whitebox, GreedyConfig, Norm, PerturbationBudget, RefineResult, StepConfig,
    StopReason,
};
use crate::domain::{ImageSample, LatentCode, TargetSpec};
use crate::error::{Error, Result};
use crate::models::{Access, ModelRegistry, QueryCounter, TargetSession};
use crate::pool::LatentPool;
use crate::select::{rank_candidates, top_n, RankedCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryLedger {
    /// Selection cost: one query per pool entry.
    pub q_topn: u64,
    /// Refinement cost summed over every refined candidate.
    pub q_adv: u64,
    pub q_max: Option<u64>,
}

impl QueryLedger {
    pub fn total(&self) -> u64 {
        self.q_topn + self.q_adv
    }

    pub fn within_budget(&self) -> bool {
        self.q_max.is_none_or(|m| self.total() <= m)
    }
}

/// Per-candidate iteration budget that keeps a black-box attack within
/// `q_max` total queries: `floor((q_max - volume) / n)`.
pub fn compute_tmax(q_max: u64, volume: u64, n: usize) -> Result<u64> {
    if q_max <= volume {
        return Err(Error::BudgetTooSmall { q_max, volume });
    }
    if n == 0 {
        return Err(Error::ConfigInvalid("top-N must be at least 1".into()));
    }
    Ok((q_max - volume) / n as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub mode: Access,
    pub norm: Norm,
    pub epsilon: f64,
    pub tau_c: f64,
    pub top_n: usize,
    /// Per-candidate evaluation budget (white-box).
    #[serde(default)]
    pub t_max: Option<usize>,
    /// Total query budget (black-box).
    #[serde(default)]
    pub q_max: Option<u64>,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub greedy: GreedyConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mode: Access::WhiteBox,
            norm: Norm::L2,
            epsilon: 35.0,
            tau_c: 0.98,
            top_n: 3,
            t_max: Some(100),
            q_max: None,
            step: StepConfig::default(),
            greedy: GreedyConfig::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        PerturbationBudget::new(self.norm, self.epsilon)?;
        if !(self.tau_c > 0.0 && self.tau_c <= 1.0) {
            return bad(format!("tau_c = {} is outside (0, 1]", self.tau_c));
        }
        if self.top_n == 0 {
            return bad("top_n must be at least 1".into());
        }
        match (self.mode, self.t_max, self.q_max) {
            (Access::WhiteBox, Some(t), None) if t >= 1 => Ok(()),
            (Access::BlackBox, None, Some(_)) => Ok(()),
            (Access::WhiteBox, _, _) => bad("white-box attacks take t_max (>= 1) and no q_max".into()),
            (Access::BlackBox, _, _) => bad("black-box attacks take q_max and no t_max".into()),
        }
    }

    pub fn budget(&self) -> Result<PerturbationBudget> {
        PerturbationBudget::new(self.norm, self.epsilon)
    }

    /// Hex SHA-256 of the canonical JSON form, embedded in result records.
    pub fn checksum(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub rank: usize,
    pub pool_index: usize,
    pub initial_similarity: f64,
    pub result: RefineResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedCandidate {
    pub rank: usize,
    pub pool_index: usize,
    pub queries_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub reconstruction: ImageSample,
    pub refined_latent: LatentCode,
    pub chosen_rank: usize,
    pub final_similarity: f64,
    pub ledger: QueryLedger,
    pub candidate_traces: Vec<CandidateTrace>,
    pub aborted: Vec<AbortedCandidate>,
    pub wall_time: f64,
}

impl AttackResult {
    pub fn reached_confidence(&self) -> bool {
        self.candidate_traces
            .last()
            .is_some_and(|c| c.result.stop_reason == StopReason::ConfidenceReached)
    }
}

/// Refine candidates in rank order, stopping at the first that reaches
/// `tau_c`; otherwise keep the best final similarity (ties to the lower
/// rank). `limit` is the per-candidate evaluation budget in either mode.
#[allow(clippy::too_many_arguments)]
pub fn ranked_adversary(
    candidates: &[RankedCandidate],
    pool: &LatentPool,
    session: &TargetSession<'_>,
    budget: &PerturbationBudget,
    limit: u64,
    tau_c: f64,
    step: &StepConfig,
    greedy: &GreedyConfig,
    q_topn: u64,
) -> Result<AttackResult> {
    let started = Instant::now();
    let queries_before = session.queries();
    let mut traces: Vec<CandidateTrace> = Vec::new();
    let mut aborted = Vec::new();

    for c in candidates {
        let entry = pool.entries.get(c.pool_index).ok_or_else(|| {
            Error::ConfigInvalid(format!("candidate index {} outside the pool", c.pool_index))
        })?;
        let outcome = match session.access() {
            Access::WhiteBox => {
                let t_max = usize::try_from(limit).unwrap_or(usize::MAX);
                refine_whitebox(&entry.latent, session, budget, t_max, tau_c, step)
            }
            Access::BlackBox => refine_blackbox(&entry.latent, session, budget, limit, tau_c, greedy),
        };
        match outcome {
            Ok(result) => {
                let done = result.stop_reason == StopReason::ConfidenceReached;
                traces.push(CandidateTrace {
                    rank: c.rank,
                    pool_index: c.pool_index,
                    initial_similarity: c.initial_similarity,
                    result,
                });
                if done {
                    break;
                }
            }
            Err(Error::NonFiniteLoss { iteration, .. }) => {
                log::warn!("candidate at rank {} aborted: non-finite loss at evaluation {iteration}", c.rank);
                aborted.push(AbortedCandidate {
                    rank: c.rank,
                    pool_index: c.pool_index,
                    queries_used: iteration as u64 + 1,
                });
            }
            Err(e) => return Err(e),
        }
    }

    let mut best: Option<&CandidateTrace> = None;
    for t in &traces {
        if best.is_none_or(|b| t.result.final_similarity > b.result.final_similarity) {
            best = Some(t);
        }
    }
    let best = best.ok_or(Error::AllCandidatesFailed)?;
    let reconstruction = session.generator().generate(&best.result.refined.values)?;

    let q_adv = traces.iter().map(|t| t.result.queries_used).sum::<u64>()
        + aborted.iter().map(|a| a.queries_used).sum::<u64>();
    debug_assert_eq!(q_adv, session.queries() - queries_before);

    Ok(AttackResult {
        reconstruction,
        refined_latent: best.result.refined.clone(),
        chosen_rank: best.rank,
        final_similarity: best.result.final_similarity,
        ledger: QueryLedger {
            q_topn,
            q_adv,
            q_max: None,
        },
        candidate_traces: traces,
        aborted,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Full attack against one leaked embedding. Reads only the embedding and
/// the target model id from `target`.
pub fn run_attack(
    target: &TargetSpec,
    pool: &LatentPool,
    config: &AttackConfig,
    models: &ModelRegistry,
) -> Result<AttackResult> {
    let started = Instant::now();
    config.validate()?;
    let budget = config.budget()?;
    let embedder = models.embedder(&target.target_model_id)?;
    let generator = models.generator(&pool.generator_id)?;
    if generator.latent_dim() != pool.latent_dim || generator.output_shape() != pool.image_shape {
        return Err(Error::ConfigInvalid(format!(
            "pool was built for a different generator shape than `{}` provides",
            pool.generator_id
        )));
    }

    let selection = QueryCounter::new();
    let ranked = rank_candidates(pool, &target.target_embedding, embedder.as_ref(), &selection)?;
    let q_topn = selection.get();
    let top = top_n(&ranked, config.top_n);

    let limit = match config.mode {
        Access::WhiteBox => config.t_max.expect("validated") as u64,
        Access::BlackBox => {
            let q_max = config.q_max.expect("validated");
            let t = compute_tmax(q_max, q_topn, top.len())?;
            if t == 0 {
                return Err(Error::BudgetTooSmall { q_max, volume: q_topn });
            }
            t
        }
    };

    let session = TargetSession::new(generator.as_ref(), embedder.as_ref(), &target.target_embedding, config.mode)?;
    let mut result = ranked_adversary(
        &top,
        pool,
        &session,
        &budget,
        limit,
        config.tau_c,
        &config.step,
        &config.greedy,
        q_topn,
    )?;
    result.ledger.q_max = config.q_max;
    result.wall_time = started.elapsed().as_secs_f64();
    Ok(result)
}

/// Run independent attacks on a dedicated thread pool of `jobs` workers.
/// Results come back in input order.
pub fn run_attacks(
    targets: &[TargetSpec],
    pool: &LatentPool,
    config: &AttackConfig,
    models: &ModelRegistry,
    jobs: usize,
) -> Result<Vec<Result<AttackResult>>> {
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("cannot start {jobs} workers: {e}")))?;
    Ok(threads.install(|| {
        targets
            .par_iter()
            .map(|t| run_attack(t, pool, config, models))
            .collect()
    }))
}
