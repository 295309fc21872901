//! Ranking of pool entries against a target embedding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};
use crate::models::{Embedder, QueryCounter};
use crate::pool::LatentPool;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub pool_index: usize,
    pub initial_similarity: f64,
    /// 1-based.
    pub rank: usize,
}

/// Score every cached image once under the target model and sort by
/// similarity, descending, ties to the lower pool index. Charges exactly
/// `pool.len()` queries to `ledger`.
pub fn rank_candidates(
    pool: &LatentPool,
    target: &EmbeddingVector,
    embedder: &dyn Embedder,
    ledger: &QueryCounter,
) -> Result<Vec<RankedCandidate>> {
    if pool.is_empty() {
        return Err(Error::ConfigInvalid("cannot rank an empty pool".into()));
    }
    if target.len() != embedder.embed_dim() {
        return Err(Error::DimensionMismatch {
            expected: embedder.embed_dim(),
            got: target.len(),
        });
    }
    let scores: Vec<f64> = pool
        .entries
        .par_iter()
        .map(|e| {
            ledger.add(1);
            cosine_similarity(&embedder.embed(&e.image)?, target)
        })
        .collect::<Result<_>>()?;
    Ok(rank_scores(&scores))
}

pub(crate) fn rank_scores(scores: &[f64]) -> Vec<RankedCandidate> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankedCandidate {
            pool_index: i,
            initial_similarity: scores[i],
            rank: r + 1,
        })
        .collect()
}

/// The first `n` candidates by rank; `n` larger than the list is clamped.
pub fn top_n(ranked: &[RankedCandidate], n: usize) -> Vec<RankedCandidate> {
    if n > ranked.len() {
        log::warn!("top-N of {n} exceeds the {} ranked candidates; using all of them", ranked.len());
    }
    ranked[..n.min(ranked.len())].to_vec()
}
