//! Threshold calibration and the Type I / Type II evaluation protocol.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{cosine_similarity, decide_match, EmbeddingVector, ImageDigest, ImageSample};
use crate::error::{Error, Result};
use crate::models::Embedder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub genuine_scores: Vec<f64>,
    pub impostor_scores: Vec<f64>,
}

impl CalibrationSet {
    pub fn new(genuine_scores: Vec<f64>, impostor_scores: Vec<f64>) -> Result<Self> {
        for s in genuine_scores.iter().chain(&impostor_scores) {
            if !(-1.0..=1.0).contains(s) {
                return Err(Error::Malformed(format!("similarity score {s} outside [-1, 1]")));
            }
        }
        Ok(Self {
            genuine_scores,
            impostor_scores,
        })
    }

    /// False accept and false reject rates for the rule `score >= t`.
    pub fn rates_at(&self, t: f64) -> (f64, f64) {
        let fa = self.impostor_scores.iter().filter(|&&s| decide_match(s, t)).count();
        let fr = self.genuine_scores.iter().filter(|&&s| !decide_match(s, t)).count();
        (
            fa as f64 / self.impostor_scores.len() as f64,
            fr as f64 / self.genuine_scores.len() as f64,
        )
    }
}

/// Every same-identity pair as genuine; a sample of cross-identity pairs of
/// the same size, drawn with `seed`, as impostors.
pub fn calibration_from_embeddings(groups: &[Vec<EmbeddingVector>], seed: u64) -> Result<CalibrationSet> {
    let mut genuine = Vec::new();
    for group in groups {
        for a in 0..group.len() {
            for b in a + 1..group.len() {
                genuine.push(cosine_similarity(&group[a], &group[b])?);
            }
        }
    }
    let flat: Vec<(usize, &EmbeddingVector)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| group.iter().map(move |e| (g, e)))
        .collect();
    let cross: Vec<(usize, usize)> = (0..flat.len())
        .flat_map(|a| (a + 1..flat.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| flat[a].0 != flat[b].0)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, cross.len(), genuine.len().min(cross.len())).into_vec();
    chosen.sort_unstable();
    let impostor = chosen
        .into_iter()
        .map(|p| cosine_similarity(flat[cross[p].0].1, flat[cross[p].1].1))
        .collect::<Result<Vec<_>>>()?;
    CalibrationSet::new(genuine, impostor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerThreshold {
    pub threshold: f64,
    pub eer: f64,
}

/// Threshold minimizing |FAR - FRR|.
///
/// FAR and FRR only change at observed scores, so the threshold axis splits
/// into half-open intervals `(u_k, u_{k+1}]` between consecutive distinct
/// scores (bounded by -1 and 1). The optimal intervals form one contiguous
/// run; the midpoint of that run is returned, and the EER is the mean of FAR
/// and FRR there.
pub fn compute_eer_threshold(cal: &CalibrationSet) -> Result<EerThreshold> {
    if cal.genuine_scores.is_empty() || cal.impostor_scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut genuine = cal.genuine_scores.clone();
    let mut impostor = cal.impostor_scores.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let mut bounds: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();

    let (ng, ni) = (genuine.len() as i128, impostor.len() as i128);
    // Interval k sits above `bounds[k - 1]` (or -1 for k = 0); scores at or
    // below its lower edge are rejected.
    let mut best: Option<(i128, usize, usize)> = None;
    let (mut g_rej, mut i_rej) = (0usize, 0usize);
    for k in 0..=bounds.len() {
        if k > 0 {
            let edge = bounds[k - 1];
            while g_rej < genuine.len() && genuine[g_rej] <= edge {
                g_rej += 1;
            }
            while i_rej < impostor.len() && impostor[i_rej] <= edge {
                i_rej += 1;
            }
        }
        let lower = if k == 0 { -1.0 } else { bounds[k - 1] };
        let upper = if k == bounds.len() { 1.0 } else { bounds[k] };
        if k == 0 && bounds[0] <= -1.0 || k == bounds.len() && lower >= 1.0 {
            continue;
        }
        debug_assert!(lower < upper);
        let far_num = ni - i_rej as i128;
        let frr_num = g_rej as i128;
        // |far/ni - frr/ng| compared without rounding
        let gap = (far_num * ng - frr_num * ni).abs();
        match best {
            Some((b, _, _)) if gap > b => {}
            Some((b, first, _)) if gap == b => best = Some((b, first, k)),
            _ => best = Some((gap, k, k)),
        }
    }
    let (_, first, last) = best.expect("at least one interval");
    let lower = if first == 0 { -1.0 } else { bounds[first - 1] };
    let upper = if last == bounds.len() { 1.0 } else { bounds[last] };
    let threshold = 0.5 * (lower + upper);
    let (far, frr) = cal.rates_at(threshold);
    Ok(EerThreshold {
        threshold,
        eer: 0.5 * (far + frr),
    })
}

/// Which image pairs feed the confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    /// Distinct images of the same identity.
    #[default]
    SameIdentity,
    /// Any two distinct images, regardless of identity.
    AllPairs,
}

/// Maximum similarity between real image pairs under one model.
pub fn compute_confidence_threshold(
    groups: &[Vec<ImageSample>],
    embedder: &dyn Embedder,
    scope: PairScope,
) -> Result<f64> {
    let embedded: Vec<Vec<_>> = groups
        .iter()
        .map(|g| g.iter().map(|img| embedder.embed(img)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut best: Option<f64> = None;
    let mut consider = |s: f64| best = Some(best.map_or(s, |b| b.max(s)));
    match scope {
        PairScope::SameIdentity => {
            for g in &embedded {
                for a in 0..g.len() {
                    for b in a + 1..g.len() {
                        consider(cosine_similarity(&g[a], &g[b])?);
                    }
                }
            }
        }
        PairScope::AllPairs => {
            let flat: Vec<_> = embedded.iter().flatten().collect();
            for a in 0..flat.len() {
                for b in a + 1..flat.len() {
                    consider(cosine_similarity(flat[a], flat[b])?);
                }
            }
        }
    }
    best.ok_or(Error::InsufficientImages)
}

fn similarity(f: &dyn Embedder, a: &ImageSample, b: &ImageSample) -> Result<f64> {
    cosine_similarity(&f.embed(a)?, &f.embed(b)?)
}

/// Fraction of reconstructions matching their exact target image.
pub fn type1_accuracy(
    reconstructions: &[ImageSample],
    targets: &[ImageSample],
    embedder: &dyn Embedder,
    tau_f: f64,
) -> Result<f64> {
    if reconstructions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: reconstructions.len(),
            right: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: 0 });
    }
    let mut hits = 0usize;
    for (x, t) in reconstructions.iter().zip(targets) {
        hits += decide_match(similarity(embedder, x, t)?, tau_f) as usize;
    }
    Ok(hits as f64 / targets.len() as f64)
}

/// Other gallery images of one target's identity. Only the target image's
/// digest is kept, so Type II scoring cannot look at the target itself.
#[derive(Debug, Clone)]
pub struct AlternateSet {
    pub target_digest: ImageDigest,
    pub images: Vec<ImageSample>,
}

impl AlternateSet {
    pub fn new(target: &ImageSample, images: Vec<ImageSample>) -> Self {
        Self {
            target_digest: target.digest(),
            images,
        }
    }

    fn check(&self, target_index: usize) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::InsufficientImages);
        }
        if let Some(index) = self.images.iter().position(|img| img.digest() == self.target_digest) {
            return Err(Error::TargetLeak {
                target: target_index,
                index,
            });
        }
        Ok(())
    }
}

/// Per-target Type II rate: matches against the J alternates over J.
pub fn type2_rate(
    reconstruction: &ImageSample,
    alternates: &AlternateSet,
    embedder: &dyn Embedder,
    tau_f: f64,
) -> Result<f64> {
    alternates.check(0)?;
    let z = embedder.embed(reconstruction)?;
    let mut hits = 0usize;
    for alt in &alternates.images {
        hits += decide_match(cosine_similarity(&z, &embedder.embed(alt)?)?, tau_f) as usize;
    }
    Ok(hits as f64 / alternates.images.len() as f64)
}

/// Fraction of (reconstruction, alternate) pairs that match, over all
/// targets and alternates.
pub fn type2_accuracy(
    reconstructions: &[ImageSample],
    alternates: &[AlternateSet],
    embedder: &dyn Embedder,
    tau_f: f64,
) -> Result<f64> {
    if reconstructions.len() != alternates.len() {
        return Err(Error::LengthMismatch {
            left: reconstructions.len(),
            right: alternates.len(),
        });
    }
    if alternates.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: 0 });
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, (x, alts)) in reconstructions.iter().zip(alternates).enumerate() {
        alts.check(i)?;
        let z = embedder.embed(x)?;
        for alt in &alts.images {
            hits += decide_match(cosine_similarity(&z, &embedder.embed(alt)?)?, tau_f) as usize;
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// One finished attack, with the ground truth needed to score it.
#[derive(Debug, Clone)]
pub struct EvaluatedAttack {
    pub target_id: String,
    pub target_model_id: String,
    pub reconstruction: ImageSample,
    pub target_image: ImageSample,
    pub alternates: AlternateSet,
    pub queries: u64,
    pub wall_time: f64,
}

pub struct EvalModel<'a> {
    pub embedder: &'a dyn Embedder,
    pub tau_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub target_id: String,
    pub target_model_id: String,
    pub eval_model_id: String,
    pub similarity: f64,
    pub type1_hit: bool,
    pub type2_rate: f64,
    pub queries: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub target_model_id: String,
    /// `None` for the cross-model average over every evaluation model.
    pub eval_model_id: Option<String>,
    pub rows: usize,
    pub similarity: f64,
    pub type1: f64,
    pub type2: f64,
    pub queries: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    /// One per (target model, evaluation model).
    pub model_averages: Vec<AverageRow>,
    /// One per target model, spanning all evaluation models including the
    /// target model itself.
    pub cross_model: Vec<AverageRow>,
}

fn average<'a>(
    target_model_id: &str,
    eval_model_id: Option<&str>,
    rows: impl Iterator<Item = &'a ReportRow>,
) -> AverageRow {
    let (mut n, mut sim, mut t1, mut t2, mut q, mut wt) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    for r in rows {
        n += 1;
        sim += r.similarity;
        t1 += f64::from(u8::from(r.type1_hit));
        t2 += r.type2_rate;
        q += r.queries as f64;
        wt += r.wall_time;
    }
    let d = n.max(1) as f64;
    AverageRow {
        target_model_id: target_model_id.to_string(),
        eval_model_id: eval_model_id.map(str::to_string),
        rows: n,
        similarity: sim / d,
        type1: t1 / d,
        type2: t2 / d,
        queries: q / d,
        wall_time: wt / d,
    }
}

impl EvaluationReport {
    /// Build averages from detail rows. Row order determines nothing but the
    /// order of first appearance of model ids.
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| {
            (&a.target_model_id, &a.target_id, &a.eval_model_id).cmp(&(
                &b.target_model_id,
                &b.target_id,
                &b.eval_model_id,
            ))
        });
        let mut by_target: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &rows {
            let evals = by_target.entry(&r.target_model_id).or_default();
            if !evals.contains(&r.eval_model_id.as_str()) {
                evals.push(&r.eval_model_id);
            }
        }
        let mut model_averages = Vec::new();
        let mut cross_model = Vec::new();
        for (tm, evals) in &by_target {
            let mut evals = evals.clone();
            evals.sort_unstable();
            for em in evals {
                model_averages.push(average(
                    tm,
                    Some(em),
                    rows.iter().filter(|r| r.target_model_id == *tm && r.eval_model_id == em),
                ));
            }
            cross_model.push(average(tm, None, rows.iter().filter(|r| r.target_model_id == *tm)));
        }
        Self {
            rows,
            model_averages,
            cross_model,
        }
    }
}

/// Score every reconstruction under every configured model.
pub fn cross_model_report(attacks: &[EvaluatedAttack], models: &[EvalModel<'_>]) -> Result<EvaluationReport> {
    let mut rows = Vec::with_capacity(attacks.len() * models.len());
    for (i, a) in attacks.iter().enumerate() {
        a.alternates.check(i)?;
        for m in models {
            let s = similarity(m.embedder, &a.reconstruction, &a.target_image)?;
            rows.push(ReportRow {
                target_id: a.target_id.clone(),
                target_model_id: a.target_model_id.clone(),
                eval_model_id: m.embedder.model_id().to_string(),
                similarity: s,
                type1_hit: decide_match(s, m.tau_f),
                type2_rate: type2_rate(&a.reconstruction, &a.alternates, m.embedder, m.tau_f)?,
                queries: a.queries,
                wall_time: a.wall_time,
            });
        }
    }
    Ok(EvaluationReport::from_rows(rows))
}
