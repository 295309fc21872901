use std::path::PathBuf;

use invkit::config::RunConfig;
use invkit::error::Error;
use invkit::eval::{
    calibration_from_embeddings, compute_confidence_threshold, compute_eer_threshold, cross_model_report, EvalModel,
    EvaluatedAttack,
};
use invkit::models::derive_seed;
use invkit::pipeline::run_attack;
use invkit::pool::{build_pool as build, load_pool, save_pool};
use invkit::records::{
    read_results, write_report, write_results, Outcome, ResultRecord, ThresholdRecord, ThresholdsFile,
};
use invkit::Result;
use rayon::prelude::*;

use crate::targets::{by_id, calibration_groups, load_targets};
use crate::{exit_code, input_path, output_path, Models};

pub(crate) fn build_pool(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<()> {
    let path = output_path(out, &cfg.paths.pool, "pool")?;
    let models = Models::open(cfg)?;
    let g = models.registry.generator(&models.generator_id)?;
    let d = models.registry.detector(&models.detector_id)?;
    let pool = build(g.as_ref(), d.as_ref(), &cfg.pool_spec())?;
    save_pool(&pool, &path)?;
    let s = pool.stats;
    println!(
        "drawn {}  normality-accepted {} ({:.5})  detector-accepted {} of {} generated",
        s.drawn,
        s.normality_accepted,
        s.normality_accepted as f64 / s.drawn as f64,
        s.detector_accepted,
        s.generations
    );
    println!("wrote {} entries to {}", pool.len(), path.display());
    Ok(())
}

pub(crate) fn calibrate(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<()> {
    let path = output_path(out, &cfg.paths.thresholds, "thresholds")?;
    let models = Models::open(cfg)?;
    let groups = calibration_groups(cfg, &models)?;
    let mut file = ThresholdsFile::default();
    for id in &models.embedder_ids {
        let f = models.embedder(id)?;
        let embeddings = groups
            .iter()
            .map(|g| g.iter().map(|img| f.embed(img)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let eer = compute_eer_threshold(&calibration_from_embeddings(
            &embeddings,
            derive_seed(cfg.seed, "impostor-pairs"),
        )?)?;
        let tau_c = compute_confidence_threshold(&groups, f.as_ref(), cfg.calibration.scope)?;
        if tau_c < eer.threshold {
            log::warn!("{id}: confidence threshold {tau_c:.4} is below the decision threshold {:.4}", eer.threshold);
        }
        println!("{id}: tau_f {:.6}  eer {:.4}  tau_c {tau_c:.6}", eer.threshold, eer.eer);
        file.models.push(ThresholdRecord {
            model_id: id.clone(),
            tau_f: eer.threshold,
            eer: eer.eer,
            tau_c,
        });
    }
    file.save(&path)
}

pub(crate) fn attack(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<Vec<ResultRecord>> {
    let path = output_path(out, &cfg.paths.results, "results")?;
    let pool = load_pool(input_path(&cfg.paths.pool, "pool")?)?;
    let models = Models::open(cfg)?;
    let targets = load_targets(cfg, &models)?;
    let thresholds = match cfg.attack.tau_c.fixed() {
        Some(_) => None,
        None => Some(ThresholdsFile::load(input_path(&cfg.paths.thresholds, "thresholds")?)?),
    };
    let digest = cfg.checksum();
    let total = targets.len();

    let outcomes: Vec<Result<_>> = targets
        .par_iter()
        .map(|t| {
            thresholds
                .as_ref()
                .map(|th| th.get(&t.spec.target_model_id).map(|r| r.tau_c))
                .transpose()
                .and_then(|tau_c| run_attack(&t.spec, &pool, &cfg.attack_config(tau_c.unwrap_or(1.0)), &models.registry))
        })
        .collect();
    if let Some(i) = outcomes.iter().position(|o| matches!(o, Err(e) if exit_code(e) == 2)) {
        return Err(outcomes.into_iter().nth(i).expect("index in range").unwrap_err());
    }
    let records: Vec<ResultRecord> = targets
        .iter()
        .zip(outcomes)
        .map(|(t, outcome)| {
            let model = &t.spec.target_model_id;
            let outcome = match outcome {
                Ok(r) => {
                    eprintln!(
                        "{}: similarity {:.4} from rank {} using {} queries",
                        t.target_id,
                        r.final_similarity,
                        r.chosen_rank,
                        r.ledger.total()
                    );
                    Outcome::Ok(Box::new(r))
                }
                Err(e) => {
                    eprintln!("{}: failed: {e}", t.target_id);
                    Outcome::Failed { error: e.to_string() }
                }
            };
            ResultRecord {
                target_id: t.target_id.clone(),
                target_model_id: model.clone(),
                config_sha256: digest.clone(),
                outcome,
            }
        })
        .collect();
    write_results(&path, &records)?;
    let ok = records.iter().filter(|r| r.result().is_some()).count();
    println!("{ok} of {total} targets attacked; results in {}", path.display());
    Ok(records)
}

pub(crate) fn report(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<()> {
    let path = output_path(out, &cfg.paths.report, "report")?;
    let records = read_results(input_path(&cfg.paths.results, "results")?)?;
    let thresholds = ThresholdsFile::load(input_path(&cfg.paths.thresholds, "thresholds")?)?;
    let models = Models::open(cfg)?;
    let targets = load_targets(cfg, &models)?;
    let targets = by_id(&targets);

    let embedders = models
        .embedder_ids
        .iter()
        .map(|id| Ok((models.embedder(id)?, thresholds.get(id)?.tau_f)))
        .collect::<Result<Vec<_>>>()?;
    let eval_models: Vec<EvalModel<'_>> = embedders
        .iter()
        .map(|(f, tau_f)| EvalModel {
            embedder: f.as_ref(),
            tau_f: *tau_f,
        })
        .collect();

    let mut attacks = Vec::new();
    let mut failed = 0;
    for rec in &records {
        models.embedder(&rec.target_model_id)?;
        let Some(result) = rec.result() else {
            failed += 1;
            continue;
        };
        let target = targets
            .get(rec.target_id.as_str())
            .ok_or_else(|| Error::ConfigInvalid(format!("result for unknown target {}", rec.target_id)))?;
        let (Some(target_image), Some(alternates)) = (&target.target_image, &target.alternates) else {
            return Err(Error::ConfigInvalid(format!(
                "target {} has no target image and alternates to score against",
                rec.target_id
            )));
        };
        attacks.push(EvaluatedAttack {
            target_id: rec.target_id.clone(),
            target_model_id: rec.target_model_id.clone(),
            reconstruction: result.reconstruction.clone(),
            target_image: target_image.clone(),
            alternates: alternates.clone(),
            queries: result.ledger.total(),
            wall_time: result.wall_time,
        });
    }
    let report = cross_model_report(&attacks, &eval_models)?;
    write_report(&path, &report, failed)?;
    for a in &report.cross_model {
        println!(
            "target model {}: similarity {:.4}  type I {:.4}  type II {:.4}  over {} rows",
            a.target_model_id, a.similarity, a.type1, a.type2, a.rows
        );
    }
    println!("report in {}", path.display());
    Ok(())
}
