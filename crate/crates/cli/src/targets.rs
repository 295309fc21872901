//! Where targets and calibration images come from for each backend.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};

use invkit::config::RunConfig;
use invkit::domain::{EmbeddingVector, ImageSample, TargetSpec};
use invkit::error::Error;
use invkit::eval::AlternateSet;
use invkit::Result;
use serde::Deserialize;

use crate::{input_path, Models};

pub(crate) struct Target {
    pub target_id: String,
    pub spec: TargetSpec,
    pub target_image: Option<ImageSample>,
    pub alternates: Option<AlternateSet>,
}

/// One line of an adapter target file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetLine {
    target_id: String,
    #[serde(default)]
    model_id: Option<String>,
    embedding: Vec<f64>,
    #[serde(default)]
    target_image: Option<ImageSample>,
    #[serde(default)]
    alternates: Option<Vec<ImageSample>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    identities: Vec<CalibrationIdentity>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationIdentity {
    #[allow(dead_code)]
    id: String,
    images: Vec<ImageSample>,
}

pub(crate) fn load_targets(cfg: &RunConfig, models: &Models) -> Result<Vec<Target>> {
    if let Some(world) = &models.world {
        let model = world.embedder_index(&cfg.targets.model)?;
        return world
            .gallery_targets(cfg.targets.count)?
            .into_iter()
            .map(|t| {
                Ok(Target {
                    spec: world.target_spec(&t, model)?,
                    target_image: Some(world.target_image(&t).clone()),
                    alternates: Some(world.alternates(&t)),
                    target_id: t.target_id,
                })
            })
            .collect();
    }
    let path = input_path(&cfg.targets.file, "targets.file")?;
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TargetLine =
            serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("target line {}: {e}", n + 1)))?;
        let model_id = t.model_id.unwrap_or_else(|| cfg.targets.model.clone());
        models.embedder(&model_id)?;
        let alternates = match (&t.target_image, t.alternates) {
            (Some(img), Some(alts)) => Some(AlternateSet::new(img, alts)),
            _ => None,
        };
        out.push(Target {
            spec: TargetSpec::new(EmbeddingVector::new(t.embedding)?, model_id),
            target_image: t.target_image,
            alternates,
            target_id: t.target_id,
        });
    }
    Ok(out)
}

pub(crate) fn calibration_groups(cfg: &RunConfig, models: &Models) -> Result<Vec<Vec<ImageSample>>> {
    if let Some(world) = &models.world {
        return Ok(world.identities.iter().map(|id| id.images.clone()).collect());
    }
    let path = input_path(&cfg.calibration.file, "calibration.file")?;
    let file: CalibrationFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(file.identities.into_iter().map(|i| i.images).collect())
}

pub(crate) fn by_id(targets: &[Target]) -> BTreeMap<&str, &Target> {
    targets.iter().map(|t| (t.target_id.as_str(), t)).collect()
}
