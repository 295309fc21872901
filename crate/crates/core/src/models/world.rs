//! A fully seeded miniature of the attack setting: one generator, several
//! recognition models that share a common identity feature basis, a face
//! detector, and a labelled identity gallery used for calibration and
//! evaluation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::synthetic::gaussian_vec;
use super::{derive_seed, Embedder, Generator, ModelRegistry};
use super::{SyntheticDetector, SyntheticEmbedder, SyntheticGenerator};
use crate::domain::{ImageSample, ImageShape, LatentCode, TargetSpec};
use crate::error::{Error, Result};
use crate::eval::{
    calibration_from_embeddings, compute_confidence_threshold, compute_eer_threshold, AlternateSet, CalibrationSet,
    PairScope,
};
use crate::pool::sample_latent;

/// Score the least face-like gallery image must reach.
const DETECTOR_FLOOR_SCORE: f64 = 0.9999;

/// Latent draws averaged to estimate the generator's mean output.
const MEAN_FACE_DRAWS: usize = 2048;

fn mean_image(generator: &SyntheticGenerator, latent_dim: usize, master_seed: u64) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; generator.output_shape().len()];
    for i in 0..MEAN_FACE_DRAWS {
        let l = sample_latent(latent_dim, derive_seed(master_seed, &format!("mean-face-{i}")));
        for (a, v) in acc.iter_mut().zip(generator.generate(&l.values)?.values()) {
            *a += v;
        }
    }
    let n = MEAN_FACE_DRAWS as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub latent_dim: usize,
    pub image_shape: [usize; 3],
    /// One entry per recognition model.
    pub embed_dims: Vec<usize>,
    pub identities: usize,
    /// Gallery images per identity (one target plus J alternates).
    pub images_per_identity: usize,
    /// Std of the per-image latent jitter around an identity center.
    pub identity_spread: f64,
    pub generator_gain: f64,
    pub bias_scale: f64,
    /// Width of the identity feature basis all models share.
    pub shared_features: usize,
    /// Weight of each model's private projection relative to the shared one.
    pub model_specific: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            image_shape: [3, 16, 16],
            embed_dims: vec![128, 128],
            identities: 20,
            images_per_identity: 4,
            identity_spread: 0.35,
            generator_gain: 1.0,
            bias_scale: 1.0,
            shared_features: 128,
            model_specific: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn shape(&self) -> ImageShape {
        let [c, h, w] = self.image_shape;
        ImageShape::new(c, h, w)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.embed_dims.len() < 2 {
            return bad("a world needs at least two recognition models for cross-model evaluation");
        }
        if self.latent_dim == 0 || self.shape().is_empty() || self.embed_dims.contains(&0) {
            return bad("dimensions must be positive");
        }
        if self.shared_features == 0 {
            return bad("shared_features must be positive");
        }
        if self.identities < 2 {
            return bad("a world needs at least two identities");
        }
        if !(self.identity_spread >= 0.0 && self.generator_gain > 0.0 && self.bias_scale > 0.0 && self.model_specific >= 0.0) {
            return bad("scales must be finite and non-negative");
        }
        if self.images_per_identity < 2 {
            return Err(Error::InsufficientImages);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub id: String,
    pub center: LatentCode,
    pub latents: Vec<Vec<f64>>,
    pub images: Vec<ImageSample>,
}

/// A gallery image whose embedding plays the leaked template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryTarget {
    pub target_id: String,
    pub identity: usize,
    pub image: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelThreshold {
    pub model_id: String,
    pub tau_f: f64,
    pub eer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub master_seed: u64,
    pub generator: Arc<SyntheticGenerator>,
    pub embedders: Vec<Arc<SyntheticEmbedder>>,
    pub detector: Arc<SyntheticDetector>,
    pub identities: Vec<Identity>,
    pub thresholds: Vec<ModelThreshold>,
}

pub const GENERATOR_ID: &str = "synthetic-gen";
pub const DETECTOR_ID: &str = "synthetic-det";

pub fn embedder_id(index: usize) -> String {
    format!("synthetic-{index}")
}

impl SyntheticWorld {
    pub fn build(config: &WorldConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let shape = config.shape();
        let n = shape.len();

        let generator = SyntheticGenerator::seeded(
            GENERATOR_ID,
            config.latent_dim,
            shape,
            config.generator_gain,
            config.bias_scale,
            derive_seed(master_seed, "generator"),
        );
        let template: Vec<f64> = generator.bias().iter().map(|b| b.tanh()).collect();
        let mean_face = mean_image(&generator, config.latent_dim, master_seed)?;

        let shared = gaussian_vec(
            derive_seed(master_seed, "shared-features"),
            config.shared_features * n,
            1.0 / (n as f64).sqrt(),
        );
        let embedders = config
            .embed_dims
            .iter()
            .enumerate()
            .map(|(k, &dim)| {
                let mixing = gaussian_vec(
                    derive_seed(master_seed, &format!("mixing-{k}")),
                    dim * config.shared_features,
                    1.0 / (config.shared_features as f64).sqrt(),
                );
                let private = gaussian_vec(
                    derive_seed(master_seed, &format!("private-{k}")),
                    dim * n,
                    1.0 / (n as f64).sqrt(),
                );
                let mut weights = vec![0.0; dim * n];
                for (r, row) in weights.chunks_exact_mut(n).enumerate() {
                    let mix = &mixing[r * config.shared_features..(r + 1) * config.shared_features];
                    for (m, basis) in mix.iter().zip(shared.chunks_exact(n)) {
                        for (w, b) in row.iter_mut().zip(basis) {
                            *w += m * b;
                        }
                    }
                    for (w, p) in row.iter_mut().zip(&private[r * n..(r + 1) * n]) {
                        *w += config.model_specific * p;
                    }
                }
                SyntheticEmbedder::from_parts(embedder_id(k), shape, dim, weights, mean_face.clone())
                    .map(Arc::new)
            })
            .collect::<Result<Vec<_>>>()?;

        let identities = (0..config.identities)
            .map(|i| {
                let center = sample_latent(
                    config.latent_dim,
                    derive_seed(master_seed, &format!("identity-{i}")),
                );
                let latents: Vec<Vec<f64>> = (0..config.images_per_identity)
                    .map(|j| {
                        let jitter = gaussian_vec(
                            derive_seed(master_seed, &format!("identity-{i}-image-{j}")),
                            config.latent_dim,
                            config.identity_spread,
                        );
                        center.values.iter().zip(&jitter).map(|(c, d)| c + d).collect()
                    })
                    .collect();
                let images = latents
                    .iter()
                    .map(|l| generator.generate(l))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Identity {
                    id: format!("id{i:03}"),
                    center,
                    latents,
                    images,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut detector = SyntheticDetector::new(DETECTOR_ID, shape, template, 1.0, 0.0)?;
        let floor = identities
            .iter()
            .flat_map(|id| &id.images)
            .map(|img| detector.correlation(img))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        detector.calibrate(floor, DETECTOR_FLOOR_SCORE)?;

        let mut world = Self {
            config: config.clone(),
            master_seed,
            generator: Arc::new(generator),
            embedders,
            detector: Arc::new(detector),
            identities,
            thresholds: Vec::new(),
        };
        world.thresholds = (0..world.embedders.len())
            .map(|k| {
                let cal = world.calibration_set(k)?;
                let eer = compute_eer_threshold(&cal)?;
                Ok(ModelThreshold {
                    model_id: embedder_id(k),
                    tau_f: eer.threshold,
                    eer: eer.eer,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(world)
    }

    /// Genuine scores over every same-identity image pair; impostor scores
    /// over a seeded cross-identity sample of equal size.
    pub fn calibration_set(&self, model: usize) -> Result<CalibrationSet> {
        let f = self.embedder(model)?;
        let embeddings: Vec<Vec<_>> = self
            .identities
            .iter()
            .map(|id| id.images.iter().map(|img| f.embed(img)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        calibration_from_embeddings(&embeddings, derive_seed(self.master_seed, "impostor-pairs"))
    }

    pub fn confidence_threshold(&self, model: usize) -> Result<f64> {
        let groups: Vec<Vec<ImageSample>> = self.identities.iter().map(|id| id.images.clone()).collect();
        compute_confidence_threshold(&groups, self.embedder(model)?.as_ref(), PairScope::SameIdentity)
    }

    /// `count` targets, cycling through identities first and image slots
    /// second, so the first `identities` targets are all distinct people.
    pub fn gallery_targets(&self, count: usize) -> Result<Vec<GalleryTarget>> {
        let ids = self.identities.len();
        let available = ids * self.config.images_per_identity;
        if count > available {
            return Err(Error::ConfigInvalid(format!(
                "{count} targets requested but the gallery holds {available} images"
            )));
        }
        Ok((0..count)
            .map(|t| {
                let (identity, image) = (t % ids, t / ids);
                GalleryTarget {
                    target_id: format!("{}/{image}", self.identities[identity].id),
                    identity,
                    image,
                }
            })
            .collect())
    }

    pub fn target_image(&self, target: &GalleryTarget) -> &ImageSample {
        &self.identities[target.identity].images[target.image]
    }

    pub fn target_spec(&self, target: &GalleryTarget, model: usize) -> Result<TargetSpec> {
        let f = self.embedder(model)?;
        Ok(TargetSpec::new(f.embed(self.target_image(target))?, f.model_id())
            .with_identity(self.identities[target.identity].id.clone()))
    }

    /// The target identity's other images.
    pub fn alternates(&self, target: &GalleryTarget) -> AlternateSet {
        let images = &self.identities[target.identity].images;
        let others = images
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target.image)
            .map(|(_, img)| img.clone())
            .collect();
        AlternateSet::new(&images[target.image], others)
    }

    pub fn embedder(&self, index: usize) -> Result<&Arc<SyntheticEmbedder>> {
        self.embedders
            .get(index)
            .ok_or_else(|| Error::UnknownModel(embedder_id(index)))
    }

    pub fn embedder_index(&self, model_id: &str) -> Result<usize> {
        self.embedders
            .iter()
            .position(|e| e.model_id() == model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.to_string()))
    }

    pub fn threshold(&self, model_id: &str) -> Result<&ModelThreshold> {
        self.thresholds
            .iter()
            .find(|t| t.model_id == model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.to_string()))
    }

    pub fn registry(&self) -> ModelRegistry {
        let mut reg = ModelRegistry::new();
        reg.register_generator(self.generator.clone());
        reg.register_detector(self.detector.clone());
        for e in &self.embedders {
            reg.register_embedder(e.clone());
        }
        reg
    }

    pub fn generator_id(&self) -> &str {
        self.generator.id()
    }
}
