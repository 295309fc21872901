//! Capability contracts for the three model roles the attack talks to, the
//! identity-similarity objective built on top of them, and the query-counted
//! session through which attacks reach a target model.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::domain::{cosine_similarity, EmbeddingVector, ImageSample, ImageShape};
use crate::error::{Error, Result};

mod process;
mod registry;
mod synthetic;
mod world;

pub use process::{ProcessAdapter, ProcessDetector, ProcessEmbedder, ProcessGenerator};
pub use registry::ModelRegistry;
pub use synthetic::{derive_seed, SyntheticDetector, SyntheticEmbedder, SyntheticGenerator};
pub use world::{embedder_id, GalleryTarget, Identity, ModelThreshold, SyntheticWorld, WorldConfig, DETECTOR_ID, GENERATOR_ID};

/// Maps latent codes to images. Implementations must be deterministic.
pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    fn latent_dim(&self) -> usize;
    fn output_shape(&self) -> ImageShape;
    fn generate(&self, latent: &[f64]) -> Result<ImageSample>;

    fn supports_gradient(&self) -> bool {
        false
    }

    /// Vector-Jacobian product: given dL/d(image), return dL/d(latent).
    fn pullback(&self, _latent: &[f64], _image_grad: &[f64]) -> Result<Vec<f64>> {
        Err(Error::GradientUnavailable)
    }
}

/// Maps images to identity embeddings. Implementations must be deterministic.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed_dim(&self) -> usize;
    fn input_shape(&self) -> ImageShape;
    fn embed(&self, image: &ImageSample) -> Result<EmbeddingVector>;

    fn supports_gradient(&self) -> bool {
        false
    }

    /// Vector-Jacobian product: given dL/d(embedding), return dL/d(image).
    fn pullback(&self, _image: &ImageSample, _embedding_grad: &[f64]) -> Result<Vec<f64>> {
        Err(Error::GradientUnavailable)
    }
}

/// Face-presence scorer returning a confidence in [0, 1].
pub trait Detector: Send + Sync {
    fn id(&self) -> &str;
    fn input_shape(&self) -> ImageShape;
    fn detect(&self, image: &ImageSample) -> Result<f64>;
}

fn check_latent(g: &dyn Generator, latent: &[f64]) -> Result<()> {
    if latent.len() != g.latent_dim() {
        return Err(Error::dim(g.latent_dim(), latent.len()));
    }
    Ok(())
}

fn check_pair(g: &dyn Generator, f: &dyn Embedder, target: &EmbeddingVector) -> Result<()> {
    if g.output_shape() != f.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: f.input_shape().to_string(),
            got: g.output_shape().to_string(),
        });
    }
    if target.len() != f.embed_dim() {
        return Err(Error::dim(f.embed_dim(), target.len()));
    }
    Ok(())
}

/// Identity similarity of the generated image to the target embedding.
pub fn loss_eval(
    g: &dyn Generator,
    f: &dyn Embedder,
    latent: &[f64],
    target: &EmbeddingVector,
) -> Result<f64> {
    check_latent(g, latent)?;
    check_pair(g, f, target)?;
    let image = g.generate(latent)?;
    cosine_similarity(&f.embed(&image)?, target)
}

/// Loss value and its gradient with respect to the latent.
pub fn loss_gradient(
    g: &dyn Generator,
    f: &dyn Embedder,
    latent: &[f64],
    target: &EmbeddingVector,
) -> Result<(f64, Vec<f64>)> {
    if !g.supports_gradient() || !f.supports_gradient() {
        return Err(Error::GradientUnavailable);
    }
    check_latent(g, latent)?;
    check_pair(g, f, target)?;
    let image = g.generate(latent)?;
    let z = f.embed(&image)?;
    let loss = cosine_similarity(&z, target)?;
    // d cos(z, t) / dz = t / (|z||t|) - cos * z / |z|^2
    let (nz, nt) = (z.norm(), target.norm());
    let dz: Vec<f64> = z
        .values()
        .iter()
        .zip(target.values())
        .map(|(zi, ti)| ti / (nz * nt) - loss * zi / (nz * nz))
        .collect();
    let dimage = f.pullback(&image, &dz)?;
    let dlatent = g.pullback(latent, &dimage)?;
    Ok((loss, dlatent))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    WhiteBox,
    BlackBox,
}

/// Monotone query counter shared by the stages of one attack.
#[derive(Debug, Default)]
pub struct QueryCounter(AtomicU64);

impl QueryCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::SeqCst);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// One attacker's view of a target model: the generator, the target
/// embedder, the leaked embedding, and the access level granted. Every
/// objective evaluation is charged one query.
pub struct TargetSession<'a> {
    generator: &'a dyn Generator,
    embedder: &'a dyn Embedder,
    target: &'a EmbeddingVector,
    access: Access,
    queries: QueryCounter,
}

impl<'a> TargetSession<'a> {
    pub fn new(
        generator: &'a dyn Generator,
        embedder: &'a dyn Embedder,
        target: &'a EmbeddingVector,
        access: Access,
    ) -> Result<Self> {
        check_pair(generator, embedder, target)?;
        if access == Access::WhiteBox && !(generator.supports_gradient() && embedder.supports_gradient()) {
            return Err(Error::GradientUnavailable);
        }
        Ok(Self {
            generator,
            embedder,
            target,
            access,
            queries: QueryCounter::new(),
        })
    }

    pub fn access(&self) -> Access {
        self.access
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    pub fn generator(&self) -> &'a dyn Generator {
        self.generator
    }

    pub fn queries(&self) -> u64 {
        self.queries.get()
    }

    pub fn loss(&self, latent: &[f64]) -> Result<f64> {
        self.queries.add(1);
        loss_eval(self.generator, self.embedder, latent, self.target)
    }

    pub fn loss_and_gradient(&self, latent: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.access == Access::BlackBox {
            return Err(Error::GradientUnavailable);
        }
        self.queries.add(1);
        loss_gradient(self.generator, self.embedder, latent, self.target)
    }
}
