//! Seeded desk-scale stand-ins for the generator, embedder and detector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{Detector, Embedder, Generator};
use crate::domain::{dot, l2_norm, EmbeddingVector, ImageSample, ImageShape};
use crate::error::{Error, Result};

/// Derive an independent sub-seed from a master seed and a label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

pub(crate) fn gaussian_vec(seed: u64, len: usize, std: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

/// `y = A x` for row-major `A` with `rows` rows.
fn matvec(a: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    a.chunks_exact(a.len() / rows).map(|row| dot(row, x)).collect()
}

/// `x = A^T y` for row-major `A`.
fn matvec_t(a: &[f64], y: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, &yi) in a.chunks_exact(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(row) {
            *o += yi * w;
        }
    }
    out
}

/// `image = tanh(W latent + b)` with a seeded dense `W` and bias field `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGenerator {
    id: String,
    latent_dim: usize,
    shape: ImageShape,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl SyntheticGenerator {
    pub fn seeded(
        id: impl Into<String>,
        latent_dim: usize,
        shape: ImageShape,
        gain: f64,
        bias_scale: f64,
        seed: u64,
    ) -> Self {
        let n = shape.len();
        Self {
            id: id.into(),
            latent_dim,
            shape,
            weights: gaussian_vec(
                derive_seed(seed, "weights"),
                n * latent_dim,
                gain / (latent_dim as f64).sqrt(),
            ),
            bias: gaussian_vec(derive_seed(seed, "bias"), n, bias_scale),
        }
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward(&self, latent: &[f64]) -> Vec<f64> {
        let mut pre = matvec(&self.weights, latent, self.shape.len());
        for (p, b) in pre.iter_mut().zip(&self.bias) {
            *p = (*p + b).tanh();
        }
        pre
    }
}

impl Generator for SyntheticGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn output_shape(&self) -> ImageShape {
        self.shape
    }

    fn generate(&self, latent: &[f64]) -> Result<ImageSample> {
        if latent.len() != self.latent_dim {
            return Err(Error::dim(self.latent_dim, latent.len()));
        }
        ImageSample::new(self.shape, self.forward(latent))
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn pullback(&self, latent: &[f64], image_grad: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != self.latent_dim {
            return Err(Error::dim(self.latent_dim, latent.len()));
        }
        if image_grad.len() != self.shape.len() {
            return Err(Error::dim(self.shape.len(), image_grad.len()));
        }
        let x = self.forward(latent);
        let pre_grad: Vec<f64> = x.iter().zip(image_grad).map(|(x, g)| g * (1.0 - x * x)).collect();
        Ok(matvec_t(&self.weights, &pre_grad, self.latent_dim))
    }
}

/// `z = normalize(A (image - center))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEmbedder {
    model_id: String,
    shape: ImageShape,
    dim: usize,
    weights: Vec<f64>,
    center: Vec<f64>,
}

impl SyntheticEmbedder {
    pub fn from_parts(
        model_id: impl Into<String>,
        shape: ImageShape,
        dim: usize,
        weights: Vec<f64>,
        center: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != dim * shape.len() {
            return Err(Error::dim(dim * shape.len(), weights.len()));
        }
        if center.len() != shape.len() {
            return Err(Error::dim(shape.len(), center.len()));
        }
        Ok(Self {
            model_id: model_id.into(),
            shape,
            dim,
            weights,
            center,
        })
    }

    /// Plain random projection with no centering.
    pub fn seeded(model_id: impl Into<String>, shape: ImageShape, dim: usize, seed: u64) -> Self {
        let n = shape.len();
        Self {
            model_id: model_id.into(),
            shape,
            dim,
            weights: gaussian_vec(seed, dim * n, 1.0 / (n as f64).sqrt()),
            center: vec![0.0; n],
        }
    }

    fn project(&self, image: &ImageSample) -> Result<Vec<f64>> {
        image.expect_shape(self.shape)?;
        let centered: Vec<f64> = image.values().iter().zip(&self.center).map(|(x, c)| x - c).collect();
        Ok(matvec(&self.weights, &centered, self.dim))
    }
}

impl Embedder for SyntheticEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn embed(&self, image: &ImageSample) -> Result<EmbeddingVector> {
        let u = self.project(image)?;
        let norm = l2_norm(&u);
        if norm == 0.0 {
            return Err(Error::ZeroNormEmbedding);
        }
        EmbeddingVector::new(u.into_iter().map(|v| v / norm).collect())
    }

    fn supports_gradient(&self) -> bool {
        true
    }

    fn pullback(&self, image: &ImageSample, embedding_grad: &[f64]) -> Result<Vec<f64>> {
        if embedding_grad.len() != self.dim {
            return Err(Error::dim(self.dim, embedding_grad.len()));
        }
        let u = self.project(image)?;
        let norm = l2_norm(&u);
        if norm == 0.0 {
            return Err(Error::ZeroNormEmbedding);
        }
        // z = u / |u|  =>  du = (dz - (z . dz) z) / |u|
        let z: Vec<f64> = u.iter().map(|v| v / norm).collect();
        let zdz = dot(&z, embedding_grad);
        let du: Vec<f64> = z.iter().zip(embedding_grad).map(|(zi, gi)| (gi - zdz * zi) / norm).collect();
        Ok(matvec_t(&self.weights, &du, self.shape.len()))
    }
}

/// Logistic score of the image's mean correlation with a face template.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDetector {
    id: String,
    shape: ImageShape,
    template: Vec<f64>,
    gain: f64,
    offset: f64,
}

impl SyntheticDetector {
    pub fn new(
        id: impl Into<String>,
        shape: ImageShape,
        template: Vec<f64>,
        gain: f64,
        offset: f64,
    ) -> Result<Self> {
        if template.len() != shape.len() {
            return Err(Error::dim(shape.len(), template.len()));
        }
        Ok(Self {
            id: id.into(),
            shape,
            template,
            gain,
            offset,
        })
    }

    /// Raw template correlation before the logistic squash.
    pub fn correlation(&self, image: &ImageSample) -> Result<f64> {
        image.expect_shape(self.shape)?;
        Ok(dot(image.values(), &self.template) / self.shape.len() as f64)
    }

    /// Pick gain and offset so that correlation `floor` scores exactly
    /// `floor_score` and a zero image scores `1 - floor_score`.
    pub fn calibrate(&mut self, floor: f64, floor_score: f64) -> Result<()> {
        if !(floor > 0.0) || !(0.5..1.0).contains(&floor_score) {
            return Err(Error::ConfigInvalid(format!(
                "cannot calibrate detector at correlation {floor} / score {floor_score}"
            )));
        }
        self.offset = 0.5 * floor;
        let logit = (floor_score / (1.0 - floor_score)).ln();
        self.gain = logit / (floor - self.offset);
        Ok(())
    }
}

impl Detector for SyntheticDetector {
    fn id(&self) -> &str {
        &self.id
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn detect(&self, image: &ImageSample) -> Result<f64> {
        let s = self.correlation(image)?;
        Ok(1.0 / (1.0 + (-self.gain * (s - self.offset)).exp()))
    }
}
