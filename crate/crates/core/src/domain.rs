//! Value types shared by every stage of the attack, plus the similarity
//! primitive and the identity decision rule.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A point in a generator's input space together with its screening
/// metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub values: Vec<f64>,
    pub seed: u64,
    /// Normality p-value from the K² screen.
    pub p_k: Option<f64>,
    /// Face-detector confidence of the generated image.
    pub p_d: Option<f64>,
}

impl LatentCode {
    pub fn new(values: Vec<f64>, seed: u64) -> Self {
        Self {
            values,
            seed,
            p_k: None,
            p_d: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with replaced values; screening metadata does not carry over
    /// because it described the old values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self::new(values, self.seed)
    }
}

/// Identity representation produced by an embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed("embedding contains non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Neg for &EmbeddingVector {
    type Output = EmbeddingVector;

    fn neg(self) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|v| -v).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A CHW image with pixel values in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawImage")]
pub struct ImageSample {
    shape: ImageShape,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawImage {
    shape: ImageShape,
    values: Vec<f64>,
}

impl TryFrom<RawImage> for ImageSample {
    type Error = Error;

    fn try_from(raw: RawImage) -> Result<Self> {
        Self::new(raw.shape, raw.values)
    }
}

impl ImageSample {
    pub fn new(shape: ImageShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::dim(shape.len(), values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Malformed(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn expect_shape(&self, shape: ImageShape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                got: self.shape.to_string(),
            });
        }
        Ok(())
    }

    /// Content digest over shape and exact pixel bits.
    pub fn digest(&self) -> ImageDigest {
        let mut h = Sha256::new();
        for d in self.shape.as_array() {
            h.update((d as u64).to_le_bytes());
        }
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        ImageDigest(h.finalize().into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageDigest(pub [u8; 32]);

/// A label that counts how often it is read. Used to hold evaluation-only
/// ground truth next to data the attack is allowed to see, so tests can
/// assert the attack path never looked at it.
#[derive(Debug, Clone, Default)]
pub struct AuditedLabel {
    value: Option<String>,
    reads: Arc<AtomicUsize>,
}

impl AuditedLabel {
    pub fn new(value: Option<String>) -> Self {
        Self {
            value,
            reads: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn get(&self) -> Option<&str> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        self.value.as_deref()
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

/// What the attacker is handed: a leaked embedding and the id of the model
/// that produced it.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub target_embedding: EmbeddingVector,
    pub target_model_id: String,
    identity: AuditedLabel,
}

impl TargetSpec {
    pub fn new(target_embedding: EmbeddingVector, target_model_id: impl Into<String>) -> Self {
        Self {
            target_embedding,
            target_model_id: target_model_id.into(),
            identity: AuditedLabel::default(),
        }
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = AuditedLabel::new(Some(identity.into()));
        self
    }

    /// Ground-truth identity. Evaluation code only.
    pub fn identity_id(&self) -> Option<&str> {
        self.identity.get()
    }

    pub fn identity_reads(&self) -> usize {
        self.identity.reads()
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormEmbedding);
    }
    Ok((dot(a.values(), b.values()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Same-identity decision; equality counts as a match.
pub fn decide_match(similarity: f64, tau_f: f64) -> bool {
    similarity >= tau_f
}
