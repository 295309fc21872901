#![allow(dead_code)]

pub mod k2_oracle;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use invkit::domain::{EmbeddingVector, ImageSample, ImageShape, TargetSpec};
use invkit::eval::CalibrationSet;
use invkit::models::{Embedder, Generator, SyntheticWorld, WorldConfig};
use invkit::pool::{build_pool, LatentPool, PoolSpec};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

pub const WORLD_SEED: u64 = 1;
pub const POOL_SEED: u64 = 7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_sample(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

pub fn exponential_sample(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| Exp1.sample(&mut r)).collect()
}

pub fn uniform_sample(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Standard normal with roughly 1% of points replaced by +-8.
pub fn outlier_sample(seed: u64, n: usize) -> Vec<f64> {
    let mut v = normal_sample(seed, n);
    let mut r = rng(seed ^ 0xA5A5);
    let k = (n / 100).max(1);
    for i in 0..k {
        let j = r.random_range(0..n);
        v[j] = if i % 2 == 0 { 8.0 } else { -8.0 };
    }
    v
}

pub fn desk_world() -> SyntheticWorld {
    SyntheticWorld::build(&WorldConfig::default(), WORLD_SEED).expect("default world builds")
}

pub fn desk_pool(world: &SyntheticWorld, volume: usize) -> LatentPool {
    let spec = PoolSpec {
        volume,
        build_seed: POOL_SEED,
        ..PoolSpec::default()
    };
    build_pool(world.generator.as_ref(), world.detector.as_ref(), &spec).expect("pool builds")
}

/// One-sided exact sign test: probability of at least `up` successes out of
/// `up + down` fair coin flips.
pub fn sign_test_p(up: usize, down: usize) -> f64 {
    let n = up + down;
    binomial_tail(n, 0.5, up)
}

/// P(X >= k) for X ~ Binomial(n, p), summed in log space.
pub fn binomial_tail(n: usize, p: f64, k: usize) -> f64 {
    (k..=n).map(|i| binomial_pmf(n, p, i)).sum::<f64>().min(1.0)
}

pub fn binomial_pmf(n: usize, p: f64, k: usize) -> f64 {
    let ln_choose = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

fn ln_factorial(n: usize) -> f64 {
    statrs::function::factorial::ln_factorial(n as u64)
}

/// Central interval `[lo, hi]` holding at least `conf` of Binomial(n, p),
/// with at most `(1 - conf) / 2` in each tail.
pub fn binomial_interval(n: usize, p: f64, conf: f64) -> (usize, usize) {
    let tail = (1.0 - conf) / 2.0;
    let pmf: Vec<f64> = (0..=n).map(|k| binomial_pmf(n, p, k)).collect();
    let mut lo = 0;
    let mut below = 0.0;
    while below + pmf[lo] <= tail {
        below += pmf[lo];
        lo += 1;
    }
    let mut hi = n;
    let mut above = 0.0;
    while above + pmf[hi] <= tail {
        above += pmf[hi];
        hi -= 1;
    }
    (lo, hi)
}

/// Kolmogorov-Smirnov distance between `values` and Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

/// Brute-force EER threshold: evaluate every interval between consecutive
/// distinct scores by direct counting, keep those minimizing |FAR - FRR|
/// (compared exactly via cross-multiplication), and return the midpoint of
/// their union.
pub fn eer_sweep_oracle(cal: &CalibrationSet) -> (f64, f64) {
    let mut edges: Vec<f64> = vec![-1.0, 1.0];
    edges.extend(cal.genuine_scores.iter().chain(&cal.impostor_scores));
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let (ng, ni) = (cal.genuine_scores.len() as i128, cal.impostor_scores.len() as i128);
    let mut scored = Vec::new();
    for w in edges.windows(2) {
        let probe = 0.5 * (w[0] + w[1]);
        let fa = cal.impostor_scores.iter().filter(|&&s| s >= probe).count() as i128;
        let fr = cal.genuine_scores.iter().filter(|&&s| s < probe).count() as i128;
        scored.push(((fa * ng - fr * ni).abs(), w[0], w[1]));
    }
    let best = scored.iter().map(|s| s.0).min().unwrap();
    let lo = scored.iter().filter(|s| s.0 == best).map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = scored.iter().filter(|s| s.0 == best).map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let t = 0.5 * (lo + hi);
    let (far, frr) = cal.rates_at(t);
    (t, 0.5 * (far + frr))
}

/// Central finite difference of `f` along every coordinate.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Generator wrapper that records every latent it is asked to render.
pub struct RecordingGenerator {
    pub inner: Arc<dyn Generator>,
    pub seen: Mutex<Vec<Vec<f64>>>,
}

impl RecordingGenerator {
    pub fn new(inner: Arc<dyn Generator>) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn take(&self) -> Vec<Vec<f64>> {
        std::mem::take(&mut *self.seen.lock().unwrap())
    }
}

impl Generator for RecordingGenerator {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn output_shape(&self) -> ImageShape {
        self.inner.output_shape()
    }

    fn generate(&self, latent: &[f64]) -> invkit::Result<ImageSample> {
        self.seen.lock().unwrap().push(latent.to_vec());
        self.inner.generate(latent)
    }

    fn supports_gradient(&self) -> bool {
        self.inner.supports_gradient()
    }

    fn pullback(&self, latent: &[f64], image_grad: &[f64]) -> invkit::Result<Vec<f64>> {
        self.inner.pullback(latent, image_grad)
    }
}

/// Embedder wrapper that counts gradient requests.
pub struct GradientTrap {
    pub inner: Arc<dyn Embedder>,
    pub pullbacks: AtomicUsize,
}

impl GradientTrap {
    pub fn new(inner: Arc<dyn Embedder>) -> Self {
        Self {
            inner,
            pullbacks: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.pullbacks.load(Ordering::SeqCst)
    }
}

impl Embedder for GradientTrap {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }

    fn input_shape(&self) -> ImageShape {
        self.inner.input_shape()
    }

    fn embed(&self, image: &ImageSample) -> invkit::Result<EmbeddingVector> {
        self.inner.embed(image)
    }

    fn supports_gradient(&self) -> bool {
        self.inner.supports_gradient()
    }

    fn pullback(&self, image: &ImageSample, embedding_grad: &[f64]) -> invkit::Result<Vec<f64>> {
        self.pullbacks.fetch_add(1, Ordering::SeqCst);
        self.inner.pullback(image, embedding_grad)
    }
}

/// Target specs for the first `count` gallery targets under `model`.
pub fn desk_targets(world: &SyntheticWorld, count: usize, model: usize) -> Vec<TargetSpec> {
    world
        .gallery_targets(count)
        .unwrap()
        .iter()
        .map(|t| world.target_spec(t, model).unwrap())
        .collect()
}

/// Embedder that reads the pixels back as the embedding.
pub struct Raw {
    pub id: String,
    pub shape: ImageShape,
}

impl Raw {
    pub fn new(id: &str, width: usize) -> Self {
        Self {
            id: id.to_string(),
            shape: ImageShape::new(1, 1, width),
        }
    }
}

impl Embedder for Raw {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn embed_dim(&self) -> usize {
        self.shape.len()
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn embed(&self, image: &ImageSample) -> invkit::Result<EmbeddingVector> {
        image.expect_shape(self.shape)?;
        EmbeddingVector::new(image.values().to_vec())
    }
}

/// Unit vector in the plane at `deg` degrees.
pub fn at(deg: f64) -> ImageSample {
    let r = deg.to_radians();
    ImageSample::new(ImageShape::new(1, 1, 2), vec![r.cos(), r.sin()]).unwrap()
}
