//! The reusable pool of screened latent codes and their cached generations.
//!
//! Candidates are drawn from sequential seeds. Each one first passes the
//! K² normality screen, which is cheap, and only survivors are generated and
//! shown to the face detector. The pool holds no target or embedder data, so
//! one build serves every later attack with the same generator.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ImageSample, ImageShape, LatentCode};
use crate::error::{Error, Result};
use crate::models::{Detector, Generator};
use crate::stats::{k2_test_with_mode, NormalityMode};

pub const POOL_MAGIC: &[u8; 5] = b"LPOOL";
pub const POOL_FORMAT_VERSION: u16 = 1;
/// Checksum algorithm id stored in the header: 1 = SHA-256.
pub const CHECKSUM_SHA256: u8 = 1;
pub const DEFAULT_DRAW_CAP_FACTOR: u64 = 10_000;

/// Rounds to the nearest f32 so that everything a pool holds survives the
/// 32-bit file encoding unchanged.
fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Standard-normal draw for `(d_lat, seed)`, rounded to f32 precision.
pub fn sample_latent(d_lat: usize, seed: u64) -> LatentCode {
    assert!(d_lat > 0, "latent dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..d_lat)
        .map(|_| f32_exact(StandardNormal.sample(&mut rng)))
        .collect();
    LatentCode::new(values, seed)
}

/// Sets `p_k` and reports whether it clears `tau_k`.
pub fn screen_normality(code: &mut LatentCode, tau_k: f64, mode: NormalityMode) -> Result<bool> {
    let p = k2_test_with_mode(&code.values, mode)?.p_value;
    code.p_k = Some(p);
    Ok(p >= tau_k)
}

/// Returns the detector confidence and whether it clears `tau_d`.
pub fn screen_face(image: &ImageSample, detector: &dyn Detector, tau_d: f64) -> Result<(f64, bool)> {
    let p = detector.detect(image)?;
    Ok((p, p >= tau_d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub latent: LatentCode,
    pub image: ImageSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildStats {
    /// Candidates drawn up to and including the last one consumed.
    pub drawn: u64,
    pub normality_accepted: u64,
    /// Generator calls made during the build.
    pub generations: u64,
    pub detector_accepted: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPool {
    pub entries: Vec<PoolEntry>,
    pub volume: usize,
    pub tau_k: f64,
    pub tau_d: f64,
    pub generator_id: String,
    pub latent_dim: usize,
    pub image_shape: ImageShape,
    pub build_seed: u64,
    pub stats: BuildStats,
}

impl LatentPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolSpec {
    pub volume: usize,
    pub tau_k: f64,
    pub tau_d: f64,
    pub build_seed: u64,
    /// Give up after this many draws; defaults to 10 000 x volume.
    pub max_draws: Option<u64>,
    pub normality: NormalityMode,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            volume: 1000,
            tau_k: 0.999,
            tau_d: 0.999,
            build_seed: 0,
            max_draws: None,
            normality: NormalityMode::Flattened,
        }
    }
}

impl PoolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.volume == 0 {
            return Err(Error::ConfigInvalid("pool volume must be at least 1".into()));
        }
        for (name, t) in [("tau_k", self.tau_k), ("tau_d", self.tau_d)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::ConfigInvalid(format!("{name} = {t} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn draw_cap(&self) -> u64 {
        self.max_draws
            .unwrap_or_else(|| DEFAULT_DRAW_CAP_FACTOR.saturating_mul(self.volume as u64))
    }
}

/// Candidates screened for normality per parallel batch.
const SCREEN_BATCH: u64 = 4096;

pub fn build_pool(generator: &dyn Generator, detector: &dyn Detector, spec: &PoolSpec) -> Result<LatentPool> {
    spec.validate()?;
    if generator.output_shape() != detector.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: detector.input_shape().to_string(),
            got: generator.output_shape().to_string(),
        });
    }
    let d_lat = generator.latent_dim();
    let cap = spec.draw_cap();
    let mut stats = BuildStats::default();
    let mut entries = Vec::with_capacity(spec.volume);
    let mut offset = 0u64;

    while entries.len() < spec.volume && offset < cap {
        let batch = SCREEN_BATCH.min(cap - offset);
        // Screen in parallel, then commit in seed order.
        let screened: Vec<(u64, Result<Option<LatentCode>>)> = (offset..offset + batch)
            .into_par_iter()
            .map(|i| {
                let mut code = sample_latent(d_lat, spec.build_seed.wrapping_add(i));
                let verdict = screen_normality(&mut code, spec.tau_k, spec.normality)
                    .map(|ok| ok.then_some(code));
                (i, verdict)
            })
            .collect();
        stats.drawn = offset + batch;
        for (i, verdict) in screened {
            let Some(mut code) = verdict? else { continue };
            stats.normality_accepted += 1;
            stats.generations += 1;
            let generated = generator.generate(&code.values)?;
            let image = ImageSample::new(
                generated.shape(),
                generated.values().iter().map(|&v| f32_exact(v)).collect(),
            )?;
            let (p_d, ok) = screen_face(&image, detector, spec.tau_d)?;
            code.p_d = Some(p_d);
            if ok {
                stats.detector_accepted += 1;
                entries.push(PoolEntry { latent: code, image });
                if entries.len() == spec.volume {
                    stats.drawn = i + 1;
                    break;
                }
            }
        }
        offset += batch;
    }

    if entries.len() < spec.volume {
        return Err(Error::PoolExhausted {
            drawn: stats.drawn,
            accepted: entries.len(),
            wanted: spec.volume,
        });
    }
    Ok(LatentPool {
        entries,
        volume: spec.volume,
        tau_k: spec.tau_k,
        tau_d: spec.tau_d,
        generator_id: generator.id().to_string(),
        latent_dim: d_lat,
        image_shape: generator.output_shape(),
        build_seed: spec.build_seed,
        stats,
    })
}

// ---------------------------------------------------------------------------
// File format (all integers and floats little-endian)
//
// header:
//   magic "LPOOL" | version u16 | d_lat u32 | channels u32 | height u32 |
//   width u32 | volume u32 | tau_k f64 | tau_d f64 | generator_id (u16 len +
//   utf-8) | build_seed u64 | drawn u64 | normality_accepted u64 |
//   generations u64 | detector_accepted u64 | entry_count u32 |
//   checksum algorithm u8
// entry (entry_count times):
//   seed u64 | p_k f64 | p_d f64 | latent f32 x d_lat | image f32 x c*h*w |
//   sha256 of the entry bytes above (32 bytes)
// trailer:
//   sha256 of every preceding byte (32 bytes)
// ---------------------------------------------------------------------------

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn encode_pool(pool: &LatentPool) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(POOL_MAGIC);
    out.extend_from_slice(&POOL_FORMAT_VERSION.to_le_bytes());
    let u32_of = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::ConfigInvalid(format!("{what} too large for pool format")))
    };
    out.extend_from_slice(&u32_of(pool.latent_dim, "latent dim")?.to_le_bytes());
    for d in pool.image_shape.as_array() {
        out.extend_from_slice(&u32_of(d, "image dim")?.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(pool.volume, "volume")?.to_le_bytes());
    out.extend_from_slice(&pool.tau_k.to_le_bytes());
    out.extend_from_slice(&pool.tau_d.to_le_bytes());
    let id = pool.generator_id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| Error::ConfigInvalid("generator id too long".into()))?;
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&pool.build_seed.to_le_bytes());
    for v in [
        pool.stats.drawn,
        pool.stats.normality_accepted,
        pool.stats.generations,
        pool.stats.detector_accepted,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(pool.entries.len(), "entry count")?.to_le_bytes());
    out.push(CHECKSUM_SHA256);

    for e in &pool.entries {
        if e.latent.len() != pool.latent_dim || e.image.shape() != pool.image_shape {
            return Err(Error::Malformed("pool entry does not match pool dimensions".into()));
        }
        let start = out.len();
        out.extend_from_slice(&e.latent.seed.to_le_bytes());
        out.extend_from_slice(&e.latent.p_k.unwrap_or(f64::NAN).to_le_bytes());
        out.extend_from_slice(&e.latent.p_d.unwrap_or(f64::NAN).to_le_bytes());
        for &v in e.latent.values.iter().chain(e.image.values()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let digest = sha256(&out[start..]);
        out.extend_from_slice(&digest);
    }
    let digest = sha256(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::ChecksumMismatch("pool file (truncated)".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Malformed("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

fn optional(p: f64) -> Option<f64> {
    (!p.is_nan()).then_some(p)
}

pub fn decode_pool(bytes: &[u8]) -> Result<LatentPool> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(POOL_MAGIC.len())? != POOL_MAGIC {
        return Err(Error::Malformed("not a latent pool file".into()));
    }
    let version = r.u16()?;
    if version != POOL_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            found: version,
            supported: POOL_FORMAT_VERSION,
        });
    }
    if bytes.len() < 32 + r.pos {
        return Err(Error::ChecksumMismatch("pool file (truncated)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if sha256(body) != trailer {
        return Err(Error::ChecksumMismatch("pool file".into()));
    }
    let mut r = Reader { bytes: body, pos: r.pos };

    let latent_dim = r.u32()?;
    let image_shape = ImageShape::new(r.u32()?, r.u32()?, r.u32()?);
    let volume = r.u32()?;
    let tau_k = r.f64()?;
    let tau_d = r.f64()?;
    let id_len = r.u16()? as usize;
    let generator_id = String::from_utf8(r.take(id_len)?.to_vec())
        .map_err(|_| Error::Malformed("generator id is not utf-8".into()))?;
    let build_seed = r.u64()?;
    let stats = BuildStats {
        drawn: r.u64()?,
        normality_accepted: r.u64()?,
        generations: r.u64()?,
        detector_accepted: r.u64()?,
    };
    let count = r.u32()?;
    let algo = r.take(1)?[0];
    if algo != CHECKSUM_SHA256 {
        return Err(Error::Malformed(format!("unknown checksum algorithm {algo}")));
    }

    let mut entries = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let start = r.pos;
        let seed = r.u64()?;
        let p_k = optional(r.f64()?);
        let p_d = optional(r.f64()?);
        let latent = r.f32s(latent_dim)?;
        let image = r.f32s(image_shape.len())?;
        let end = r.pos;
        if r.take(32)? != sha256(&body[start..end]) {
            return Err(Error::ChecksumMismatch(format!("pool entry {i}")));
        }
        entries.push(PoolEntry {
            latent: LatentCode {
                values: latent,
                seed,
                p_k,
                p_d,
            },
            image: ImageSample::new(image_shape, image)?,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Malformed("trailing bytes after pool entries".into()));
    }
    Ok(LatentPool {
        entries,
        volume,
        tau_k,
        tau_d,
        generator_id,
        latent_dim,
        image_shape,
        build_seed,
        stats,
    })
}

pub fn save_pool(pool: &LatentPool, path: &Path) -> Result<()> {
    let bytes = encode_pool(pool)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_pool(path: &Path) -> Result<LatentPool> {
    decode_pool(&fs::read(path)?)
}
