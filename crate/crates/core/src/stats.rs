//! D'Agostino's K² omnibus normality test.
//!
//! The skewness and kurtosis statistics are the biased sample moments
//! `b1 = m3 / m2^1.5` and `b2 = m4 / m2^2`, each pushed through D'Agostino's
//! normalizing transform so that under the null they are approximately
//! standard normal. Their squared sum is chi-square with two degrees of
//! freedom, whose survival function is `exp(-k2 / 2)`.
//!
//! References:
//! - D'Agostino, R. B. (1970), "Transformation to normality of the null
//!   distribution of g1", Biometrika 57, 679-681.
//! - Anscombe, F. J. & Glynn, W. J. (1983), "Distribution of the kurtosis
//!   statistic b2 for normal samples", Biometrika 70, 227-234.
//! - D'Agostino, R. B., Belanger, A. & D'Agostino Jr., R. B. (1990),
//!   "A suggestion for using powerful and informative tests of normality",
//!   The American Statistician 44, 316-321.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SKEW_SAMPLE: usize = 8;
pub const MIN_KURTOSIS_SAMPLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub z_skew: f64,
    pub z_kurt: f64,
    pub k2: f64,
    pub p_value: f64,
}

/// How a multi-channel latent is fed to the test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormalityMode {
    /// One test over the whole flattened vector.
    #[default]
    Flattened,
    /// One test per contiguous channel block; the reported result is the
    /// channel with the smallest p-value.
    PerChannel { channels: usize },
}

struct Moments {
    n: usize,
    m2: f64,
    m3: f64,
    m4: f64,
}

fn moments(sample: &[f64]) -> Result<Moments> {
    let n = sample.len();
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
    for &x in sample {
        let d = x - mean;
        let d2 = d * d;
        s2 += d2;
        s3 += d2 * d;
        s4 += d2 * d2;
    }
    if s2 == 0.0 || !s2.is_finite() {
        return Err(Error::DegenerateSample);
    }
    Ok(Moments {
        n,
        m2: s2 / nf,
        m3: s3 / nf,
        m4: s4 / nf,
    })
}

fn check_size(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::SampleTooSmall { n, min });
    }
    Ok(())
}

fn skew_z(m: &Moments) -> f64 {
    let n = m.n as f64;
    let b1 = m.m3 / (m.m2 * m.m2.sqrt());
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = (2.0 * (beta2 - 1.0)).sqrt() - 1.0;
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    delta * (y / alpha).asinh()
}

fn kurtosis_z(m: &Moments) -> Result<f64> {
    let n = m.n as f64;
    let b2 = m.m4 / (m.m2 * m.m2);
    let mean_b2 = 3.0 * (n - 1.0) / (n + 1.0);
    let var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - mean_b2) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / sqrt_beta1.powi(2)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateSample);
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    Ok((term1 - term2) / (2.0 / (9.0 * a)).sqrt())
}

/// Normalized skewness statistic `z_skew`.
pub fn skewness_transform(sample: &[f64]) -> Result<f64> {
    check_size(sample.len(), MIN_SKEW_SAMPLE)?;
    Ok(skew_z(&moments(sample)?))
}

/// Normalized kurtosis statistic `z_kurt`.
pub fn kurtosis_transform(sample: &[f64]) -> Result<f64> {
    check_size(sample.len(), MIN_KURTOSIS_SAMPLE)?;
    kurtosis_z(&moments(sample)?)
}

pub fn chi2_2_survival(k2: f64) -> f64 {
    (-0.5 * k2).exp()
}

pub fn k2_test(sample: &[f64]) -> Result<NormalityResult> {
    check_size(sample.len(), MIN_KURTOSIS_SAMPLE)?;
    let m = moments(sample)?;
    let z_skew = skew_z(&m);
    let z_kurt = kurtosis_z(&m)?;
    let k2 = z_skew * z_skew + z_kurt * z_kurt;
    Ok(NormalityResult {
        z_skew,
        z_kurt,
        k2,
        p_value: chi2_2_survival(k2),
    })
}

pub fn k2_test_with_mode(sample: &[f64], mode: NormalityMode) -> Result<NormalityResult> {
    match mode {
        NormalityMode::Flattened => k2_test(sample),
        NormalityMode::PerChannel { channels } => {
            if channels == 0 || sample.len() % channels != 0 {
                return Err(Error::ConfigInvalid(format!(
                    "cannot split {} values into {channels} channels",
                    sample.len()
                )));
            }
            let mut worst: Option<NormalityResult> = None;
            for chunk in sample.chunks(sample.len() / channels) {
                let r = k2_test(chunk)?;
                if worst.is_none_or(|w| r.p_value < w.p_value) {
                    worst = Some(r);
                }
            }
            Ok(worst.expect("at least one channel"))
        }
    }
}
