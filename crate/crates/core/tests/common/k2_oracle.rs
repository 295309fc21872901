//! Double-double transcription of D'Agostino's skewness and kurtosis
//! transforms. Kept independent of the library path: moments are
//! accumulated in double-double and every transform step is evaluated in
//! double-double before rounding the result to f64.

use twofloat::TwoFloat;

pub struct OracleResult {
    pub z_skew: f64,
    pub z_kurt: f64,
    pub k2: f64,
    pub p_value: f64,
}

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

fn central_moments(sample: &[f64]) -> (TwoFloat, TwoFloat, TwoFloat) {
    let n = tf(sample.len() as f64);
    let mut sum = tf(0.0);
    for &x in sample {
        sum += x;
    }
    let mean = sum / n;
    let (mut s2, mut s3, mut s4) = (tf(0.0), tf(0.0), tf(0.0));
    for &x in sample {
        let d = tf(x) - mean;
        let d2 = d * d;
        s2 += d2;
        s3 += d2 * d;
        s4 += d2 * d2;
    }
    (s2 / n, s3 / n, s4 / n)
}

pub fn z_skew(sample: &[f64]) -> f64 {
    let (m2, m3, _) = central_moments(sample);
    z_skew_from(m2, m3, sample.len()).hi()
}

fn z_skew_from(m2: TwoFloat, m3: TwoFloat, n: usize) -> TwoFloat {
    let n = tf(n as f64);
    let b1 = m3 / (m2 * m2.sqrt());
    let y = b1 * ((n + 1.0) * (n + 3.0) / (tf(6.0) * (n - 2.0))).sqrt();
    let beta2 = tf(3.0) * (n * n + tf(27.0) * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = (tf(2.0) * (beta2 - 1.0)).sqrt() - 1.0;
    let delta = tf(1.0) / (tf(0.5) * w2.ln()).sqrt();
    let alpha = (tf(2.0) / (w2 - 1.0)).sqrt();
    let r = y / alpha;
    // asinh via the logarithmic form, with the odd symmetry applied
    // explicitly so negative arguments do not cancel.
    let a = r.abs();
    let asinh = (a + (a * a + 1.0).sqrt()).ln();
    let asinh = if r.is_sign_negative() { -asinh } else { asinh };
    delta * asinh
}

pub fn z_kurt(sample: &[f64]) -> f64 {
    let (m2, _, m4) = central_moments(sample);
    z_kurt_from(m2, m4, sample.len()).hi()
}

fn z_kurt_from(m2: TwoFloat, m4: TwoFloat, n: usize) -> TwoFloat {
    let n = tf(n as f64);
    let b2 = m4 / (m2 * m2);
    let e = tf(3.0) * (n - 1.0) / (n + 1.0);
    let var = tf(24.0) * n * (n - 2.0) * (n - 3.0)
        / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sqrt_beta1 = tf(6.0) * (n * n - tf(5.0) * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (tf(6.0) * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = tf(6.0)
        + tf(8.0) / sqrt_beta1
            * (tf(2.0) / sqrt_beta1 + (tf(1.0) + tf(4.0) / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = tf(1.0) - tf(2.0) / (tf(9.0) * a);
    let denom = tf(1.0) + x * (tf(2.0) / (a - 4.0)).sqrt();
    let cube = ((tf(1.0) - tf(2.0) / a) / denom.abs()).cbrt();
    let term2 = if denom.is_sign_negative() { -cube } else { cube };
    (term1 - term2) / (tf(2.0) / (tf(9.0) * a)).sqrt()
}

pub fn k2(sample: &[f64]) -> OracleResult {
    let (m2, m3, m4) = central_moments(sample);
    let zs = z_skew_from(m2, m3, sample.len());
    let zk = z_kurt_from(m2, m4, sample.len());
    let k2 = zs * zs + zk * zk;
    let p = (-(k2 / 2.0)).exp();
    OracleResult {
        z_skew: zs.hi(),
        z_kurt: zk.hi(),
        k2: k2.hi(),
        p_value: p.hi(),
    }
}
