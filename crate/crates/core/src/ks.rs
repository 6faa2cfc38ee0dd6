//! Two-sample Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terms of the Kolmogorov series smaller than this end the sum.
pub const SERIES_TOLERANCE: f64 = 1e-12;
/// Below this `λ` the tail probability is 1 to double precision.
pub const SMALL_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `sup |F_a - F_b|` by a merged sweep over both sorted samples. Runs of
/// equal values advance both empirical CDFs before the gap is measured.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    for s in [a, b] {
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("KS sample"));
        }
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Kolmogorov tail `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`, clamped to `[0, 1]`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < SMALL_LAMBDA {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=10_000u32 {
        let term = (-2.0 * f64::from(j * j) * lambda * lambda).exp();
        sum += sign * term;
        if term < SERIES_TOLERANCE {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value for statistic `d` with sample sizes `n` and `m`.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(Error::TooFewSamples { needed: 2, got });
    }
    let statistic = ks_statistic(a, b)?;
    Ok(KsResult {
        statistic,
        p_value: ks_p_value(statistic, a.len(), b.len()),
    })
}
