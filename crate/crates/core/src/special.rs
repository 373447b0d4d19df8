//! Special functions and normalization kernels shared by every update.
//!
//! Digamma, trigamma and log-gamma lift the argument with the upward
//! recurrence until it reaches [`ASYMPTOTIC_THRESHOLD`], then apply the
//! Stirling-type asymptotic series. Absolute error stays below 1e-10 on
//! (0, ∞) for all three.

use crate::error::{Error, Result};

const ASYMPTOTIC_THRESHOLD: f64 = 6.0;

// Bernoulli numbers B_2k / (2k) for the digamma series.
const DIGAMMA_COEFFS: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

// B_2k / (2k (2k - 1)) for the log-gamma series.
const LOG_GAMMA_COEFFS: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
];

// B_2k for the trigamma series.
const TRIGAMMA_COEFFS: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

fn check_positive(x: f64, name: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} requires a finite positive argument, got {x}")))
    }
}

/// Ψ(x), the logarithmic derivative of Γ.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    Ok(digamma_unchecked(x))
}

/// Ψ(x) without the domain check. Callers guarantee `x > 0`.
#[inline]
pub fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut pow = inv2;
    for c in DIGAMMA_COEFFS {
        series += c * pow;
        pow *= inv2;
    }
    acc + x.ln() - 0.5 / x - series
}

/// ln Γ(x).
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x, "log_gamma")?;
    Ok(log_gamma_unchecked(x))
}

#[inline]
pub fn log_gamma_unchecked(mut x: f64) -> f64 {
    // Accumulate the shifted product in log space one factor at a time so
    // tiny arguments do not lose digits.
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift += x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for c in LOG_GAMMA_COEFFS {
        series += c * pow;
        pow *= inv2;
    }
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

/// Ψ′(x), used by the analytic Laplace Hessian.
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive(x, "trigamma")?;
    Ok(trigamma_unchecked(x))
}

#[inline]
pub fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv2 * inv;
    for c in TRIGAMMA_COEFFS {
        series += c * pow;
        pow *= inv2;
    }
    acc + inv + 0.5 * inv2 + series
}

/// Softmax of `logits`, computed with the log-sum-exp shift.
pub fn log_normalize(logits: &[f64]) -> Result<Vec<f64>> {
    let mut out = logits.to_vec();
    log_normalize_in_place(&mut out)?;
    Ok(out)
}

/// In-place variant of [`log_normalize`]; the hot loops use this one.
pub fn log_normalize_in_place(v: &mut [f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Invalid("log_normalize on an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite logit {bad}")));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
    Ok(())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
