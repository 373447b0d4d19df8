//! Random draws used by the synthetic generator and the initializers.
//!
//! Gamma variates come from `rand_distr` (Marsaglia–Tsang). Dirichlet draws
//! normalize Gamma variates in log space so that shapes far below 1, such as
//! the α/K_s = 0.01 weak-limit prior, never underflow to an all-zero vector.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::special::log_normalize_in_place;

fn check_shape(a: f64) -> Result<()> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("shape parameter must be positive, got {a}")))
    }
}

/// ln of a Gamma(shape, 1) variate.
fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("validated shape");
        g.sample(rng).ln()
    } else {
        // G(a) = G(a + 1) · U^(1/a)
        let g = Gamma::new(shape + 1.0, 1.0).expect("validated shape");
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        g.sample(rng).ln() + u.ln() / shape
    }
}

pub fn sample_dirichlet<R: Rng + ?Sized>(params: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::Invalid("Dirichlet needs at least one parameter".into()));
    }
    for &a in params {
        check_shape(a)?;
    }
    let mut logs: Vec<f64> = params.iter().map(|&a| log_gamma_variate(a, rng)).collect();
    log_normalize_in_place(&mut logs)?;
    Ok(logs)
}

/// Draws an index from `probs`. Zero-probability entries are never chosen.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || total <= 0.0 {
        return Err(Error::Domain("categorical probabilities must be non-negative with positive mass".into()));
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let draw = sample_dirichlet(&[a, b], rng)?;
    Ok(draw[0].clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

/// exp of a multivariate normal draw N(mean, cov).
pub fn sample_row_log_normal<R: Rng + ?Sized>(mean: &[f64], cov: &SpdMatrix, rng: &mut R) -> Result<Vec<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "log-normal mean has length {} but covariance is {}x{}",
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let l = cov.cholesky_l();
    let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok((0..mean.len())
        .map(|i| {
            let shift: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            (mean[i] + shift).exp()
        })
        .collect())
}
