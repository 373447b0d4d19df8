//! Laplace step for the non-conjugate community confusion matrices.
//!
//! For one row ω̃_k(r, ·) = w the variational log-density is
//!
//! ```text
//! Σ_n [ ln Γ(Σw) − Σ ln Γ(w_j) + Σ (w_j − 1) E ln ω_{n,k}(r, j) ]
//!   − (R/2) ln 2π − ½ ln det V − Σ ln w_j − ½ (ln w − M)ᵀ V⁻¹ (ln w − M)
//! ```
//!
//! Only the count of agents and the column sums of E ln ω enter, so the
//! agent rows are reduced to [`LaplaceStats`] first. The mode is found by
//! Armijo-backtracked ascent in x = ln w.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::model::{dirichlet_expected_log_into, POSITIVITY_FLOOR};
use crate::special::{digamma_unchecked, log_gamma_unchecked, trigamma_unchecked};

/// Aggregated agent evidence for one confusion-matrix row.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceStats {
    /// Effective number of agent rows (scaled in the minibatch objective).
    pub weight: f64,
    /// Σ_n E ln ω_n(r, ·), scaled alike.
    pub sum_elog: Vec<f64>,
}

impl LaplaceStats {
    pub fn empty(r: usize) -> Self {
        Self {
            weight: 0.0,
            sum_elog: vec![0.0; r],
        }
    }

    /// Reduces stacked ξ rows to their E ln ω column sums.
    pub fn from_xi_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, r: usize) -> Result<Self> {
        let mut stats = Self::empty(r);
        let mut buf = vec![0.0; r];
        for row in rows {
            if row.len() != r {
                return Err(Error::Dimension(format!("xi row has length {}, expected {r}", row.len())));
            }
            if let Some(bad) = row.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::Domain(format!("xi entry {bad} is not positive")));
            }
            dirichlet_expected_log_into(row, &mut buf);
            stats.add_elog(&buf, 1.0);
        }
        Ok(stats)
    }

    /// Adds one agent's E ln ω row with the given weight.
    #[inline]
    pub fn add_elog(&mut self, elog: &[f64], weight: f64) {
        self.weight += weight;
        for (s, e) in self.sum_elog.iter_mut().zip(elog) {
            *s += weight * e;
        }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.weight *= factor;
        self.sum_elog.iter_mut().for_each(|x| *x *= factor);
        self
    }
}

fn check_inputs(w: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> Result<()> {
    let r = w.len();
    if r == 0 || stats.sum_elog.len() != r || m.len() != r || v.dim() != r {
        return Err(Error::Dimension(format!(
            "Laplace inputs disagree: w {r}, stats {}, M {}, V {}",
            stats.sum_elog.len(),
            m.len(),
            v.dim()
        )));
    }
    if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::Domain(format!("Laplace argument {bad} is not positive")));
    }
    Ok(())
}

/// ln q(ω̃_k(r, ·) = w), including the Gaussian normalizing constant.
pub fn laplace_objective(w: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> Result<f64> {
    check_inputs(w, stats, m, v)?;
    Ok(objective_unchecked(w, stats, m, v))
}

fn objective_unchecked(w: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> f64 {
    let r = w.len();
    let total: f64 = w.iter().sum();
    let mut dirichlet = log_gamma_unchecked(total);
    let mut linear = 0.0;
    let mut log_jacobian = 0.0;
    let centered: Vec<f64> = w.iter().zip(m).map(|(x, mm)| x.ln() - mm).collect();
    for j in 0..r {
        dirichlet -= log_gamma_unchecked(w[j]);
        linear += (w[j] - 1.0) * stats.sum_elog[j];
        log_jacobian += w[j].ln();
    }
    let solved = v.solve_vec(&centered);
    let quad: f64 = centered.iter().zip(&solved).map(|(a, b)| a * b).sum();
    stats.weight * dirichlet + linear
        - 0.5 * r as f64 * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * v.ln_det()
        - log_jacobian
        - 0.5 * quad
}

/// ∂/∂w of [`laplace_objective`].
pub fn laplace_gradient(w: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> Result<Vec<f64>> {
    check_inputs(w, stats, m, v)?;
    Ok(gradient_unchecked(w, stats, m, v))
}

fn gradient_unchecked(w: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let dg_total = digamma_unchecked(total);
    let centered: Vec<f64> = w.iter().zip(m).map(|(x, mm)| x.ln() - mm).collect();
    let solved = v.solve_vec(&centered);
    w.iter()
        .enumerate()
        .map(|(j, &wj)| {
            stats.weight * (dg_total - digamma_unchecked(wj)) + stats.sum_elog[j] - 1.0 / wj - solved[j] / wj
        })
        .collect()
}

/// Analytic Hessian of [`laplace_objective`] with respect to w.
pub fn laplace_hessian(w: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> Result<DMatrix<f64>> {
    check_inputs(w, stats, m, v)?;
    Ok(hessian_unchecked(w, stats, m, v))
}

fn hessian_unchecked(w: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> DMatrix<f64> {
    let r = w.len();
    let total: f64 = w.iter().sum();
    let tg_total = trigamma_unchecked(total);
    let centered: Vec<f64> = w.iter().zip(m).map(|(x, mm)| x.ln() - mm).collect();
    let solved = v.solve_vec(&centered);
    let vinv = v.inverse();
    DMatrix::from_fn(r, r, |a, b| {
        let mut h = stats.weight * tg_total - vinv[(a, b)] / (w[a] * w[b]);
        if a == b {
            h += -stats.weight * trigamma_unchecked(w[a]) + (1.0 + solved[a]) / (w[a] * w[a]);
        }
        h
    })
}

/// Ascent direction in x = ln w: the Newton step when the x-space Hessian is
/// negative definite, otherwise the gradient itself.
fn ascent_direction(w: &[f64], grad_w: &[f64], grad_x: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> Vec<f64> {
    let r = w.len();
    let hw = hessian_unchecked(w, stats, m, v);
    let neg_hx = DMatrix::from_fn(r, r, |a, b| {
        let mut h = hw[(a, b)] * w[a] * w[b];
        if a == b {
            h += grad_w[a] * w[a];
        }
        -h
    });
    match neg_hx.cholesky() {
        Some(chol) => {
            let d = chol.solve(&nalgebra::DVector::from_column_slice(grad_x));
            if d.iter().all(|x| x.is_finite()) {
                return d.iter().copied().collect();
            }
            grad_x.to_vec()
        }
        None => grad_x.to_vec(),
    }
}

/// Line-search settings for the mode search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceOptions {
    pub max_steps: usize,
    /// Stop once the ∞-norm of the x-space gradient falls below this.
    pub grad_tol: f64,
    pub shrink: f64,
    pub initial_step: f64,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    /// Use Newton directions where the Hessian allows; plain gradient
    /// ascent otherwise.
    pub newton: bool,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            max_steps: 50,
            grad_tol: 1e-6,
            shrink: 0.5,
            initial_step: 1.0,
            armijo: 1e-4,
            newton: true,
        }
    }
}

/// Result of [`maximize_laplace`].
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceOutcome {
    pub mode: Vec<f64>,
    pub objective: f64,
    /// Accepted ascent steps.
    pub steps: usize,
    pub converged: bool,
    /// The line search failed to find an increase before the step vanished.
    pub stalled: bool,
}

const MIN_LOG_W: f64 = -13.815_510_557_964_274; // ln 1e-6

/// Ascends the objective in x = ln w from `init` with a backtracking line
/// search.
pub fn maximize_laplace(
    init: &[f64],
    stats: &LaplaceStats,
    m: &[f64],
    v: &SpdMatrix,
    opts: &LaplaceOptions,
) -> Result<LaplaceOutcome> {
    check_inputs(init, stats, m, v)?;
    let r = init.len();
    let mut w: Vec<f64> = init.iter().map(|x| x.max(POSITIVITY_FLOOR)).collect();
    let mut f = objective_unchecked(&w, stats, m, v);
    let mut steps = 0;
    let mut stalled = false;
    let mut converged = false;
    let mut trial = vec![0.0; r];
    loop {
        let grad_w = gradient_unchecked(&w, stats, m, v);
        let grad_x: Vec<f64> = grad_w.iter().zip(&w).map(|(g, wj)| g * wj).collect();
        let norm_inf = grad_x.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if norm_inf < opts.grad_tol {
            converged = true;
            break;
        }
        if steps >= opts.max_steps {
            break;
        }
        let dir = if opts.newton {
            ascent_direction(&w, &grad_w, &grad_x, stats, m, v)
        } else {
            grad_x.clone()
        };
        let slope: f64 = grad_x.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let dir_inf = dir.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let mut t = opts.initial_step;
        let mut accepted = false;
        while t * dir_inf > 1e-15 {
            for j in 0..r {
                trial[j] = (w[j].ln() + t * dir[j]).max(MIN_LOG_W).exp();
            }
            let ft = objective_unchecked(&trial, stats, m, v);
            if ft.is_finite() && ft >= f + opts.armijo * t * slope {
                accepted = true;
                break;
            }
            t *= opts.shrink;
        }
        if !accepted {
            // No representable increase left: at the optimum to working precision.
            if slope <= 1e-12 * (1.0 + f.abs()) {
                converged = true;
            } else {
                stalled = true;
            }
            break;
        }
        w.copy_from_slice(&trial);
        f = objective_unchecked(&w, stats, m, v);
        steps += 1;
    }
    Ok(LaplaceOutcome {
        mode: w,
        objective: f,
        steps,
        converged,
        stalled,
    })
}

/// Covariance −H⁻¹ of the Gaussian approximation at `mode`. The flag is false
/// when −H is not positive definite (mode is not a strict maximum).
pub fn laplace_covariance(mode: &[f64], stats: &LaplaceStats, m: &[f64], v: &SpdMatrix) -> Result<(DMatrix<f64>, bool)> {
    let h = laplace_hessian(mode, stats, m, v)?;
    let neg = -h;
    match neg.clone().cholesky() {
        Some(chol) => Ok((chol.inverse(), true)),
        None => {
            let inv = neg.try_inverse().ok_or(Error::NotPositiveDefinite)?;
            Ok((inv, false))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    fn prior(r: usize) -> (Vec<f64>, SpdMatrix) {
        (vec![2.0; r], SpdMatrix::scaled_identity(r, 0.7).unwrap())
    }

    #[test]
    fn prior_only_stationary_point() {
        let (m, v) = prior(6);
        let w: Vec<f64> = m.iter().map(|x| (x - 0.7f64).exp()).collect();
        let g = laplace_gradient(&w, &LaplaceStats::empty(6), &m, &v).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn prior_only_mode_search() {
        let (m, v) = prior(6);
        let init = vec![2.35f64.exp(); 6];
        let out = maximize_laplace(&init, &LaplaceStats::empty(6), &m, &v, &LaplaceOptions::default()).unwrap();
        assert!(out.converged, "{out:?}");
        for x in &out.mode {
            assert!((x - 1.3f64.exp()).abs() < 1e-6, "{out:?}");
        }
        assert!((out.mode[0] - 3.6693).abs() < 1e-4);
    }

    #[test]
    fn objective_is_linear_in_expectations() {
        let (m, v) = prior(3);
        let w = [1.5, 2.0, 0.7];
        let base = LaplaceStats { weight: 4.0, sum_elog: vec![-1.0, -2.0, -0.5] };
        let mut shifted = base.clone();
        shifted.sum_elog.iter_mut().for_each(|x| *x += 0.3);
        let a = laplace_objective(&w, &base, &m, &v).unwrap();
        let b = laplace_objective(&w, &shifted, &m, &v).unwrap();
        let expect = w.iter().map(|x| x - 1.0).sum::<f64>() * 0.3;
        assert!((b - a - expect).abs() < 1e-12);
    }

    #[test]
    fn objective_finite_at_floor() {
        let (m, v) = prior(4);
        let stats = LaplaceStats { weight: 10.0, sum_elog: vec![-1.0; 4] };
        let f = laplace_objective(&[1e-6; 4], &stats, &m, &v).unwrap();
        assert!(f.is_finite());
        assert!(laplace_objective(&[0.0, 1.0, 1.0, 1.0], &stats, &m, &v).is_err());
    }

    #[test]
    fn gradient_symmetric_inputs() {
        let (m, v) = prior(4);
        let rows = vec![vec![3.0; 4]; 5];
        let stats = LaplaceStats::from_xi_rows(rows.iter().map(|r| r.as_slice()), 4).unwrap();
        let g = laplace_gradient(&[2.0; 4], &stats, &m, &v).unwrap();
        assert!(g.iter().all(|x| (x - g[0]).abs() < 1e-12));
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mut rng = RngStream::new(5);
        let (m, v) = prior(4);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| 0.5 + 10.0 * rng.gen::<f64>()).collect()).collect();
            let stats = LaplaceStats::from_xi_rows(rows.iter().map(|r| r.as_slice()), 4).unwrap();
            let w: Vec<f64> = (0..4).map(|_| 0.5 + 8.0 * rng.gen::<f64>()).collect();
            let h = laplace_hessian(&w, &stats, &m, &v).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    let (ha, hb) = (1e-4 * w[a], 1e-4 * w[b]);
                    let f = |da: f64, db: f64| {
                        let mut x = w.clone();
                        x[a] += da;
                        x[b] += db;
                        laplace_objective(&x, &stats, &m, &v).unwrap()
                    };
                    let fd = (f(ha, hb) - f(ha, -hb) - f(-ha, hb) + f(-ha, -hb)) / (4.0 * ha * hb);
                    let rel = (fd - h[(a, b)]).abs() / h[(a, b)].abs().max(1e-2);
                    assert!(rel < 1e-3, "({a},{b}): fd {fd} analytic {}", h[(a, b)]);
                }
            }
        }
    }

    #[test]
    fn mode_ascent_never_decreases() {
        let mut rng = RngStream::new(6);
        let (m, v) = prior(5);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| 0.2 + 20.0 * rng.gen::<f64>()).collect()).collect();
            let stats = LaplaceStats::from_xi_rows(rows.iter().map(|r| r.as_slice()), 5).unwrap();
            let init: Vec<f64> = (0..5).map(|_| 0.1 + 20.0 * rng.gen::<f64>()).collect();
            let f0 = laplace_objective(&init, &stats, &m, &v).unwrap();
            let out = maximize_laplace(&init, &stats, &m, &v, &LaplaceOptions::default()).unwrap();
            assert!(out.objective >= f0);
            assert!(out.mode.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn gradient_and_newton_agree() {
        let mut rng = RngStream::new(7);
        let (m, v) = prior(4);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| 0.5 + 5.0 * rng.gen::<f64>()).collect()).collect();
        let stats = LaplaceStats::from_xi_rows(rows.iter().map(|r| r.as_slice()), 4).unwrap();
        let newton = maximize_laplace(&[3.0; 4], &stats, &m, &v, &LaplaceOptions::default()).unwrap();
        let plain = LaplaceOptions { newton: false, max_steps: 100_000, grad_tol: 1e-5, ..Default::default() };
        let grad = maximize_laplace(&[3.0; 4], &stats, &m, &v, &plain).unwrap();
        assert!(newton.converged && grad.converged, "{newton:?} {grad:?}");
        assert!(newton.steps < grad.steps);
        for (a, b) in newton.mode.iter().zip(&grad.mode) {
            assert!((a - b).abs() < 1e-4 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn concentrated_evidence_raises_the_column() {
        let (m, v) = prior(3);
        let rows = vec![vec![1e-3, 1e-3, 200.0]; 20];
        let stats = LaplaceStats::from_xi_rows(rows.iter().map(|r| r.as_slice()), 3).unwrap();
        let opts = LaplaceOptions { max_steps: 2000, ..Default::default() };
        let with = maximize_laplace(&[3.0; 3], &stats, &m, &v, &opts).unwrap();
        let without = maximize_laplace(&[3.0; 3], &LaplaceStats::empty(3), &m, &v, &opts).unwrap();
        assert!(with.mode[2] > without.mode[2]);
    }

    #[test]
    fn zero_steps_leave_init() {
        let (m, v) = prior(3);
        let opts = LaplaceOptions { max_steps: 0, ..Default::default() };
        let out = maximize_laplace(&[4.0, 5.0, 6.0], &LaplaceStats::empty(3), &m, &v, &opts).unwrap();
        assert_eq!(out.mode, vec![4.0, 5.0, 6.0]);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn covariance_prior_only() {
        let (m, v) = prior(4);
        let mode = vec![1.3f64.exp(); 4];
        let (cov, pd) = laplace_covariance(&mode, &LaplaceStats::empty(4), &m, &v).unwrap();
        assert!(pd);
        assert!((&cov - cov.transpose()).abs().max() < 1e-12);

        let v4 = SpdMatrix::scaled_identity(4, 2.8).unwrap();
        let mode4: Vec<f64> = vec![(2.0f64 - 2.8).exp(); 4];
        let (cov4, pd4) = laplace_covariance(&mode4, &LaplaceStats::empty(4), &m, &v4).unwrap();
        assert!(pd4);
        // At a stationary point the x = ln w covariance is cov_w / (w wᵀ).
        let log_trace = |c: &DMatrix<f64>, w: &[f64]| (0..4).map(|i| c[(i, i)] / (w[i] * w[i])).sum::<f64>();
        let (a, b) = (log_trace(&cov, &mode), log_trace(&cov4, &mode4));
        assert!((a - 4.0 * 0.7).abs() < 1e-9 && (b - 4.0 * 2.8).abs() < 1e-9);
        assert!(b > a);
    }
}
