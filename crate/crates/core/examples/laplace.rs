//! The Laplace step for one community confusion-matrix row: prior-only mode,
//! then the mode pulled by concentrated evidence.

use commtruth::linalg::SpdMatrix;
use commtruth::visit::laplace::{laplace_covariance, maximize_laplace, LaplaceOptions, LaplaceStats};

fn main() -> commtruth::Result<()> {
    let r = 3;
    let m = vec![2.0; r];
    let v = SpdMatrix::scaled_identity(r, 0.7)?;
    let init = vec![2.35f64.exp(); r];
    let opts = LaplaceOptions::default();

    let prior = maximize_laplace(&init, &LaplaceStats::empty(r), &m, &v, &opts)?;
    println!("prior only: {:.4?} (exp(M - V 1) = {:.4})", prior.mode, 1.3f64.exp());

    // five agents whose rows put most mass on column 0
    let xi = [[40.0, 2.0, 2.0]; 5];
    let stats = LaplaceStats::from_xi_rows(xi.iter().map(|row| &row[..]), r)?;
    let out = maximize_laplace(&prior.mode, &stats, &m, &v, &opts)?;
    println!("with evidence: {:.4?} after {} steps", out.mode, out.steps);
    let (cov, ok) = laplace_covariance(&out.mode, &stats, &m, &v)?;
    println!("covariance diagonal {:.4?} (strict maximum: {ok})", cov.diagonal().as_slice());
    Ok(())
}
