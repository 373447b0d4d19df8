//! Batch Laplace variational inference.
//!
//! One iteration sweeps the agents in order, refreshing every pair factor
//! φ_{n→m}, φ_{m→n}, then ψ_n, γ_n and ξ_n; afterwards it refreshes the
//! global blocks λ, ν and μ. Iteration stops once no entry of ν moves by more
//! than `tol` and γ has settled to within `gamma_tol` relative change.

pub mod laplace;
pub mod updates;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Hyperparameters, ObservationSet, SocialGraph, VariationalState, POSITIVITY_FLOOR};
use crate::rng::RngStream;
use crate::special::log_normalize_in_place;

pub use laplace::{
    laplace_covariance, laplace_gradient, laplace_hessian, laplace_objective, maximize_laplace, LaplaceOptions,
    LaplaceOutcome, LaplaceStats,
};
pub use updates::{
    estimate_states, init_state, update_gamma, update_lambda, update_nu, update_phi_pair, update_psi, update_xi,
    Expectations,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitOptions {
    pub max_iters: usize,
    /// Convergence threshold on max |Δν|.
    pub tol: f64,
    /// Convergence threshold on max |Δγ| / max γ. ν can sit still for
    /// dozens of iterations while communities are still separating, so the
    /// ν rule alone stops too early. `f64::INFINITY` disables this check.
    pub gamma_tol: f64,
    pub laplace: LaplaceOptions,
    /// Run the per-agent blocks in parallel against an iteration-start
    /// snapshot (Jacobi order) instead of sequentially.
    pub parallel_sweep: bool,
    pub seed: u64,
}

impl Default for VisitOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-4,
            gamma_tol: 1e-4,
            laplace: LaplaceOptions::default(),
            parallel_sweep: false,
            seed: 0,
        }
    }
}

/// Diagnostics for one outer iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub max_delta_nu: f64,
    pub max_delta_gamma: f64,
    /// max |Δγ| divided by the largest γ entry after the update.
    pub rel_delta_gamma: f64,
    /// Accepted Laplace line-search steps summed over all μ rows.
    pub laplace_steps: usize,
    /// μ rows whose line search stalled.
    pub laplace_stalls: usize,
    /// Wall-clock time of the iteration. Ignored by equality.
    pub wall_seconds: f64,
}

impl PartialEq for IterationRecord {
    fn eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.max_delta_nu.to_bits() == other.max_delta_nu.to_bits()
            && self.max_delta_gamma.to_bits() == other.max_delta_gamma.to_bits()
            && self.rel_delta_gamma.to_bits() == other.rel_delta_gamma.to_bits()
            && self.laplace_steps == other.laplace_steps
            && self.laplace_stalls == other.laplace_stalls
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn wall_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.wall_seconds).sum()
    }
}

/// Initializes from `opts.seed` and iterates to convergence.
pub fn run_visit(
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    opts: &VisitOptions,
) -> Result<(VariationalState, Trace)> {
    let mut rng = RngStream::new(opts.seed);
    let state = init_state(obs, graph, hyper, &mut rng)?;
    run_visit_from(state, obs, graph, hyper, opts)
}

/// Iterates from a caller-supplied state.
pub fn run_visit_from(
    mut state: VariationalState,
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    opts: &VisitOptions,
) -> Result<(VariationalState, Trace)> {
    updates::check_dimensions(obs, graph, hyper)?;
    let mut trace = Trace::default();
    for _ in 0..opts.max_iters.max(1) {
        let start = Instant::now();
        let mut record = visit_iteration(&mut state, obs, graph, hyper, opts)?;
        record.iteration = trace.records.len() + 1;
        record.wall_seconds = start.elapsed().as_secs_f64();
        let done = record.max_delta_nu < opts.tol && record.rel_delta_gamma < opts.gamma_tol;
        log::debug!(
            "visit iter {}: |dnu| {:.3e} |dgamma| {:.3e}",
            record.iteration,
            record.max_delta_nu,
            record.max_delta_gamma
        );
        trace.records.push(record);
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok((state, trace))
}

/// One full coordinate-ascent sweep.
pub fn visit_iteration(
    state: &mut VariationalState,
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    opts: &VisitOptions,
) -> Result<IterationRecord> {
    let old_nu = state.nu.clone();
    let old_gamma = state.gamma.clone();

    let mut exp = Expectations::new(state, hyper);
    if opts.parallel_sweep {
        parallel_agent_sweep(state, &exp, obs, graph, hyper);
        for n in 0..state.n_agents {
            exp.refresh_agent(state, n);
        }
    } else {
        let mut scratch = vec![0.0; state.ks];
        for n in 0..state.n_agents {
            for m in 0..state.n_agents {
                if m == n {
                    continue;
                }
                let d = graph.connected(n, m);
                updates::phi_direction(state, &exp, n, m, d, &mut scratch);
                updates::phi_direction(state, &exp, m, n, d, &mut scratch);
            }
            agent_local_updates(state, &mut exp, obs, hyper, n);
        }
    }

    state.lambda = update_lambda(state, graph, hyper);
    exp.refresh_links(state, hyper);

    refresh_all_nu(state, &exp, obs);

    let (laplace_steps, laplace_stalls) = refresh_all_mu(state, &exp, hyper, &opts.laplace, opts.parallel_sweep)?;

    let max_delta_gamma = max_abs_diff(&old_gamma, &state.gamma);
    let gamma_scale = state.gamma.iter().fold(0.0f64, |a, &g| a.max(g));
    Ok(IterationRecord {
        iteration: 0,
        max_delta_nu: max_abs_diff(&old_nu, &state.nu),
        max_delta_gamma,
        rel_delta_gamma: if gamma_scale > 0.0 { max_delta_gamma / gamma_scale } else { 0.0 },
        laplace_steps,
        laplace_stalls,
        wall_seconds: 0.0,
    })
}

/// ψ_n, γ_n and ξ_n for one agent, keeping the expectation cache current.
pub(crate) fn agent_local_updates(
    state: &mut VariationalState,
    exp: &mut Expectations,
    obs: &ObservationSet,
    hyper: &Hyperparameters,
    n: usize,
) {
    updates::psi_agent(state, exp, obs, n);
    let gamma = update_gamma(n, obs, state, hyper);
    state.gamma_mut(n).copy_from_slice(&gamma);
    updates::store_xi(state, obs, n);
    exp.refresh_agent(state, n);
}

struct AgentBlock {
    phi_row: Vec<f64>,
    psi: Vec<(usize, Vec<f64>)>,
    gamma: Vec<f64>,
    xi: Vec<f64>,
}

fn parallel_agent_sweep(
    state: &mut VariationalState,
    exp: &Expectations,
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
) {
    let snapshot: &VariationalState = state;
    let blocks: Vec<AgentBlock> = (0..snapshot.n_agents)
        .into_par_iter()
        .map(|n| {
            let mut local = snapshot.clone_agent_view(n);
            let mut scratch = vec![0.0; snapshot.ks];
            for m in 0..snapshot.n_agents {
                if m != n {
                    updates::phi_direction(&mut local, exp, n, m, graph.connected(n, m), &mut scratch);
                }
            }
            updates::psi_agent(&mut local, exp, obs, n);
            let gamma = update_gamma(n, obs, &local, hyper);
            let xi = update_xi(n, obs, &local);
            AgentBlock {
                phi_row: local.phi_block(n).to_vec(),
                psi: obs.agent_reports(n).iter().map(|&i| (i, local.psi(i).to_vec())).collect(),
                gamma,
                xi,
            }
        })
        .collect();
    let ks = state.ks;
    let w_phi = state.n_agents * ks;
    let w_xi = ks * state.r * state.r;
    for (n, block) in blocks.into_iter().enumerate() {
        state.phi[n * w_phi..(n + 1) * w_phi].copy_from_slice(&block.phi_row);
        for (i, row) in block.psi {
            state.psi_mut(i).copy_from_slice(&row);
        }
        state.gamma_mut(n).copy_from_slice(&block.gamma);
        state.xi[n * w_xi..(n + 1) * w_xi].copy_from_slice(&block.xi);
    }
}

impl VariationalState {
    /// Copy used by a parallel agent block; it is only ever written in the
    /// rows that belong to that agent.
    fn clone_agent_view(&self, _n: usize) -> VariationalState {
        self.clone()
    }
}

fn refresh_all_nu(state: &mut VariationalState, exp: &Expectations, obs: &ObservationSet) {
    let r = state.r;
    let mut logits = vec![0.0; r];
    for l in 0..state.n_events {
        updates::nu_logits(l, obs, state, exp, &mut logits);
        log_normalize_in_place(&mut logits).expect("finite logits");
        state.nu_mut(l).copy_from_slice(&logits);
    }
}

/// Laplace evidence for row (k, r) from every agent's ξ_{n,k}(r, ·).
pub(crate) fn mu_stats(state: &VariationalState, exp: &Expectations, k: usize, row: usize) -> LaplaceStats {
    let mut stats = LaplaceStats::empty(state.r);
    for n in 0..state.n_agents {
        stats.add_elog(exp.omega_row(n, k, row), 1.0);
    }
    stats
}

/// Re-fits μ_k(r, ·) by maximizing the Laplace objective from its current
/// value.
pub fn update_mu(
    k: usize,
    row: usize,
    state: &VariationalState,
    hyper: &Hyperparameters,
    opts: &LaplaceOptions,
) -> Result<LaplaceOutcome> {
    let stats = LaplaceStats::from_xi_rows((0..state.n_agents).map(|n| &state.xi(n, k)[row * state.r..(row + 1) * state.r]), state.r)?;
    maximize_laplace(state.mu_row(k, row), &stats, &hyper.m, &hyper.v, opts)
}

fn refresh_all_mu(
    state: &mut VariationalState,
    exp: &Expectations,
    hyper: &Hyperparameters,
    opts: &LaplaceOptions,
    parallel: bool,
) -> Result<(usize, usize)> {
    let rows: Vec<(usize, usize)> = (0..state.ks).flat_map(|k| (0..state.r).map(move |r| (k, r))).collect();
    let solve = |&(k, r): &(usize, usize)| {
        let stats = mu_stats(state, exp, k, r);
        maximize_laplace(state.mu_row(k, r), &stats, &hyper.m, &hyper.v, opts)
    };
    let outcomes: Vec<Result<LaplaceOutcome>> = if parallel {
        rows.par_iter().map(solve).collect()
    } else {
        rows.iter().map(solve).collect()
    };
    store_mu(state, &rows, outcomes)
}

pub(crate) fn store_mu(
    state: &mut VariationalState,
    rows: &[(usize, usize)],
    outcomes: Vec<Result<LaplaceOutcome>>,
) -> Result<(usize, usize)> {
    let mut steps = 0;
    let mut stalls = 0;
    for (&(k, r), out) in rows.iter().zip(outcomes) {
        let out = out?;
        steps += out.steps;
        if out.stalled {
            stalls += 1;
            log::warn!("Laplace line search stalled for community {k}, row {r}");
        }
        for (dst, src) in state.mu_row_mut(k, r).iter_mut().zip(&out.mode) {
            *dst = src.max(POSITIVITY_FLOOR);
        }
    }
    Ok((steps, stalls))
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}
