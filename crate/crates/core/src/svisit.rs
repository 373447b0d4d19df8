//! Three-level stochastic variational inference.
//!
//! Each iteration samples a batch of agents and, for every sampled agent, a
//! batch of partners. Pair factors, ψ and ξ of sampled agents get their exact
//! coordinate updates; γ, λ and ν move toward noisy full-data targets with
//! step size ρ = (i + τ)^(−κ); μ takes a few warm-started ascent steps on a
//! rescaled Laplace objective.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Hyperparameters, ObservationSet, SocialGraph, VariationalState, POSITIVITY_FLOOR};
use crate::rng::RngStream;
use crate::special::log_normalize_in_place;
use crate::visit::laplace::{maximize_laplace, LaplaceOptions, LaplaceOutcome, LaplaceStats};
use crate::visit::updates::{self, init_state, Expectations};
use crate::visit::{max_abs_diff, store_mu, IterationRecord, Trace};

const SAMPLING_STREAM: u64 = 0x5356_4953_4954;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub tau: f64,
    pub kappa: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { tau: 1.0, kappa: 0.7 }
    }
}

impl StepSchedule {
    pub fn new(tau: f64, kappa: f64) -> Result<Self> {
        let s = Self { tau, kappa };
        s.validate()?;
        Ok(s)
    }

    /// κ ∈ (0.5, 1] keeps Σρ divergent and Σρ² finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::Invalid(format!("tau must be finite and non-negative, got {}", self.tau)));
        }
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::Invalid(format!("kappa must lie in (0.5, 1], got {}", self.kappa)));
        }
        Ok(())
    }
}

/// ρ(i) = (i + τ)^(−κ) for iterations i ≥ 1.
pub fn step_size(i: usize, schedule: &StepSchedule) -> Result<f64> {
    if i == 0 {
        return Err(Error::Invalid("iterations are counted from 1".into()));
    }
    schedule.validate()?;
    Ok((i as f64 + schedule.tau).powf(-schedule.kappa))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvisitOptions {
    /// |S_n|; `None` means ⌈N/8⌉.
    pub agent_batch: Option<usize>,
    /// |S_p| per sampled agent; `None` means ⌈N/8⌉.
    pub pair_batch: Option<usize>,
    pub schedule: StepSchedule,
    pub max_iters: usize,
    /// Threshold on the exponentially smoothed max |Δν|.
    pub tol: f64,
    /// Threshold on the smoothed max |Δγ| / max γ, as in batch VISIT.
    pub gamma_tol: f64,
    pub smoothing: f64,
    pub inner_mu_steps: usize,
    /// Rescale by (N − 1)/|S_p| and N_l/|S_n ∩ observers(l)| instead of
    /// N/|S_p| and N/|S_n|.
    pub unbiased_pair_scaling: bool,
    pub laplace: LaplaceOptions,
    pub seed: u64,
}

impl Default for SvisitOptions {
    fn default() -> Self {
        Self {
            agent_batch: None,
            pair_batch: None,
            schedule: StepSchedule::default(),
            max_iters: 1000,
            tol: 1e-4,
            gamma_tol: 1e-4,
            smoothing: 0.9,
            inner_mu_steps: 10,
            unbiased_pair_scaling: false,
            laplace: LaplaceOptions::default(),
            seed: 0,
        }
    }
}

impl SvisitOptions {
    fn batch_sizes(&self, n_agents: usize) -> Result<(usize, usize)> {
        let default = n_agents.div_ceil(8).max(1);
        let agents = self.agent_batch.unwrap_or(default);
        let pairs = self.pair_batch.unwrap_or(default).min(n_agents.saturating_sub(1));
        if agents == 0 || agents > n_agents {
            return Err(Error::Invalid(format!("agent batch {agents} must lie in [1, {n_agents}]")));
        }
        if let Some(p) = self.pair_batch {
            if p == 0 || p > n_agents.saturating_sub(1) {
                return Err(Error::Invalid(format!("pair batch {p} must lie in [1, {}]", n_agents.saturating_sub(1))));
            }
        }
        if !(self.smoothing >= 0.0 && self.smoothing < 1.0) {
            return Err(Error::Invalid(format!("smoothing must lie in [0, 1), got {}", self.smoothing)));
        }
        Ok((agents, pairs))
    }
}

/// Agents and partners drawn for one iteration, both sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub agents: Vec<usize>,
    /// partners[j] belongs to agents[j].
    pub partners: Vec<Vec<usize>>,
}

impl Batch {
    pub fn full(n_agents: usize) -> Self {
        Self {
            agents: (0..n_agents).collect(),
            partners: (0..n_agents).map(|n| (0..n_agents).filter(|&m| m != n).collect()).collect(),
        }
    }

    pub fn sample(n_agents: usize, agent_batch: usize, pair_batch: usize, rng: &mut RngStream) -> Self {
        let mut agents = sample_indices(rng, n_agents, agent_batch).into_vec();
        agents.sort_unstable();
        let partners = agents.iter().map(|&n| sample_partners(n, n_agents, pair_batch, rng)).collect();
        Self { agents, partners }
    }
}

/// `count` distinct partners of `n`, sorted, drawn without replacement.
pub fn sample_partners(n: usize, n_agents: usize, count: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut p: Vec<usize> = sample_indices(rng, n_agents - 1, count)
        .into_iter()
        .map(|j| if j >= n { j + 1 } else { j })
        .collect();
    p.sort_unstable();
    p
}

/// Rescaling factors for one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    pub n_agents: usize,
    pub agent_batch: usize,
    pub unbiased: bool,
}

impl Scaling {
    /// Factor on a partner sum of size `pairs`.
    pub fn pair(&self, pairs: usize) -> f64 {
        if pairs == 0 {
            return 0.0;
        }
        let population = if self.unbiased { self.n_agents - 1 } else { self.n_agents };
        population as f64 / pairs as f64
    }

    pub fn agent(&self) -> f64 {
        self.n_agents as f64 / self.agent_batch as f64
    }
}

/// ĝ = α/K_s + c·Σ_{m∈S_p} φ_{n→m} + Σ_l ψ_n^l with c from `scaling`.
pub fn gamma_target(
    n: usize,
    partners: &[usize],
    obs: &ObservationSet,
    state: &VariationalState,
    hyper: &Hyperparameters,
    scaling: &Scaling,
) -> Vec<f64> {
    let ks = state.ks;
    let c = scaling.pair(partners.len());
    let mut out = vec![hyper.alpha / ks as f64; ks];
    for &m in partners {
        for (o, p) in out.iter_mut().zip(state.phi(n, m)) {
            *o += c * p;
        }
    }
    for &i in obs.agent_reports(n) {
        for (o, p) in out.iter_mut().zip(state.psi(i)) {
            *o += p;
        }
    }
    out
}

/// γ_n ← (1 − ρ)γ_n + ρĝ.
pub fn svisit_update_gamma(
    n: usize,
    partners: &[usize],
    obs: &ObservationSet,
    state: &VariationalState,
    hyper: &Hyperparameters,
    rho: f64,
    scaling: &Scaling,
) -> Vec<f64> {
    let target = gamma_target(n, partners, obs, state, hyper, scaling);
    state
        .gamma(n)
        .iter()
        .zip(&target)
        .map(|(g, t)| ((1.0 - rho) * g + rho * t).max(POSITIVITY_FLOOR))
        .collect()
}

/// λ_k ← (1 − ρ)λ_k + ρ(g₀ + ĉ Σ D φφ, h₀ + ĉ Σ (1 − D) φφ) over the
/// sampled ordered pairs.
pub fn svisit_update_lambda(
    batch: &Batch,
    state: &VariationalState,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    rho: f64,
    scaling: &Scaling,
) -> Vec<[f64; 2]> {
    let ks = state.ks;
    let mut stats = vec![[0.0; 2]; ks];
    for (&n, partners) in batch.agents.iter().zip(&batch.partners) {
        let c = scaling.agent() * scaling.pair(partners.len());
        for &m in partners {
            let slot = usize::from(!graph.connected(n, m));
            let (a, b) = (state.phi(n, m), state.phi(m, n));
            for k in 0..ks {
                stats[k][slot] += c * a[k] * b[k];
            }
        }
    }
    state
        .lambda
        .iter()
        .zip(stats)
        .map(|(old, [g, h])| {
            [
                ((1.0 - rho) * old[0] + rho * (hyper.g0 + g)).max(POSITIVITY_FLOOR),
                ((1.0 - rho) * old[1] + rho * (hyper.h0 + h)).max(POSITIVITY_FLOOR),
            ]
        })
        .collect()
}

/// ν^l ← (1 − ρ)ν^l + ρν̂^l, where ν̂ uses only sampled observers of `l` and
/// is uniform when there are none.
pub fn svisit_update_nu(
    l: usize,
    in_batch: &[bool],
    obs: &ObservationSet,
    state: &VariationalState,
    exp: &Expectations,
    rho: f64,
    scaling: &Scaling,
) -> Vec<f64> {
    let r = state.r;
    let sampled: Vec<usize> = obs
        .event_reports(l)
        .iter()
        .copied()
        .filter(|&i| in_batch[obs.reports()[i].agent])
        .collect();
    let mut target = vec![0.0; r];
    if sampled.is_empty() {
        target.fill(1.0 / r as f64);
    } else {
        let c = if scaling.unbiased {
            obs.event_reports(l).len() as f64 / sampled.len() as f64
        } else {
            scaling.agent()
        };
        for &i in &sampled {
            updates::add_report_to_nu_logits(i, obs, state, exp, &mut target, c);
        }
        log_normalize_in_place(&mut target).expect("finite logits");
    }
    state.nu(l).iter().zip(&target).map(|(v, t)| (1.0 - rho) * v + rho * t).collect()
}

/// A few warm-started ascent steps on the Laplace objective whose agent sum
/// runs over the batch and is scaled by N/|S_n|.
#[allow(clippy::too_many_arguments)]
pub fn svisit_update_mu(
    k: usize,
    row: usize,
    agents: &[usize],
    state: &VariationalState,
    exp: &Expectations,
    hyper: &Hyperparameters,
    scaling: &Scaling,
    opts: &LaplaceOptions,
) -> Result<LaplaceOutcome> {
    let mut stats = LaplaceStats::empty(state.r);
    for &n in agents {
        stats.add_elog(exp.omega_row(n, k, row), 1.0);
    }
    let stats = if agents.is_empty() { stats } else { stats.scaled(scaling.agent()) };
    maximize_laplace(state.mu_row(k, row), &stats, &hyper.m, &hyper.v, opts)
}

/// One stochastic iteration on `batch` with step size `rho`.
#[allow(clippy::too_many_arguments)]
pub fn svisit_iteration(
    state: &mut VariationalState,
    batch: &Batch,
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    rho: f64,
    opts: &SvisitOptions,
) -> Result<IterationRecord> {
    let n_agents = state.n_agents;
    let scaling = Scaling {
        n_agents,
        agent_batch: batch.agents.len().max(1),
        unbiased: opts.unbiased_pair_scaling,
    };
    let old_nu = state.nu.clone();
    let old_gamma = state.gamma.clone();

    let mut exp = Expectations::new(state, hyper);
    let mut scratch = vec![0.0; state.ks];
    for (&n, partners) in batch.agents.iter().zip(&batch.partners) {
        for &m in partners {
            let d = graph.connected(n, m);
            updates::phi_direction(state, &exp, n, m, d, &mut scratch);
            updates::phi_direction(state, &exp, m, n, d, &mut scratch);
        }
        updates::psi_agent(state, &exp, obs, n);
        let gamma = svisit_update_gamma(n, partners, obs, state, hyper, rho, &scaling);
        state.gamma_mut(n).copy_from_slice(&gamma);
        updates::store_xi(state, obs, n);
        exp.refresh_agent(state, n);
    }

    state.lambda = svisit_update_lambda(batch, state, graph, hyper, rho, &scaling);
    exp.refresh_links(state, hyper);

    let mut in_batch = vec![false; n_agents];
    batch.agents.iter().for_each(|&n| in_batch[n] = true);
    for l in 0..state.n_events {
        let row = svisit_update_nu(l, &in_batch, obs, state, &exp, rho, &scaling);
        state.nu_mut(l).copy_from_slice(&row);
    }

    let inner = LaplaceOptions { max_steps: opts.inner_mu_steps, ..opts.laplace.clone() };
    let rows: Vec<(usize, usize)> = (0..state.ks).flat_map(|k| (0..state.r).map(move |r| (k, r))).collect();
    let outcomes: Vec<Result<LaplaceOutcome>> = rows
        .iter()
        .map(|&(k, r)| svisit_update_mu(k, r, &batch.agents, state, &exp, hyper, &scaling, &inner))
        .collect();
    let (laplace_steps, laplace_stalls) = store_mu(state, &rows, outcomes)?;

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

/// Initializes exactly as batch VISIT with the same seed, then iterates.
pub fn run_svisit(
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    opts: &SvisitOptions,
) -> Result<(VariationalState, Trace)> {
    let mut rng = RngStream::new(opts.seed);
    let state = init_state(obs, graph, hyper, &mut rng)?;
    run_svisit_from(state, obs, graph, hyper, opts)
}

pub fn run_svisit_from(
    mut state: VariationalState,
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    opts: &SvisitOptions,
) -> Result<(VariationalState, Trace)> {
    updates::check_dimensions(obs, graph, hyper)?;
    opts.schedule.validate()?;
    let (agent_batch, pair_batch) = opts.batch_sizes(obs.n_agents())?;
    let mut rng = RngStream::new(opts.seed).split(SAMPLING_STREAM);
    let mut trace = Trace::default();
    let mut smooth_nu: Option<f64> = None;
    let mut smooth_gamma: Option<f64> = None;
    for i in 1..=opts.max_iters.max(1) {
        let start = Instant::now();
        let rho = step_size(i, &opts.schedule)?;
        let batch = Batch::sample(obs.n_agents(), agent_batch, pair_batch, &mut rng);
        let mut record = svisit_iteration(&mut state, &batch, obs, graph, hyper, rho, opts)?;
        record.iteration = i;
        record.wall_seconds = start.elapsed().as_secs_f64();
        let a = opts.smoothing;
        let sn = smooth_nu.map_or(record.max_delta_nu, |s| a * s + (1.0 - a) * record.max_delta_nu);
        let sg = smooth_gamma.map_or(record.rel_delta_gamma, |s| a * s + (1.0 - a) * record.rel_delta_gamma);
        smooth_nu = Some(sn);
        smooth_gamma = Some(sg);
        log::debug!("svisit iter {i}: rho {rho:.4} smoothed |dnu| {sn:.3e}");
        trace.records.push(record);
        if sn < opts.tol && sg < opts.gamma_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((state, trace))
}
