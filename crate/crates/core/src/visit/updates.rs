//! Coordinate-ascent updates for each variational parameter block.
//!
//! Public functions recompute the expectations they need from the state and
//! are convenient for tests and one-off use. The solver loops go through
//! [`Expectations`], which caches E ln π, E ln β and E ln ω and is refreshed
//! block by block as the sweep advances.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{
    dirichlet_expected_log_into, expected_log_beta, Hyperparameters, ObservationSet, SocialGraph,
    VariationalState, POSITIVITY_FLOOR,
};
use crate::sampling::sample_dirichlet;
use crate::special::{argmax, log_normalize_in_place};

/// Cached expectations under the current variational factors.
#[derive(Clone, Debug)]
pub struct Expectations {
    ks: usize,
    r: usize,
    /// E ln π_{n,k}, N × K_s.
    pub elog_pi: Vec<f64>,
    /// (E ln β_k − ln ε, E ln(1 − β_k) − ln(1 − ε)) per k.
    pub link_terms: Vec<[f64; 2]>,
    /// E ln ω_{n,k}(r, r′), N × K_s × R × R.
    pub elog_omega: Vec<f64>,
}

impl Expectations {
    pub fn new(state: &VariationalState, hyper: &Hyperparameters) -> Self {
        let mut e = Self {
            ks: state.ks,
            r: state.r,
            elog_pi: vec![0.0; state.gamma.len()],
            link_terms: vec![[0.0; 2]; state.ks],
            elog_omega: vec![0.0; state.xi.len()],
        };
        e.refresh_links(state, hyper);
        for n in 0..state.n_agents {
            e.refresh_agent(state, n);
        }
        e
    }

    pub fn refresh_links(&mut self, state: &VariationalState, hyper: &Hyperparameters) {
        let ln_eps = hyper.epsilon.ln();
        let ln_1m_eps = (1.0 - hyper.epsilon).ln();
        for (k, slot) in self.link_terms.iter_mut().enumerate() {
            let (a, b) = expected_log_beta(state.lambda[k]).expect("lambda kept above the floor");
            *slot = [a - ln_eps, b - ln_1m_eps];
        }
    }

    pub fn refresh_pi(&mut self, state: &VariationalState, n: usize) {
        let ks = self.ks;
        dirichlet_expected_log_into(state.gamma(n), &mut self.elog_pi[n * ks..(n + 1) * ks]);
    }

    pub fn refresh_omega(&mut self, state: &VariationalState, n: usize) {
        let w = self.ks * self.r * self.r;
        let dst = &mut self.elog_omega[n * w..(n + 1) * w];
        for (src, out) in state.xi_block(n).chunks(self.r).zip(dst.chunks_mut(self.r)) {
            dirichlet_expected_log_into(src, out);
        }
    }

    pub fn refresh_agent(&mut self, state: &VariationalState, n: usize) {
        self.refresh_pi(state, n);
        self.refresh_omega(state, n);
    }

    #[inline]
    pub fn pi(&self, n: usize) -> &[f64] {
        &self.elog_pi[n * self.ks..(n + 1) * self.ks]
    }

    /// E ln ω_{n,k}(r, y).
    #[inline]
    pub fn omega(&self, n: usize, k: usize, r: usize, y: usize) -> f64 {
        self.elog_omega[((n * self.ks + k) * self.r + r) * self.r + y]
    }

    /// E ln ω_{n,k}(r, ·).
    #[inline]
    pub fn omega_row(&self, n: usize, k: usize, r: usize) -> &[f64] {
        let o = ((n * self.ks + k) * self.r + r) * self.r;
        &self.elog_omega[o..o + self.r]
    }
}

/// Initial state: vote-count ν, uniform-share γ, Dir(1) draws for φ and ψ,
/// prior λ and the log-normal prior mean for μ and ξ.
pub fn init_state<R: Rng + ?Sized>(
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<VariationalState> {
    check_dimensions(obs, graph, hyper)?;
    let n_agents = obs.n_agents();
    let ks = hyper.ks;
    let r = hyper.r;
    let mut state = VariationalState::zeros(n_agents, obs.n_events(), obs.len(), ks, r);

    for l in 0..obs.n_events() {
        let row = state.nu_mut(l);
        row.fill(1.0);
        for &i in obs.event_reports(l) {
            row[obs.reports()[i].label] += 1.0;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }

    for n in 0..n_agents {
        let share = (n_agents - 1 + obs.agent_reports(n).len()) as f64 / ks as f64;
        state.gamma_mut(n).fill(hyper.alpha / ks as f64 + share);
    }

    let ones = vec![1.0; ks];
    for n in 0..n_agents {
        for m in 0..n_agents {
            if n != m {
                let draw = sample_dirichlet(&ones, rng)?;
                state.phi_mut(n, m).copy_from_slice(&draw);
            }
        }
    }
    for i in 0..obs.len() {
        let draw = sample_dirichlet(&ones, rng)?;
        state.psi_mut(i).copy_from_slice(&draw);
    }

    state.lambda.fill([hyper.g0, hyper.h0]);

    let prior_mean: Vec<f64> = (0..r).map(|c| (hyper.m[c] + hyper.v.get(c, c) / 2.0).exp()).collect();
    for k in 0..ks {
        for row in 0..r {
            state.mu_row_mut(k, row).copy_from_slice(&prior_mean);
        }
    }
    for n in 0..n_agents {
        for k in 0..ks {
            let mu = state.mu(k).to_vec();
            state.xi_mut(n, k).copy_from_slice(&mu);
        }
    }
    Ok(state)
}

pub(crate) fn check_dimensions(obs: &ObservationSet, graph: &SocialGraph, hyper: &Hyperparameters) -> Result<()> {
    hyper.validate()?;
    if graph.n_agents() != obs.n_agents() {
        return Err(Error::Dimension(format!(
            "graph has {} agents, observations have {}",
            graph.n_agents(),
            obs.n_agents()
        )));
    }
    if hyper.r != obs.n_states() {
        return Err(Error::Dimension(format!(
            "hyperparameters have R = {}, observations have R = {}",
            hyper.r,
            obs.n_states()
        )));
    }
    Ok(())
}

/// Writes the categorical parameters of q(z_{from→to}) given the current
/// φ_{to→from}. `scratch` must hold K_s values.
#[inline]
pub(crate) fn phi_direction(
    state: &mut VariationalState,
    exp: &Expectations,
    from: usize,
    to: usize,
    connected: bool,
    scratch: &mut [f64],
) {
    let branch = usize::from(!connected);
    let reverse = state.phi(to, from);
    let pi = exp.pi(from);
    for (k, slot) in scratch.iter_mut().enumerate() {
        *slot = reverse[k] * exp.link_terms[k][branch] + pi[k];
    }
    log_normalize_in_place(scratch).expect("finite logits");
    state.phi_mut(from, to).copy_from_slice(scratch);
}

/// Updates φ_{n→m}, then φ_{m→n} using the fresh φ_{n→m}.
pub fn update_phi_pair(
    n: usize,
    m: usize,
    connected: bool,
    state: &mut VariationalState,
    hyper: &Hyperparameters,
) -> Result<()> {
    if n == m || n >= state.n_agents || m >= state.n_agents {
        return Err(Error::Invalid(format!("({n}, {m}) is not an ordered pair of distinct agents")));
    }
    let mut exp = Expectations {
        ks: state.ks,
        r: state.r,
        elog_pi: vec![0.0; state.gamma.len()],
        link_terms: vec![[0.0; 2]; state.ks],
        elog_omega: Vec::new(),
    };
    exp.refresh_links(state, hyper);
    exp.refresh_pi(state, n);
    exp.refresh_pi(state, m);
    let mut scratch = vec![0.0; state.ks];
    phi_direction(state, &exp, n, m, connected, &mut scratch);
    phi_direction(state, &exp, m, n, connected, &mut scratch);
    Ok(())
}

/// Recomputes ψ for every report made by agent `n`.
pub(crate) fn psi_agent(state: &mut VariationalState, exp: &Expectations, obs: &ObservationSet, n: usize) {
    let ks = state.ks;
    let r = state.r;
    let mut logits = vec![0.0; ks];
    for &i in obs.agent_reports(n) {
        let rep = obs.reports()[i];
        let nu = state.nu(rep.event);
        let pi = exp.pi(n);
        for k in 0..ks {
            let mut acc = pi[k];
            for (row, &w) in nu.iter().enumerate().take(r) {
                acc += w * exp.omega(n, k, row, rep.label);
            }
            logits[k] = acc;
        }
        log_normalize_in_place(&mut logits).expect("finite logits");
        state.psi_mut(i).copy_from_slice(&logits);
    }
}

/// ψ for report `report` of `obs`.
pub fn update_psi(report: usize, obs: &ObservationSet, state: &VariationalState) -> Result<Vec<f64>> {
    let rep = *obs
        .reports()
        .get(report)
        .ok_or_else(|| Error::Invalid(format!("report index {report} out of range")))?;
    let n = rep.agent;
    let mut pi = vec![0.0; state.ks];
    check_positive(state.gamma(n), "gamma")?;
    dirichlet_expected_log_into(state.gamma(n), &mut pi);
    let mut logits = vec![0.0; state.ks];
    let mut elog = vec![0.0; state.r];
    for (k, logit) in logits.iter_mut().enumerate() {
        let xi = state.xi(n, k);
        check_positive(xi, "xi")?;
        *logit = pi[k];
        for (row, &w) in state.nu(rep.event).iter().enumerate() {
            dirichlet_expected_log_into(&xi[row * state.r..(row + 1) * state.r], &mut elog);
            *logit += w * elog[rep.label];
        }
    }
    log_normalize_in_place(&mut logits)?;
    Ok(logits)
}

fn check_positive(v: &[f64], name: &str) -> Result<()> {
    match v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        Some(bad) => Err(Error::Domain(format!("{name} entry {bad} is not positive"))),
        None => Ok(()),
    }
}

/// γ_n = α/K_s + Σ_{m≠n} φ_{n→m} + Σ_l ψ_n^l.
pub fn update_gamma(n: usize, obs: &ObservationSet, state: &VariationalState, hyper: &Hyperparameters) -> Vec<f64> {
    let ks = state.ks;
    let mut out = vec![hyper.alpha / ks as f64; ks];
    for m in 0..state.n_agents {
        if m != n {
            for (o, p) in out.iter_mut().zip(state.phi(n, m)) {
                *o += p;
            }
        }
    }
    for &i in obs.agent_reports(n) {
        for (o, p) in out.iter_mut().zip(state.psi(i)) {
            *o += p;
        }
    }
    out.iter_mut().for_each(|x| *x = x.max(POSITIVITY_FLOOR));
    out
}

/// ξ_{n,k}(r, r′) = μ_k(r, r′) + Σ_l I(y_n^l = r′) ψ_{n,k}^l ν^l(r), for all k.
pub fn update_xi(n: usize, obs: &ObservationSet, state: &VariationalState) -> Vec<f64> {
    let ks = state.ks;
    let r = state.r;
    let mut out = state.mu.clone();
    for &i in obs.agent_reports(n) {
        let rep = obs.reports()[i];
        let psi = state.psi(i);
        let nu = state.nu(rep.event);
        for k in 0..ks {
            let base = k * r * r;
            for (row, &w) in nu.iter().enumerate() {
                out[base + row * r + rep.label] += psi[k] * w;
            }
        }
    }
    out.iter_mut().for_each(|x| *x = x.max(POSITIVITY_FLOOR));
    out
}

/// Writes [`update_xi`] for agent `n` into the state.
pub(crate) fn store_xi(state: &mut VariationalState, obs: &ObservationSet, n: usize) {
    let block = update_xi(n, obs, state);
    let w = state.ks * state.r * state.r;
    state.xi[n * w..(n + 1) * w].copy_from_slice(&block);
}

/// Sufficient statistics of q(β): for each k, (Σ D φφ, Σ (1 − D) φφ) over
/// every ordered pair.
pub(crate) fn pair_statistics(state: &VariationalState, graph: &SocialGraph) -> Vec<[f64; 2]> {
    let ks = state.ks;
    let mut stats = vec![[0.0; 2]; ks];
    for n in 0..state.n_agents {
        for m in 0..state.n_agents {
            if n == m {
                continue;
            }
            let slot = usize::from(!graph.connected(n, m));
            let (a, b) = (state.phi(n, m), state.phi(m, n));
            for k in 0..ks {
                stats[k][slot] += a[k] * b[k];
            }
        }
    }
    stats
}

/// λ_k = (g₀ + Σ D φφ, h₀ + Σ (1 − D) φφ) over ordered pairs.
pub fn update_lambda(state: &VariationalState, graph: &SocialGraph, hyper: &Hyperparameters) -> Vec<[f64; 2]> {
    pair_statistics(state, graph)
        .into_iter()
        .map(|[g, h]| [(g + hyper.g0).max(POSITIVITY_FLOOR), (h + hyper.h0).max(POSITIVITY_FLOOR)])
        .collect()
}

/// Unnormalized log ν^l: Σ over the reports on `l` of Σ_k ψ E ln ω(r, y).
/// Only agents that reported on `l` contribute.
pub(crate) fn nu_logits(l: usize, obs: &ObservationSet, state: &VariationalState, exp: &Expectations, out: &mut [f64]) {
    out.fill(0.0);
    for &i in obs.event_reports(l) {
        add_report_to_nu_logits(i, obs, state, exp, out, 1.0);
    }
}

#[inline]
pub(crate) fn add_report_to_nu_logits(
    report: usize,
    obs: &ObservationSet,
    state: &VariationalState,
    exp: &Expectations,
    out: &mut [f64],
    weight: f64,
) {
    let rep = obs.reports()[report];
    let psi = state.psi(report);
    for (row, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &p) in psi.iter().enumerate() {
            acc += p * exp.omega(rep.agent, k, row, rep.label);
        }
        *o += weight * acc;
    }
}

/// ν^l from the current ψ and ξ.
pub fn update_nu(l: usize, obs: &ObservationSet, state: &VariationalState) -> Result<Vec<f64>> {
    if obs.event_reports(l).is_empty() {
        return Err(Error::EventWithoutReports(l));
    }
    let r = state.r;
    let mut out = vec![0.0; r];
    let mut elog = vec![0.0; r];
    for &i in obs.event_reports(l) {
        let rep = obs.reports()[i];
        let psi = state.psi(i);
        for (k, &p) in psi.iter().enumerate() {
            let xi = state.xi(rep.agent, k);
            check_positive(xi, "xi")?;
            for (row, o) in out.iter_mut().enumerate() {
                dirichlet_expected_log_into(&xi[row * r..(row + 1) * r], &mut elog);
                *o += p * elog[rep.label];
            }
        }
    }
    log_normalize_in_place(&mut out)?;
    Ok(out)
}

/// Point estimate of each event's state: argmax ν^l, ties to the lowest index.
pub fn estimate_states(nu: &[f64], r: usize) -> Vec<usize> {
    nu.chunks(r).map(argmax).collect()
}
