//! Domain types of the community truth-discovery model.
//!
//! Agents, events, labels and communities are dense 0-based indices. External
//! identifiers are mapped at ingestion (see [`crate::io`]).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::special::digamma_unchecked;

/// Lower bound applied to every Dirichlet, Beta and Laplace-mode parameter
/// after each update.
pub const POSITIVITY_FLOOR: f64 = 1e-6;

/// Known hyperparameters of the generative model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Concentration of the weak-limit community-weight prior Dir(α/K_s, …).
    pub alpha: f64,
    pub g0: f64,
    pub h0: f64,
    /// Mean of the log-normal prior on each community confusion-matrix row.
    pub m: Vec<f64>,
    /// Covariance of the same prior.
    pub v: SpdMatrix,
    /// Cross-community link probability.
    pub epsilon: f64,
    /// Maximum number of communities.
    pub ks: usize,
    /// State arity.
    pub r: usize,
}

impl Hyperparameters {
    /// α = 0.1, g₀ = h₀ = 1, M = 2·1, V = 0.7·I, ε = 0.05, K_s = 10.
    pub fn standard(r: usize) -> Result<Self> {
        let h = Self {
            alpha: 0.1,
            g0: 1.0,
            h0: 1.0,
            m: vec![2.0; r],
            v: SpdMatrix::scaled_identity(r.max(1), 0.7)?,
            epsilon: 0.05,
            ks: 10,
            r,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64, name: &str| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be positive, got {x}")))
            }
        };
        positive(self.alpha, "alpha")?;
        positive(self.g0, "g0")?;
        positive(self.h0, "h0")?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Invalid(format!("epsilon must lie in (0,1), got {}", self.epsilon)));
        }
        if self.ks < 1 {
            return Err(Error::Invalid("ks must be at least 1".into()));
        }
        if self.r < 2 {
            return Err(Error::Invalid(format!("state arity must be at least 2, got {}", self.r)));
        }
        if self.m.len() != self.r || self.v.dim() != self.r {
            return Err(Error::Dimension(format!(
                "M has length {} and V is {}x{}, expected {}",
                self.m.len(),
                self.v.dim(),
                self.v.dim(),
                self.r
            )));
        }
        if self.m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("M has non-finite entries".into()));
        }
        Ok(())
    }
}

/// One categorical report `label` by `agent` on `event`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Report {
    pub agent: usize,
    pub event: usize,
    pub label: usize,
}

/// Sparse agent × event report matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    n_agents: usize,
    n_events: usize,
    n_states: usize,
    reports: Vec<Report>,
    by_agent: Vec<Vec<usize>>,
    by_event: Vec<Vec<usize>>,
}

impl ObservationSet {
    /// Validates and indexes `reports`. Reports are stored sorted by
    /// (agent, event); every event must carry at least one report.
    pub fn new(n_agents: usize, n_events: usize, n_states: usize, mut reports: Vec<Report>) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::Invalid(format!("state arity must be at least 2, got {n_states}")));
        }
        for rep in &reports {
            if rep.agent >= n_agents || rep.event >= n_events || rep.label >= n_states {
                return Err(Error::Invalid(format!(
                    "report (agent {}, event {}, label {}) out of range for {n_agents} agents, {n_events} events, {n_states} states",
                    rep.agent, rep.event, rep.label
                )));
            }
        }
        reports.sort_unstable();
        if let Some(w) = reports.windows(2).find(|w| w[0].agent == w[1].agent && w[0].event == w[1].event) {
            return Err(Error::Invalid(format!(
                "duplicate report for agent {} on event {}",
                w[0].agent, w[0].event
            )));
        }
        let mut by_agent = vec![Vec::new(); n_agents];
        let mut by_event = vec![Vec::new(); n_events];
        for (i, rep) in reports.iter().enumerate() {
            by_agent[rep.agent].push(i);
            by_event[rep.event].push(i);
        }
        if let Some(l) = by_event.iter().position(Vec::is_empty) {
            return Err(Error::EventWithoutReports(l));
        }
        Ok(Self {
            n_agents,
            n_events,
            n_states,
            reports,
            by_agent,
            by_event,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Indices into [`Self::reports`] of the reports made by `agent`.
    pub fn agent_reports(&self, agent: usize) -> &[usize] {
        &self.by_agent[agent]
    }

    /// Indices into [`Self::reports`] of the reports on `event`.
    pub fn event_reports(&self, event: usize) -> &[usize] {
        &self.by_event[event]
    }

    /// Index of the report by `agent` on `event`, if any.
    pub fn find(&self, agent: usize, event: usize) -> Option<usize> {
        let idx = &self.by_agent[agent];
        idx.binary_search_by_key(&event, |&i| self.reports[i].event)
            .ok()
            .map(|p| idx[p])
    }
}

/// Undirected, unweighted social graph without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialGraph {
    n_agents: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<bool>,
}

impl SocialGraph {
    /// Builds the graph from unordered pairs; duplicates and either
    /// orientation of the same edge collapse to one edge.
    pub fn new(n_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        let mut adjacency = vec![false; n_agents * n_agents];
        for (a, b) in edges {
            if a >= n_agents || b >= n_agents {
                return Err(Error::Invalid(format!("edge ({a}, {b}) out of range for {n_agents} agents")));
            }
            if a == b {
                return Err(Error::Invalid(format!("self-loop on agent {a}")));
            }
            let e = (a.min(b), a.max(b));
            set.insert(e);
            adjacency[a * n_agents + b] = true;
            adjacency[b * n_agents + a] = true;
        }
        Ok(Self {
            n_agents,
            edges: set,
            adjacency,
        })
    }

    pub fn empty(n_agents: usize) -> Self {
        Self::new(n_agents, std::iter::empty()).expect("empty graph is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// D(n, m).
    #[inline]
    pub fn connected(&self, n: usize, m: usize) -> bool {
        self.adjacency[n * self.n_agents + m]
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// All variational parameters, stored in flat row-major buffers.
///
/// `phi` is laid out over all N × N ordered pairs; diagonal slots are unused.
/// `psi` has one row per report, in [`ObservationSet::reports`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub n_agents: usize,
    pub n_events: usize,
    pub ks: usize,
    pub r: usize,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub gamma: Vec<f64>,
    pub nu: Vec<f64>,
    pub xi: Vec<f64>,
    /// (G_k, H_k) per community.
    pub lambda: Vec<[f64; 2]>,
    pub mu: Vec<f64>,
}

impl VariationalState {
    /// Allocates a state with every buffer zeroed.
    pub fn zeros(n_agents: usize, n_events: usize, n_reports: usize, ks: usize, r: usize) -> Self {
        Self {
            n_agents,
            n_events,
            ks,
            r,
            phi: vec![0.0; n_agents * n_agents * ks],
            psi: vec![0.0; n_reports * ks],
            gamma: vec![0.0; n_agents * ks],
            nu: vec![0.0; n_events * r],
            xi: vec![0.0; n_agents * ks * r * r],
            lambda: vec![[0.0, 0.0]; ks],
            mu: vec![0.0; ks * r * r],
        }
    }

    #[inline]
    fn phi_offset(&self, n: usize, m: usize) -> usize {
        (n * self.n_agents + m) * self.ks
    }

    /// q(z_{n→m}).
    #[inline]
    pub fn phi(&self, n: usize, m: usize) -> &[f64] {
        let o = self.phi_offset(n, m);
        &self.phi[o..o + self.ks]
    }

    #[inline]
    pub fn phi_mut(&mut self, n: usize, m: usize) -> &mut [f64] {
        let o = self.phi_offset(n, m);
        &mut self.phi[o..o + self.ks]
    }

    /// φ_{n→·} for all m, as one contiguous block of N·K_s values.
    pub fn phi_block(&self, n: usize) -> &[f64] {
        let w = self.n_agents * self.ks;
        &self.phi[n * w..(n + 1) * w]
    }

    #[inline]
    pub fn psi(&self, report: usize) -> &[f64] {
        &self.psi[report * self.ks..(report + 1) * self.ks]
    }

    #[inline]
    pub fn psi_mut(&mut self, report: usize) -> &mut [f64] {
        &mut self.psi[report * self.ks..(report + 1) * self.ks]
    }

    #[inline]
    pub fn gamma(&self, n: usize) -> &[f64] {
        &self.gamma[n * self.ks..(n + 1) * self.ks]
    }

    #[inline]
    pub fn gamma_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.gamma[n * self.ks..(n + 1) * self.ks]
    }

    #[inline]
    pub fn nu(&self, l: usize) -> &[f64] {
        &self.nu[l * self.r..(l + 1) * self.r]
    }

    #[inline]
    pub fn nu_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.nu[l * self.r..(l + 1) * self.r]
    }

    /// ξ_{n,k} as an R × R row-major matrix.
    #[inline]
    pub fn xi(&self, n: usize, k: usize) -> &[f64] {
        let rr = self.r * self.r;
        let o = (n * self.ks + k) * rr;
        &self.xi[o..o + rr]
    }

    #[inline]
    pub fn xi_mut(&mut self, n: usize, k: usize) -> &mut [f64] {
        let rr = self.r * self.r;
        let o = (n * self.ks + k) * rr;
        &mut self.xi[o..o + rr]
    }

    /// ξ_{n,·} for all communities (K_s · R · R values).
    pub fn xi_block(&self, n: usize) -> &[f64] {
        let w = self.ks * self.r * self.r;
        &self.xi[n * w..(n + 1) * w]
    }

    #[inline]
    pub fn mu(&self, k: usize) -> &[f64] {
        let rr = self.r * self.r;
        &self.mu[k * rr..(k + 1) * rr]
    }

    #[inline]
    pub fn mu_row(&self, k: usize, r: usize) -> &[f64] {
        let o = (k * self.r + r) * self.r;
        &self.mu[o..o + self.r]
    }

    #[inline]
    pub fn mu_row_mut(&mut self, k: usize, r: usize) -> &mut [f64] {
        let o = (k * self.r + r) * self.r;
        &mut self.mu[o..o + self.r]
    }

    /// E_q[ω_{n,k}]: ξ_{n,k} with each row normalized.
    pub fn expected_omega(&self, n: usize, k: usize) -> Vec<f64> {
        let mut out = self.xi(n, k).to_vec();
        for row in out.chunks_mut(self.r) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        out
    }

    /// Checks the simplex and positivity invariants; returns the first
    /// violation found.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        let simplex = |name: &str, buf: &[f64], width: usize| -> std::result::Result<(), String> {
            for (i, row) in buf.chunks(width).enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > tol || row.iter().any(|x| !(*x >= 0.0)) {
                    return Err(format!("{name} row {i} is off the simplex (sum {s})"));
                }
            }
            Ok(())
        };
        for n in 0..self.n_agents {
            for m in 0..self.n_agents {
                if n != m {
                    simplex("phi", self.phi(n, m), self.ks)?;
                }
            }
        }
        simplex("psi", &self.psi, self.ks)?;
        simplex("nu", &self.nu, self.r)?;
        let floor = |name: &str, buf: &[f64]| -> std::result::Result<(), String> {
            match buf.iter().position(|x| !(*x >= POSITIVITY_FLOOR)) {
                Some(i) => Err(format!("{name}[{i}] = {} is below the floor", buf[i])),
                None => Ok(()),
            }
        };
        floor("gamma", &self.gamma)?;
        floor("xi", &self.xi)?;
        floor("mu", &self.mu)?;
        let flat: Vec<f64> = self.lambda.iter().flat_map(|l| l.iter().copied()).collect();
        floor("lambda", &flat)
    }
}

/// Latent quantities retained by the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n_agents: usize,
    pub n_events: usize,
    /// Number of communities used to generate the data.
    pub n_communities: usize,
    pub n_states: usize,
    /// θ*^l.
    pub theta: Vec<usize>,
    /// s*_n^l, row-major N × L.
    pub s: Vec<usize>,
    /// π*_n rows.
    pub pi: Vec<Vec<f64>>,
    /// ω*_{n,k}, row-major N × K × R × R.
    pub omega: Vec<f64>,
    /// z*_{n→m}, row-major N × N; diagonal entries are meaningless.
    pub z: Vec<usize>,
}

impl GroundTruth {
    pub fn community(&self, n: usize, l: usize) -> usize {
        self.s[n * self.n_events + l]
    }

    /// ω*_{n,k} as an R × R row-major slice.
    pub fn omega_matrix(&self, n: usize, k: usize) -> &[f64] {
        let rr = self.n_states * self.n_states;
        let o = (n * self.n_communities + k) * rr;
        &self.omega[o..o + rr]
    }

    /// Confusion matrix agent `n` used for event `l`.
    pub fn matrix_for(&self, n: usize, l: usize) -> &[f64] {
        self.omega_matrix(n, self.community(n, l))
    }

    /// Most frequent true community of agent `n` (lowest index on ties).
    pub fn modal_community(&self, n: usize) -> usize {
        let mut counts = vec![0usize; self.n_communities];
        for l in 0..self.n_events {
            counts[self.community(n, l)] += 1;
        }
        let mut best = 0;
        for (k, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = k;
            }
        }
        best
    }

    /// ω*_n: the matrix of the agent's modal community.
    pub fn agent_matrix(&self, n: usize) -> &[f64] {
        self.omega_matrix(n, self.modal_community(n))
    }
}

/// (E_q[ln β_k], E_q[ln(1 − β_k)]) under q(β_k) = Beta(G_k, H_k).
pub fn expected_log_beta(lambda: [f64; 2]) -> Result<(f64, f64)> {
    let [g, h] = lambda;
    if !(g.is_finite() && h.is_finite() && g > 0.0 && h > 0.0) {
        return Err(Error::Domain(format!("Beta parameters must be positive, got ({g}, {h})")));
    }
    let total = digamma_unchecked(g + h);
    Ok((digamma_unchecked(g) - total, digamma_unchecked(h) - total))
}

/// E_q[ln π_{n,k}] under q(π_n) = Dir(γ_n).
pub fn expected_log_pi(gamma: &[f64]) -> Result<Vec<f64>> {
    dirichlet_expected_log(gamma)
}

/// E_q[ln ω_{n,k}(r, ·)] under q(ω_{n,k}(r, ·)) = Dir(ξ_{n,k}(r, ·)).
pub fn expected_log_omega(xi_row: &[f64]) -> Result<Vec<f64>> {
    dirichlet_expected_log(xi_row)
}

fn dirichlet_expected_log(params: &[f64]) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::Invalid("Dirichlet parameter vector is empty".into()));
    }
    if let Some(bad) = params.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::Domain(format!("Dirichlet parameter must be positive, got {bad}")));
    }
    let mut out = vec![0.0; params.len()];
    dirichlet_expected_log_into(params, &mut out);
    Ok(out)
}

/// Unchecked kernel behind the expected-log helpers: `out[i] = Ψ(p_i) − Ψ(Σp)`.
#[inline]
pub(crate) fn dirichlet_expected_log_into(params: &[f64], out: &mut [f64]) {
    let total = digamma_unchecked(params.iter().sum());
    for (o, &p) in out.iter_mut().zip(params) {
        *o = digamma_unchecked(p) - total;
    }
}
