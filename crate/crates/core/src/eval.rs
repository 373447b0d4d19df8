//! Accuracy, confusion-matrix errors and Monte Carlo aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, ObservationSet, VariationalState};
use crate::rng::RngStream;
use crate::special::argmax;

/// Fraction of events whose estimated state matches the truth.
pub fn accuracy(estimated: &[usize], truth: &[usize]) -> Result<f64> {
    let correct = per_event_correct(estimated, truth)?;
    if correct.is_empty() {
        return Err(Error::Invalid("accuracy over zero events".into()));
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

pub fn per_event_correct(estimated: &[usize], truth: &[usize]) -> Result<Vec<bool>> {
    if estimated.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimated states against {} true states",
            estimated.len(),
            truth.len()
        )));
    }
    Ok(estimated.iter().zip(truth).map(|(a, b)| a == b).collect())
}

fn check_truth(state: &VariationalState, obs: &ObservationSet, truth: &GroundTruth) -> Result<()> {
    if truth.omega.is_empty() || truth.s.is_empty() {
        return Err(Error::Invalid("ground truth carries no confusion matrices".into()));
    }
    if truth.n_agents != obs.n_agents()
        || truth.n_events != obs.n_events()
        || truth.n_states != obs.n_states()
        || state.n_agents != obs.n_agents()
        || state.r != obs.n_states()
    {
        return Err(Error::Dimension("state, observations and ground truth disagree".into()));
    }
    Ok(())
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Σ over reported (n, l) of ‖E_q[ω_{n,ŝ}] − ω*_{n,s*}‖², divided by
/// |reports|·R², with ŝ = argmax ψ_n^l.
pub fn mse_switching(state: &VariationalState, obs: &ObservationSet, truth: &GroundTruth) -> Result<f64> {
    check_truth(state, obs, truth)?;
    if obs.is_empty() {
        return Err(Error::Invalid("no reports to evaluate".into()));
    }
    let r = obs.n_states();
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; state.n_agents * state.ks];
    let mut total = 0.0;
    for (i, rep) in obs.reports().iter().enumerate() {
        let k = argmax(state.psi(i));
        let est = cache[rep.agent * state.ks + k].get_or_insert_with(|| state.expected_omega(rep.agent, k));
        total += squared_error(est, truth.matrix_for(rep.agent, rep.event));
    }
    Ok(total / (obs.len() * r * r) as f64)
}

/// Per-agent point estimates E_q[ω_{n,k̂(n)}] with k̂(n) = argmax_k Σ_l ψ_{n,k}^l.
pub fn fixed_community_estimates(state: &VariationalState, obs: &ObservationSet) -> Vec<Vec<f64>> {
    (0..state.n_agents)
        .map(|n| {
            let mut mass = vec![0.0; state.ks];
            for &i in obs.agent_reports(n) {
                for (m, p) in mass.iter_mut().zip(state.psi(i)) {
                    *m += p;
                }
            }
            state.expected_omega(n, argmax(&mass))
        })
        .collect()
}

/// Σ_n ‖ω′_n − ω*_n‖² / (N·R²), where ω*_n is the agent's modal true
/// community matrix.
pub fn mse_fixed(omega_hat: &[Vec<f64>], truth: &GroundTruth) -> Result<f64> {
    let r = truth.n_states;
    if omega_hat.len() != truth.n_agents || omega_hat.iter().any(|m| m.len() != r * r) {
        return Err(Error::Dimension(format!(
            "expected {} matrices of {} entries",
            truth.n_agents,
            r * r
        )));
    }
    if truth.n_agents == 0 {
        return Err(Error::Invalid("no agents to evaluate".into()));
    }
    let total: f64 = omega_hat
        .iter()
        .enumerate()
        .map(|(n, m)| squared_error(m, truth.agent_matrix(n)))
        .sum();
    Ok(total / (truth.n_agents * r * r) as f64)
}

/// What one Monte Carlo run reports back.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub estimated: Vec<usize>,
    pub truth: Vec<usize>,
    pub mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub accuracy: f64,
    pub mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean accuracy over runs.
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub mse: Option<f64>,
    pub mse_std: Option<f64>,
    /// Concatenated over runs in run order.
    pub per_event_correct: Vec<bool>,
    pub mc_runs: usize,
    pub runs: Vec<RunMetrics>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_outcomes(outcomes: Vec<RunOutcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Invalid("at least one run is required".into()));
        }
        let mut runs = Vec::with_capacity(outcomes.len());
        let mut correct = Vec::new();
        for (run, o) in outcomes.into_iter().enumerate() {
            let c = per_event_correct(&o.estimated, &o.truth).map_err(|e| Error::Run { run, source: Box::new(e) })?;
            let accuracy = accuracy(&o.estimated, &o.truth).map_err(|e| Error::Run { run, source: Box::new(e) })?;
            correct.extend(c);
            runs.push(RunMetrics { run, accuracy, mse: o.mse, seconds: o.seconds });
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let (accuracy, accuracy_std) = mean_std(&accs);
        let mses: Option<Vec<f64>> = runs.iter().map(|r| r.mse).collect();
        let (mse, mse_std) = match mses {
            Some(v) => {
                let (m, s) = mean_std(&v);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        Ok(Self {
            accuracy,
            accuracy_std,
            mse,
            mse_std,
            per_event_correct: correct,
            mc_runs: runs.len(),
            runs,
        })
    }
}

/// Runs `run(i, stream_i)` for i in 0..n_runs in parallel, where stream_i is
/// split from `seed`, and aggregates. A failing run is reported with its index.
pub fn monte_carlo<F>(n_runs: usize, seed: u64, run: F) -> Result<EvalReport>
where
    F: Fn(usize, &RngStream) -> Result<RunOutcome> + Sync,
{
    if n_runs == 0 {
        return Err(Error::Invalid("n_runs must be at least 1".into()));
    }
    let master = RngStream::new(seed);
    let outcomes: Vec<RunOutcome> = (0..n_runs)
        .into_par_iter()
        .map(|i| run(i, &master.split(i as u64)).map_err(|e| Error::Run { run: i, source: Box::new(e) }))
        .collect::<Result<_>>()?;
    EvalReport::from_outcomes(outcomes)
}
