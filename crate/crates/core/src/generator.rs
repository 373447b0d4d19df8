//! Synthetic datasets with planted communities, a stochastic-blockmodel social
//! graph and a sparse observation mask.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, ObservationSet, Report, SocialGraph};
use crate::rng::RngStream;
use crate::sampling::{sample_categorical, sample_dirichlet};

/// Attempts at drawing a mask in which every event keeps an observer.
pub const MASK_RETRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_agents: usize,
    pub n_events: usize,
    /// True number of communities K.
    pub n_communities: usize,
    pub n_states: usize,
    /// Within-community link probability β_k.
    pub beta: Vec<f64>,
    /// Cross-community link probability.
    pub epsilon: f64,
    /// Community weights π_n, one row per agent.
    pub pi: Vec<Vec<f64>>,
    /// Diagonal value d_k of each community confusion matrix.
    pub diag: Vec<f64>,
    /// Fraction of unobserved agent × event cells.
    pub sparsity: f64,
    /// Draw s_n^l independently per event instead of once per agent.
    pub switching: bool,
    /// When set, each agent's matrix is drawn row-wise from
    /// Dir(c · ω_k(r, ·)) with this concentration c.
    pub perturb: Option<f64>,
}

impl GenConfig {
    /// Four planted communities over 80 agents and 200 events with six
    /// states; diagonals (0.05, 0.1, 0.5, 0.2) and β_k = 0.9.
    pub fn paper(sparsity: f64) -> Self {
        let third = 1.0 / 30.0;
        let blocks = [
            vec![0.9, third, third, third],
            vec![third, 0.9, third, third],
            vec![third, third, 0.9, third],
            vec![0.0, 0.3, 0.7, 0.0],
        ];
        let pi = (0..80).map(|n| blocks[n / 20].clone()).collect();
        Self {
            n_agents: 80,
            n_events: 200,
            n_communities: 4,
            n_states: 6,
            beta: vec![0.9; 4],
            epsilon: 0.05,
            pi,
            diag: vec![0.05, 0.1, 0.5, 0.2],
            sparsity,
            switching: false,
            perturb: None,
        }
    }

    /// Agents split into K equal contiguous blocks, each putting weight
    /// `dominant` on its own community and spreading the rest evenly.
    pub fn blocks(n_agents: usize, n_events: usize, n_communities: usize, n_states: usize, diag: Vec<f64>, sparsity: f64) -> Self {
        let dominant = 0.9;
        let pi = (0..n_agents)
            .map(|n| {
                let own = n * n_communities / n_agents.max(1);
                if n_communities == 1 {
                    vec![1.0]
                } else {
                    let rest = (1.0 - dominant) / (n_communities - 1) as f64;
                    (0..n_communities).map(|k| if k == own { dominant } else { rest }).collect()
                }
            })
            .collect();
        Self {
            n_agents,
            n_events,
            n_communities,
            n_states,
            beta: vec![0.9; n_communities],
            epsilon: 0.05,
            pi,
            diag,
            sparsity,
            switching: false,
            perturb: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.n_agents == 0 || self.n_events == 0 || self.n_communities == 0 {
            return bad("agent, event and community counts must be positive".into());
        }
        if self.n_states < 2 {
            return bad(format!("state arity must be at least 2, got {}", self.n_states));
        }
        if self.n_communities > self.n_agents {
            return bad(format!("K = {} exceeds N = {}", self.n_communities, self.n_agents));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return bad(format!("sparsity must lie in [0, 1), got {}", self.sparsity));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.beta.len() != self.n_communities || self.beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return bad("beta needs one value in (0, 1) per community".into());
        }
        if self.diag.len() != self.n_communities || self.diag.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            return bad("diag needs one value in (0, 1] per community".into());
        }
        if self.pi.len() != self.n_agents {
            return bad(format!("pi has {} rows, expected {}", self.pi.len(), self.n_agents));
        }
        for (n, row) in self.pi.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != self.n_communities || row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return bad(format!("pi row {n} is not a probability vector over {} communities", self.n_communities));
            }
        }
        if let Some(c) = self.perturb {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("perturbation concentration must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Community confusion matrix ω_k: d_k on the diagonal and
    /// (1 − d_k)/(R − 1) elsewhere.
    pub fn community_matrix(&self, k: usize) -> Vec<f64> {
        let r = self.n_states;
        let d = self.diag[k];
        let off = (1.0 - d) / (r - 1) as f64;
        (0..r * r).map(|i| if i / r == i % r { d } else { off }).collect()
    }
}

/// Draws one dataset. Each sampling site uses its own substream of `rng`, so
/// datasets that differ only in sparsity share θ, s, z and D.
pub fn generate(config: &GenConfig, rng: &RngStream) -> Result<(ObservationSet, SocialGraph, GroundTruth)> {
    config.validate()?;
    let n = config.n_agents;
    let l_count = config.n_events;
    let k_count = config.n_communities;
    let r = config.n_states;

    let mut rng_theta = rng.split(0);
    let theta: Vec<usize> = (0..l_count).map(|_| rng_theta.gen_range(0..r)).collect();

    let mut rng_omega = rng.split(1);
    let mut omega = Vec::with_capacity(n * k_count * r * r);
    let base: Vec<Vec<f64>> = (0..k_count).map(|k| config.community_matrix(k)).collect();
    for _ in 0..n {
        for b in &base {
            match config.perturb {
                None => omega.extend_from_slice(b),
                Some(c) => {
                    for row in b.chunks(r) {
                        let params: Vec<f64> = row.iter().map(|x| c * x).collect();
                        omega.extend(sample_dirichlet(&params, &mut rng_omega)?);
                    }
                }
            }
        }
    }

    let mut rng_s = rng.split(2);
    let mut s = vec![0usize; n * l_count];
    for agent in 0..n {
        let row = &mut s[agent * l_count..(agent + 1) * l_count];
        if config.switching {
            for slot in row.iter_mut() {
                *slot = sample_categorical(&config.pi[agent], &mut rng_s)?;
            }
        } else {
            let k = sample_categorical(&config.pi[agent], &mut rng_s)?;
            row.fill(k);
        }
    }

    let mut rng_z = rng.split(3);
    let mut z = vec![0usize; n * n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                z[a * n + b] = sample_categorical(&config.pi[a], &mut rng_z)?;
            }
        }
    }

    let mut rng_d = rng.split(4);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let (za, zb) = (z[a * n + b], z[b * n + a]);
            let p = if za == zb { config.beta[za] } else { config.epsilon };
            if rng_d.gen::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    let graph = SocialGraph::new(n, edges)?;

    let mask = draw_mask(n, l_count, config.sparsity, &mut rng.split(5))?;

    let mut rng_y = rng.split(6);
    let mut reports = Vec::with_capacity(mask.iter().filter(|x| **x).count());
    for agent in 0..n {
        for l in 0..l_count {
            if mask[agent * l_count + l] {
                let k = s[agent * l_count + l];
                let o = (agent * k_count + k) * r * r + theta[l] * r;
                let label = sample_categorical(&omega[o..o + r], &mut rng_y)?;
                reports.push(Report { agent, event: l, label });
            }
        }
    }
    let obs = ObservationSet::new(n, l_count, r, reports)?;

    let truth = GroundTruth {
        n_agents: n,
        n_events: l_count,
        n_communities: k_count,
        n_states: r,
        theta,
        s,
        pi: config.pi.clone(),
        omega,
        z,
    };
    Ok((obs, graph, truth))
}

/// Number of zero cells for a given sparsity: ⌊ℵ · N · L⌋.
pub fn zero_count(n_agents: usize, n_events: usize, sparsity: f64) -> usize {
    let total = (n_agents * n_events) as f64;
    // The epsilon absorbs products like 0.7 · 16000 = 11199.999….
    (sparsity * total + 1e-9).floor() as usize
}

/// Row-major N × L observation mask with exactly ⌊ℵ·N·L⌋ unobserved cells.
fn draw_mask(n: usize, l_count: usize, sparsity: f64, rng: &mut RngStream) -> Result<Vec<bool>> {
    let total = n * l_count;
    let zeros = zero_count(n, l_count, sparsity);
    for _ in 0..MASK_RETRIES {
        let mut mask = vec![true; total];
        for idx in sample_indices(rng, total, zeros).into_iter() {
            mask[idx] = false;
        }
        let all_observed = (0..l_count).all(|l| (0..n).any(|a| mask[a * l_count + l]));
        if all_observed {
            return Ok(mask);
        }
    }
    Err(Error::MaskRetriesExhausted(MASK_RETRIES))
}

/// 1 − |reports| / (N · L).
pub fn mask_statistics(obs: &ObservationSet) -> f64 {
    1.0 - obs.len() as f64 / (obs.n_agents() * obs.n_events()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_dimensions() {
        for &sp in &[0.7, 0.75, 0.8, 0.85, 0.9] {
            let cfg = GenConfig::paper(sp);
            let (obs, graph, truth) = generate(&cfg, &RngStream::new(1)).unwrap();
            assert_eq!((obs.n_agents(), obs.n_events(), obs.n_states()), (80, 200, 6));
            assert_eq!(graph.n_agents(), 80);
            assert_eq!(truth.theta.len(), 200);
            assert_eq!(obs.len(), 16000 - zero_count(80, 200, sp));
            assert!((mask_statistics(&obs) - sp).abs() <= 1.0 / 16000.0);
        }
        assert_eq!(zero_count(80, 200, 0.7), 11200);
    }

    #[test]
    fn mask_statistics_arithmetic() {
        let cfg = GenConfig::blocks(2, 2, 1, 2, vec![0.9], 0.0);
        let (obs, _, _) = generate(&cfg, &RngStream::new(0)).unwrap();
        assert_eq!(obs.len(), 4);
        assert_eq!(mask_statistics(&obs), 0.0);
    }

    #[test]
    fn dense_when_sparsity_zero() {
        let cfg = GenConfig::blocks(10, 7, 2, 3, vec![0.8, 0.6], 0.0);
        let (obs, _, _) = generate(&cfg, &RngStream::new(3)).unwrap();
        assert_eq!(obs.len(), 70);
    }

    #[test]
    fn perfect_reporters_copy_truth() {
        let cfg = GenConfig::blocks(6, 30, 1, 4, vec![1.0], 0.3);
        let (obs, _, truth) = generate(&cfg, &RngStream::new(4)).unwrap();
        for rep in obs.reports() {
            assert_eq!(rep.label, truth.theta[rep.event]);
        }
    }

    #[test]
    fn fixed_communities_are_constant_over_events() {
        let (_, _, truth) = generate(&GenConfig::paper(0.8), &RngStream::new(5)).unwrap();
        for n in 0..80 {
            let k0 = truth.community(n, 0);
            assert!((0..200).all(|l| truth.community(n, l) == k0));
            // agents 61..80 have zero weight on communities 1 and 4
            if n >= 60 {
                assert!(k0 == 1 || k0 == 2);
            }
        }
    }

    #[test]
    fn switching_varies_communities() {
        let mut cfg = GenConfig::paper(0.8);
        cfg.switching = true;
        let (_, _, truth) = generate(&cfg, &RngStream::new(6)).unwrap();
        let varying = (0..80).filter(|&n| (0..200).any(|l| truth.community(n, l) != truth.community(n, 0))).count();
        assert!(varying > 60);
    }

    #[test]
    fn omega_rows_are_stochastic() {
        let cfg = GenConfig::paper(0.7);
        for k in 0..4 {
            for row in cfg.community_matrix(k).chunks(6) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let mut cfg = cfg;
        cfg.perturb = Some(50.0);
        let (_, _, truth) = generate(&cfg, &RngStream::new(7)).unwrap();
        for row in truth.omega.chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_density_follows_blockmodel() {
        // One community, every pair shares it: density ≈ β.
        let cfg = GenConfig::blocks(120, 5, 1, 2, vec![0.9], 0.0);
        let (_, graph, _) = generate(&cfg, &RngStream::new(8)).unwrap();
        let pairs = (120 * 119 / 2) as f64;
        let density = graph.n_edges() as f64 / pairs;
        let se = (0.9 * 0.1 / pairs).sqrt();
        assert!((density - 0.9).abs() < 3.0 * se, "density {density}");

        // Two communities with pure memberships: cross-block density ≈ ε.
        let mut cfg = GenConfig::blocks(120, 5, 2, 2, vec![0.9, 0.9], 0.0);
        cfg.pi = (0..120).map(|n| if n < 60 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let (_, graph, _) = generate(&cfg, &RngStream::new(9)).unwrap();
        let cross = graph.edges().iter().filter(|(a, b)| (*a < 60) != (*b < 60)).count() as f64;
        let density = cross / 3600.0;
        let se = (0.05 * 0.95 / 3600.0f64).sqrt();
        assert!((density - 0.05).abs() < 3.0 * se, "cross density {density}");
    }

    #[test]
    fn empirical_reports_match_confusion_row() {
        // Pearson χ² against ω_k(r, ·) for an agent fixed in one community.
        let mut cfg = GenConfig::blocks(1, 10_000, 1, 3, vec![0.6], 0.0);
        cfg.pi = vec![vec![1.0]];
        let (obs, _, truth) = generate(&cfg, &RngStream::new(10)).unwrap();
        let row_of = 0;
        let mut counts = [0f64; 3];
        let mut total = 0.0;
        for rep in obs.reports() {
            if truth.theta[rep.event] == row_of {
                counts[rep.label] += 1.0;
                total += 1.0;
            }
        }
        let expect = [0.6, 0.2, 0.2];
        let chi2: f64 = (0..3).map(|i| (counts[i] - total * expect[i]).powi(2) / (total * expect[i])).sum();
        // χ²(2) upper 0.001 quantile
        assert!(chi2 < 13.8155, "chi2 {chi2}");
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = GenConfig::paper(0.85);
        let a = generate(&cfg, &RngStream::new(11)).unwrap();
        let b = generate(&cfg, &RngStream::new(11)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn impossible_sparsity_errors() {
        // 2 agents × 50 events with 98% zeros cannot keep every event observed.
        let cfg = GenConfig::blocks(2, 50, 1, 2, vec![0.9], 0.98);
        assert!(matches!(
            generate(&cfg, &RngStream::new(12)),
            Err(Error::MaskRetriesExhausted(_))
        ));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = GenConfig::paper(1.0);
        assert!(cfg.validate().is_err());
        cfg.sparsity = 0.5;
        cfg.pi[3] = vec![0.5, 0.5, 0.5, 0.0];
        assert!(cfg.validate().is_err());
        let cfg = GenConfig::blocks(3, 4, 4, 2, vec![0.5; 4], 0.0);
        assert!(cfg.validate().is_err());
    }
}
