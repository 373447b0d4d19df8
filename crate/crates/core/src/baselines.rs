//! Majority voting: every agent counts equally.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ObservationSet;
use crate::special::argmax;

/// Per-event modal labels (ties to the lowest state) with vote counts.
#[derive(Clone, Debug, PartialEq)]
pub struct MajorityVote {
    pub states: Vec<usize>,
    /// Row-major L × R vote counts.
    pub histogram: Vec<u32>,
    pub n_states: usize,
}

impl MajorityVote {
    pub fn votes(&self, event: usize) -> &[u32] {
        &self.histogram[event * self.n_states..(event + 1) * self.n_states]
    }
}

pub fn majority_vote(obs: &ObservationSet) -> Result<MajorityVote> {
    let r = obs.n_states();
    let rows: Vec<Vec<u32>> = (0..obs.n_events())
        .into_par_iter()
        .map(|l| {
            let idx = obs.event_reports(l);
            if idx.is_empty() {
                return Err(Error::EventWithoutReports(l));
            }
            let mut counts = vec![0u32; r];
            for &i in idx {
                counts[obs.reports()[i].label] += 1;
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let states = rows
        .iter()
        .map(|c| argmax(&c.iter().map(|&x| x as f64).collect::<Vec<_>>()))
        .collect();
    Ok(MajorityVote {
        states,
        histogram: rows.concat(),
        n_states: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Report;
    use crate::rng::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn obs_from(labels: &[usize], r: usize) -> ObservationSet {
        let reports = labels
            .iter()
            .enumerate()
            .map(|(a, &label)| Report { agent: a, event: 0, label })
            .collect();
        ObservationSet::new(labels.len(), 1, r, reports).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(majority_vote(&obs_from(&[1, 1, 2], 3)).unwrap().states, vec![1]);
        assert_eq!(majority_vote(&obs_from(&[1, 2], 3)).unwrap().states, vec![1]);
        assert_eq!(majority_vote(&obs_from(&[2, 0, 2], 3)).unwrap().votes(0), &[1, 0, 2]);
    }

    fn random_instance(rng: &mut RngStream) -> ObservationSet {
        let n = rng.gen_range(1..=5);
        let l = rng.gen_range(1..=5);
        let r = rng.gen_range(2..=3);
        let mut reports = Vec::new();
        for e in 0..l {
            let forced = rng.gen_range(0..n);
            for a in 0..n {
                if a == forced || rng.gen_bool(0.6) {
                    reports.push(Report { agent: a, event: e, label: rng.gen_range(0..r) });
                }
            }
        }
        ObservationSet::new(n, l, r, reports).unwrap()
    }

    #[test]
    fn brute_force_count_oracle() {
        let mut rng = RngStream::new(11);
        for _ in 0..100 {
            let obs = random_instance(&mut rng);
            let got = majority_vote(&obs).unwrap().states;
            for (l, &s) in got.iter().enumerate() {
                // Count each candidate label independently by scanning all reports.
                let count = |x: usize| obs.reports().iter().filter(|rep| rep.event == l && rep.label == x).count();
                let best = (0..obs.n_states()).map(count).max().unwrap();
                let expect = (0..obs.n_states()).find(|&x| count(x) == best).unwrap();
                assert_eq!(s, expect);
            }
        }
    }

    proptest! {
        #[test]
        fn agent_permutation_invariant(seed in 0u64..500, shift in 1usize..5) {
            let mut rng = RngStream::new(seed);
            let obs = random_instance(&mut rng);
            let n = obs.n_agents();
            let permuted: Vec<Report> = obs
                .reports()
                .iter()
                .map(|rep| Report { agent: (rep.agent + shift) % n, ..*rep })
                .collect();
            let p = ObservationSet::new(n, obs.n_events(), obs.n_states(), permuted).unwrap();
            prop_assert_eq!(majority_vote(&obs).unwrap().states, majority_vote(&p).unwrap().states);
        }

        #[test]
        fn duplication_invariant(seed in 0u64..500, copies in 2usize..4) {
            let mut rng = RngStream::new(seed);
            let obs = random_instance(&mut rng);
            let n = obs.n_agents();
            let dup: Vec<Report> = (0..copies)
                .flat_map(|c| obs.reports().iter().map(move |rep| Report { agent: rep.agent + c * n, ..*rep }))
                .collect();
            let d = ObservationSet::new(n * copies, obs.n_events(), obs.n_states(), dup).unwrap();
            prop_assert_eq!(majority_vote(&obs).unwrap().states, majority_vote(&d).unwrap().states);
        }
    }
}
