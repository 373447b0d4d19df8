//! Majority voting on a hand-written report set.

use commtruth::baselines::majority_vote;
use commtruth::{ObservationSet, Report};

fn main() -> commtruth::Result<()> {
    let votes = [(0, 0, 1), (1, 0, 1), (2, 0, 0), (0, 1, 2), (1, 1, 0), (2, 1, 2), (3, 1, 0)];
    let reports = votes.iter().map(|&(agent, event, label)| Report { agent, event, label }).collect();
    let obs = ObservationSet::new(4, 2, 3, reports)?;
    let mv = majority_vote(&obs)?;
    for l in 0..obs.n_events() {
        // event 1 is a 2-2 tie; the lower state wins
        println!("event {l}: votes {:?} -> state {}", mv.votes(l), mv.states[l]);
    }
    Ok(())
}
