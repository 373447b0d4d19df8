//! Batch VISIT on one paper-preset dataset, against majority voting.

use commtruth::baselines::majority_vote;
use commtruth::eval::{accuracy, mse_switching};
use commtruth::visit::estimate_states;
use commtruth::*;

fn main() -> commtruth::Result<()> {
    let (obs, graph, truth) = generate(&GenConfig::paper(0.7), &RngStream::new(3))?;
    let hyper = Hyperparameters::standard(obs.n_states())?;

    let (state, trace) = run_visit(&obs, &graph, &hyper, &VisitOptions { seed: 3, ..Default::default() })?;
    for rec in trace.records.iter().step_by(25) {
        println!("iter {:>3}  max|dnu| {:.2e}  rel|dgamma| {:.2e}", rec.iteration, rec.max_delta_nu, rec.rel_delta_gamma);
    }
    println!("iterations {} converged {}", trace.iterations(), trace.converged);

    let visit = accuracy(&estimate_states(&state.nu, state.r), &truth.theta)?;
    let mv = accuracy(&majority_vote(&obs)?.states, &truth.theta)?;
    println!("accuracy: visit {visit:.3}, majority {mv:.3}");
    println!("confusion MSE: {:.5}", mse_switching(&state, &obs, &truth)?);
    Ok(())
}
