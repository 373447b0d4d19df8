//! Stochastic VISIT with explicit batch sizes and step schedule.
//!
//! cargo run --release --example svisit -- 10 10 0.7 1

use commtruth::eval::accuracy;
use commtruth::svisit::StepSchedule;
use commtruth::visit::estimate_states;
use commtruth::*;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> commtruth::Result<()> {
    let (obs, graph, truth) = generate(&GenConfig::paper(0.7), &RngStream::new(3))?;
    let hyper = Hyperparameters::standard(obs.n_states())?;
    let opts = SvisitOptions {
        agent_batch: Some(arg(1, 10)),
        pair_batch: Some(arg(2, 10)),
        schedule: StepSchedule::new(arg(4, 1.0), arg(3, 0.7))?,
        seed: 3,
        ..Default::default()
    };
    let (state, trace) = run_svisit(&obs, &graph, &hyper, &opts)?;
    let acc = accuracy(&estimate_states(&state.nu, state.r), &truth.theta)?;
    println!("{} iterations, converged {}, accuracy {acc:.3}", trace.iterations(), trace.converged);
    Ok(())
}
