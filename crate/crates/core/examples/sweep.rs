//! A small Monte Carlo sweep, printed as the experiment CSV.
//!
//! cargo run --release --example sweep -- 3

use commtruth::cli::{run_experiment, sweep_csv, DataArgs, HyperArgs, Method, MethodArgs, Preset};

fn main() -> commtruth::Result<()> {
    let mc = std::env::args().nth(1).map_or(3, |s| s.parse().expect("run count"));
    let data = DataArgs { preset: Preset::Paper, n: None, l: None, k: None, r: None, diag: None, switching: false };
    let rows = run_experiment(
        &data,
        &[0.7, 0.9],
        &[Method::Visit, Method::Majority],
        mc,
        0,
        &HyperArgs::default(),
        &MethodArgs::default(),
    )?;
    print!("{}", sweep_csv(&rows, true));
    Ok(())
}
