//! Loads report files with arbitrary IDs, applies the flip augmentation and
//! runs VISIT.

use commtruth::io::{load_real_dataset, read_truth};
use commtruth::visit::estimate_states;
use commtruth::{run_visit, Hyperparameters, VisitOptions};

fn main() -> commtruth::Result<()> {
    let dir = std::env::temp_dir().join("commtruth-ingest-example");
    std::fs::create_dir_all(&dir).map_err(|e| commtruth::Error::Invalid(e.to_string()))?;
    let write = |name: &str, body: &str| std::fs::write(dir.join(name), body).expect("write fixture");
    write(
        "observations.csv",
        "agent_id,event_id,label\nalice,rumor1,1\nbob,rumor1,1\ncarol,rumor1,0\nalice,rumor2,0\ndave,rumor2,0\nerin,rumor2,1\n",
    );
    write("network.csv", "agent_a,agent_b\nalice,bob\nbob,carol\ndave,erin\nerin,mallory\n");
    write("truth.csv", "event_id,state\nrumor1,1\nrumor2,0\n");

    let data = load_real_dataset(
        &dir.join("observations.csv"),
        Some(&dir.join("network.csv")),
        Some(&dir.join("truth.csv")),
        Some((0.2, 9)),
    )?;
    println!("agents {:?}", data.agents.ids());
    println!("events {:?}", data.events.ids());
    println!("dropped edges {}, flipped reports {}", data.dropped_edges, data.flipped);

    let mut hyper = Hyperparameters::standard(2)?;
    hyper.ks = 3;
    let (state, _) = run_visit(&data.obs, &data.graph, &hyper, &VisitOptions::default())?;
    let truth = read_truth(&dir.join("truth.csv"))?;
    for ((id, want), got) in truth.iter().zip(estimate_states(&state.nu, 2)) {
        println!("{id}: estimated {got}, truth {want}");
    }
    Ok(())
}
