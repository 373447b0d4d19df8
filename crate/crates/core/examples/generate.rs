//! Draws the paper-preset dataset and prints what came out.
//!
//! cargo run --example generate -- 0.8

use commtruth::generator::mask_statistics;
use commtruth::{generate, GenConfig, RngStream};

fn main() -> commtruth::Result<()> {
    let sparsity = std::env::args().nth(1).map_or(0.7, |s| s.parse().expect("sparsity"));
    let cfg = GenConfig::paper(sparsity);
    let (obs, graph, truth) = generate(&cfg, &RngStream::new(1))?;

    println!("{} agents, {} events, {} states", obs.n_agents(), obs.n_events(), obs.n_states());
    println!("{} reports, observed fraction {:.3}", obs.len(), mask_statistics(&obs));
    println!("{} undirected edges", graph.n_edges());
    let mut sizes = vec![0; truth.n_communities];
    for n in 0..truth.n_agents {
        sizes[truth.modal_community(n)] += 1;
    }
    println!("agents per modal community: {sizes:?}");
    Ok(())
}
