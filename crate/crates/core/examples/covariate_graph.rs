//! Builds the covariate graph of a fused fit under two similarity matrices
//! and prints the exported edge list.
//!
//!     cargo run --release --example covariate_graph -- [seed]

use fmr_cluster::clusters::{
    constant_similarity_matrix, cosine_similarity_matrix, export_graph, extract_clusters,
    parse_graph,
};
use fmr_cluster::init::{initialize, InitConfig};
use fmr_cluster::simgen::{generate, SimConfig};
use fmr_cluster::solver::{fit, FitConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let sim = generate(&SimConfig::reference(1000, 0.9, seed))?;
    let init = initialize(&sim.data, 2, &InitConfig { seed, ..InitConfig::default() })?;
    let config = FitConfig { v: 20.0, seed, ..FitConfig::default() };

    let cosine = cosine_similarity_matrix(sim.data.design())?;
    let flat = constant_similarity_matrix(10, 0.5)?;
    for (name, s) in [("cosine", cosine), ("constant 0.5", flat)] {
        let graph = extract_clusters(&fit(&sim.data, &s, 2, &config, &init)?);
        let text = export_graph(&graph);
        assert_eq!(parse_graph(&text, 10, 2)?, graph);
        println!("similarity {name}:");
        for (h, comp) in graph.components.iter().enumerate() {
            println!(
                "  component {}: {} edges, {} blocks",
                h + 1,
                comp.edges.len(),
                comp.blocks.len()
            );
        }
        for line in text.lines().filter(|l| l.starts_with('#')) {
            println!("  {line}");
        }
    }
    Ok(())
}
