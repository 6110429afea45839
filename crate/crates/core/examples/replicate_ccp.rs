//! Replication study of the clustering accuracy (CCP) over a grid of fusion
//! strengths, each fit started cold from k-means.
//!
//!     cargo run --release --example replicate_ccp -- [reps] [varrho] [max_admm]
//!
//! With the default ADMM budget of 100 sweeps a few replications at
//! varrho = 0.5 stop before a cross-block pair separates; a larger budget
//! (300) removes them.

use fmr_cluster::clusters::{ccp, cosine_similarity_matrix, extract_clusters};
use fmr_cluster::init::{initialize, InitConfig};
use fmr_cluster::simgen::{generate, replication_seed, SimConfig};
use fmr_cluster::solver::{fit, FitConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let reps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(25);
    let varrho: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.9);
    let max_admm: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let grid = [0.0, 4.0, 8.0, 12.0, 16.0, 20.0];

    let mut mean = vec![[0.0; 2]; grid.len()];
    for rep in 0..reps {
        let seed = replication_seed(2024, rep);
        let sim = generate(&SimConfig::reference(1000, varrho, seed))?;
        let s = cosine_similarity_matrix(sim.data.design())?;
        let init = initialize(&sim.data, 2, &InitConfig { seed, ..InitConfig::default() })?;
        for (i, &v) in grid.iter().enumerate() {
            let config = FitConfig { v, max_admm, seed, ..FitConfig::default() };
            let graph = extract_clusters(&fit(&sim.data, &s, 2, &config, &init)?);
            for (cell, comp) in mean[i].iter_mut().zip(&graph.components) {
                *cell += ccp(&comp.blocks, &sim.truth_partition)? / reps as f64;
            }
        }
    }
    println!("varrho {varrho}, {reps} replications, at most {max_admm} ADMM sweeps");
    println!("{:>6} {:>8} {:>8}", "v", "CCP-1", "CCP-2");
    for (v, row) in grid.iter().zip(&mean) {
        println!("{v:>6} {:>8.3} {:>8.3}", row[0], row[1]);
    }
    Ok(())
}
