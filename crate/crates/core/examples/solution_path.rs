//! Solution path over the fusion strength: each v warm-starts from the
//! previous estimates, and the table shows coefficients drawing together
//! within the true blocks.
//!
//!     cargo run --release --example solution_path -- [seed] [varrho] [max_admm]

use fmr_cluster::clusters::{ccp, cosine_similarity_matrix, extract_clusters};
use fmr_cluster::init::{initialize, InitConfig};
use fmr_cluster::simgen::{generate, SimConfig};
use fmr_cluster::solver::{fit, FitConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let varrho: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.9);
    let max_admm: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);

    let sim = generate(&SimConfig::reference(1000, varrho, seed))?;
    let s = cosine_similarity_matrix(sim.data.design())?;
    let mut start = initialize(&sim.data, 2, &InitConfig { seed, ..InitConfig::default() })?;

    for v in [0.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0, 30.0] {
        let config = FitConfig { v, max_admm, seed, ..FitConfig::default() };
        let result = fit(&sim.data, &s, 2, &config, &start)?;
        let graph = extract_clusters(&result);
        for h in 0..2 {
            let coef: Vec<String> =
                result.params.coefficients.column(h).iter().map(|b| format!("{b:>6.3}")).collect();
            println!(
                "v {v:>4}  comp {}  CCP {:.2}  [{}]",
                h + 1,
                ccp(&graph.components[h].blocks, &sim.truth_partition)?,
                coef.join(" ")
            );
        }
        start = result.params;
    }
    Ok(())
}
