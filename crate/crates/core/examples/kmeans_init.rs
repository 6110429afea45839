//! Starting values: one-dimensional k-means on the responses, then a ridge
//! Gamma regression inside each group.
//!
//!     cargo run --release --example kmeans_init -- [seed] [components]

use fmr_cluster::init::{initial_params, kmeans_1d, InitConfig};
use fmr_cluster::simgen::{generate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let k: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);

    let sim = generate(&SimConfig::reference(1000, 0.9, seed))?;
    let cfg = InitConfig { seed, ..InitConfig::default() };
    let y: Vec<f64> = sim.data.responses().iter().copied().collect();
    let km = kmeans_1d(&y, k, &cfg)?;
    let centers: Vec<String> = km.centers.iter().map(|c| format!("{c:.3}")).collect();
    let weights: Vec<String> = km.weights.iter().map(|w| format!("{w:.3}")).collect();
    println!(
        "k-means: centers [{}], weights [{}], SSE {:.1}",
        centers.join(", "),
        weights.join(", "),
        km.sse
    );

    let agree = km.labels.iter().zip(&sim.labels).filter(|(a, b)| a == b).count();
    println!("labels matching the generating component: {agree} of {}", y.len());

    let params = initial_params(&sim.data, &km.labels, k, &cfg)?;
    for h in 0..k {
        let coef: Vec<String> =
            params.coefficients.column(h).iter().map(|b| format!("{b:.2}")).collect();
        println!(
            "component {}: weight {:.3}, intercept {:.3}, dispersion {:.3}, coefficients [{}]",
            h + 1,
            params.weights[h],
            params.intercepts[h],
            params.dispersions[h],
            coef.join(", ")
        );
    }
    Ok(())
}
