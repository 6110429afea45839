//! Fits on one sample and scores the fit, the generating parameters and a
//! single-component model on a fresh sample.
//!
//!     cargo run --release --example evaluate_metrics -- [seed]

use fmr_cluster::clusters::cosine_similarity_matrix;
use fmr_cluster::eval::{quantile_residuals, report};
use fmr_cluster::init::{initialize, InitConfig};
use fmr_cluster::simgen::{generate, reference_truth, SimConfig};
use fmr_cluster::solver::{fit, FitConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let train = generate(&SimConfig::reference(1000, 0.9, seed))?.data;
    let test = generate(&SimConfig::reference(1000, 0.9, seed + 1))?.data;
    let s = cosine_similarity_matrix(train.design())?;
    let config = FitConfig { v: 20.0, seed, ..FitConfig::default() };

    let init2 = initialize(&train, 2, &InitConfig { seed, ..InitConfig::default() })?;
    let mixture = fit(&train, &s, 2, &config, &init2)?.params;
    let init1 = initialize(&train, 1, &InitConfig { seed, ..InitConfig::default() })?;
    let single = fit(&train, &s, 1, &config, &init1)?.params;

    println!(
        "{:<12} {:>10} {:>9} {:>8} {:>8} {:>7}",
        "model", "NLL", "pseudoR2", "MSE", "MCRPS", "lift"
    );
    for (name, params) in
        [("truth", reference_truth()), ("H = 2", mixture.clone()), ("H = 1", single)]
    {
        let m = report(&test, &params)?;
        println!(
            "{name:<12} {:>10.2} {:>9.4} {:>8.3} {:>8.4} {:>7.3}",
            m.nll, m.pseudo_r2, m.mse, m.mcrps, m.lift
        );
    }

    let mut resid: Vec<f64> = quantile_residuals(&test, &mixture)?.iter().copied().collect();
    resid.sort_by(f64::total_cmp);
    let at = |q: f64| resid[((resid.len() - 1) as f64 * q).round() as usize];
    println!(
        "quantile residuals of the H = 2 fit: 5% {:.2}, 50% {:.2}, 95% {:.2} (standard normal: -1.64, 0, 1.64)",
        at(0.05),
        at(0.5),
        at(0.95)
    );
    Ok(())
}
