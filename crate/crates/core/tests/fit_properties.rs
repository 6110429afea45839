mod common;

use fmr_cluster::clusters::{cosine_similarity_matrix, from_state};
use fmr_cluster::init::{initialize, InitConfig};
use fmr_cluster::model::penalized_objective;
use fmr_cluster::simgen::{generate, reference_truth, SimConfig};
use fmr_cluster::solver::{admm_beta_step, e_step, fit, ComponentParams, FitConfig, FitResult};
use nalgebra::DMatrix;

fn lagrangian_share(v: f64, seeds: std::ops::Range<u64>) -> (usize, usize) {
    let (mut ok, mut total) = (0, 0);
    for seed in seeds {
        let varrho = 0.1 * (seed % 9) as f64;
        let sim = generate(&SimConfig::reference(400, varrho, 500 + seed)).unwrap();
        let s = cosine_similarity_matrix(sim.data.design()).unwrap();
        let init = initialize(&sim.data, 2, &InitConfig { seed, ..Default::default() }).unwrap();
        let cfg = FitConfig { v, max_em: 3, ..Default::default() };
        let res = fit(&sim.data, &s, 2, &cfg, &init).unwrap();
        for rec in &res.trace {
            for c in &rec.components {
                for w in c.lagrangian.windows(2) {
                    total += 1;
                    if w[1] <= w[0] {
                        ok += 1;
                    }
                }
            }
        }
    }
    (ok, total)
}

#[test]
fn single_component_matches_irls() {
    let data = common::single_glm(2000, 11);
    let init = initialize(&data, 1, &InitConfig::default()).unwrap();
    let s = cosine_similarity_matrix(data.design()).unwrap();
    let cfg = FitConfig { v: 0.0, gamma: 0.0, ..Default::default() };
    let res = fit(&data, &s, 1, &cfg, &init).unwrap();
    let (beta, se) = common::irls_gamma(&data);
    assert!((res.params.intercepts[0] - beta[0]).abs() <= 2.0 * se[0]);
    for j in 0..data.p() {
        let diff = (res.params.coefficients[(j, 0)] - beta[j + 1]).abs();
        assert!(diff <= 2.0 * se[j + 1], "coefficient {j}: {diff} vs se {}", se[j + 1]);
    }
}

/// Coefficient moves of one step from the truth with `v = 0`, per
/// component and covariate.
fn beta_step_moves(varrho: f64, seed: u64) -> DMatrix<f64> {
    let sim = generate(&SimConfig::reference(1000, varrho, seed)).unwrap();
    let truth = reference_truth();
    let resp = e_step(&sim.data, &truth).unwrap();
    let cfg = FitConfig { v: 0.0, ..Default::default() };
    let mut moves = DMatrix::zeros(10, 2);
    for h in 0..2 {
        let start = ComponentParams {
            intercept: truth.intercepts[h],
            coefficients: truth.coefficients.column(h).clone_owned(),
            dispersion: truth.dispersions[h],
        };
        let z = DMatrix::from_fn(10, 10, |j, _| start.coefficients[j]);
        let r = DMatrix::zeros(10, 10);
        let pi_h = resp.pi.column(h).clone_owned();
        let step =
            admm_beta_step(&sim.data, &pi_h, &z, &r, &start, truth.weights[h], &cfg).unwrap();
        moves.set_column(h, &(&step.params.coefficients - &start.coefficients));
    }
    moves
}

// Single replications move by 0.05 to 0.25 at n = 1000: the sampling error
// of one coefficient is already about 0.04 with independent covariates.
#[test]
#[ignore = "tolerance is below the sampling error of a single replication at n = 1000"]
fn beta_step_from_truth_stays_near_truth() {
    let moves = beta_step_moves(0.9, 21);
    assert!(moves.amax() <= 0.05, "largest move {}", moves.amax());
}

#[test]
fn beta_step_from_truth_is_unbiased() {
    let mut mean = DMatrix::zeros(10, 2);
    for seed in 0..20 {
        mean += beta_step_moves(0.5, 100 + seed) / 20.0;
    }
    assert!(mean.amax() <= 0.05, "largest mean move {}", mean.amax());
}

#[test]
fn repeated_fits_are_identical() {
    let a = common::fit_reference(300, 0.9, 5, 8.0).result;
    let b = common::fit_reference(300, 0.9, 5, 8.0).result;
    assert_eq!(a, b);
}

#[test]
fn parallel_and_sequential_agree() {
    let sim = generate(&SimConfig::reference(300, 0.5, 6)).unwrap();
    let s = cosine_similarity_matrix(sim.data.design()).unwrap();
    let init = initialize(&sim.data, 2, &InitConfig::default()).unwrap();
    let run = |parallel: bool| -> FitResult {
        let cfg = FitConfig { v: 8.0, parallel, ..Default::default() };
        fit(&sim.data, &s, 2, &cfg, &init).unwrap()
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn component_labels_permute_through() {
    let sim = generate(&SimConfig::reference(300, 0.9, 7)).unwrap();
    let s = cosine_similarity_matrix(sim.data.design()).unwrap();
    let init = initialize(&sim.data, 2, &InitConfig::default()).unwrap();
    let cfg = FitConfig { v: 8.0, ..Default::default() };
    let a = fit(&sim.data, &s, 2, &cfg, &init).unwrap();
    let b = fit(&sim.data, &s, 2, &cfg, &init.permuted(&[1, 0])).unwrap();
    let a_perm = a.params.permuted(&[1, 0]);
    assert_eq!(a.em_iterations, b.em_iterations);
    assert!((&a_perm.coefficients - &b.params.coefficients).amax() <= 1e-9);
    assert!((&a_perm.intercepts - &b.params.intercepts).amax() <= 1e-9);
    assert!((&a_perm.dispersions - &b.params.dispersions).amax() <= 1e-9);
    assert!((&a_perm.weights - &b.params.weights).amax() <= 1e-9);
    assert!((&a.state.z[0] - &b.state.z[1]).amax() <= 1e-9);
    assert_eq!(a.admm_iterations[0], b.admm_iterations[1]);
}

#[test]
fn em_without_fusion_is_monotone() {
    for seed in 0..5u64 {
        let varrho = 0.2 * seed as f64;
        let sim = generate(&SimConfig::reference(300, varrho, 40 + seed)).unwrap();
        let s = cosine_similarity_matrix(sim.data.design()).unwrap();
        let init = initialize(&sim.data, 2, &InitConfig { seed, ..Default::default() }).unwrap();
        let cfg = FitConfig { v: 0.0, ..Default::default() };
        let res = fit(&sim.data, &s, 2, &cfg, &init).unwrap();
        let mut prev = penalized_objective(&sim.data, &init, &s, cfg.gamma, 0.0).unwrap();
        for rec in &res.trace {
            assert!(rec.objective >= prev - 1e-6, "seed {seed}: {} after {prev}", rec.objective);
            assert!(rec.responsibility_error <= 1e-10);
            assert!((rec.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prev = rec.objective;
        }
    }
}

#[test]
fn trace_objective_matches_penalized_objective() {
    let r = common::fit_reference(300, 0.9, 8, 12.0);
    let last = r.result.trace.last().unwrap();
    let direct =
        penalized_objective(&r.sim.data, &r.result.params, &r.similarity, 0.001, 12.0).unwrap();
    assert!((last.objective - direct).abs() <= 1e-9 * direct.abs());
}

#[test]
fn lagrangian_without_fusion_is_nonincreasing() {
    let (ok, total) = lagrangian_share(0.0, 0..10);
    assert!(total > 0);
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}

// Measured on these instances: with fusion the recorded Lagrangian rises in
// almost every sweep (dual ascent lifts it toward the optimum from below).
#[test]
#[ignore = "does not hold for v > 0; the Lagrangian increases under dual ascent"]
fn lagrangian_with_fusion_is_nonincreasing() {
    let (ok, total) = lagrangian_share(4.0, 0..10);
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}

#[test]
fn fusion_recovers_reference_blocks() {
    let r = common::fit_reference(1000, 0.9, 3, 20.0);
    let graph = from_state(&r.result.state);
    for comp in &graph.components {
        let mut blocks = comp.blocks.clone();
        blocks.sort();
        assert_eq!(blocks, r.sim.truth_partition);
    }
}

#[test]
fn no_fusion_leaves_singletons() {
    let r = common::fit_reference(300, 0.9, 3, 0.0);
    let graph = from_state(&r.result.state);
    for comp in &graph.components {
        assert!(comp.edges.is_empty());
        assert_eq!(comp.blocks.len(), 10);
    }
}

#[test]
fn fitted_parameters_are_valid() {
    for v in [0.0, 4.0, 20.0] {
        let r = common::fit_reference(200, 0.5, 9, v);
        r.result.params.validate().unwrap();
        assert!(r.result.params.dispersions.iter().all(|&d| d > 0.0));
    }
}
