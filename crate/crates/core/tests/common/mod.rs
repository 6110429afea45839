#![allow(dead_code)]

use fmr_cluster::clusters::cosine_similarity_matrix;
use fmr_cluster::init::{initialize, InitConfig};
use fmr_cluster::model::{Dataset, ParameterSet, SimilarityMatrix};
use fmr_cluster::simgen::{generate, SimConfig, Simulated};
use fmr_cluster::solver::{admm_z_step, fit, BetaObjective, FitConfig, FitResult, ResponseCache};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Replicate {
    pub sim: Simulated,
    pub similarity: SimilarityMatrix,
    pub result: FitResult,
}

/// Reference design fitted from its k-means start with the default solver
/// settings and the given fusion strength.
pub fn fit_reference(n: usize, varrho: f64, seed: u64, v: f64) -> Replicate {
    let sim = generate(&SimConfig::reference(n, varrho, seed)).unwrap();
    let similarity = cosine_similarity_matrix(sim.data.design()).unwrap();
    let init = initialize(&sim.data, 2, &InitConfig { seed, ..Default::default() }).unwrap();
    let cfg = FitConfig { v, seed, ..Default::default() };
    let result = fit(&sim.data, &similarity, 2, &cfg, &init).unwrap();
    Replicate { sim, similarity, result }
}

/// Single-component design sharing the first reference component's
/// coefficients.
pub fn single_glm(n: usize, seed: u64) -> Dataset {
    let coefficients = DMatrix::from_fn(10, 1, |j, _| if j < 5 { -0.1 } else { -0.2 });
    let truth = ParameterSet::new(
        DVector::from_element(1, 1.0),
        DVector::from_element(1, 1.0),
        coefficients,
        DVector::from_element(1, 0.2),
    )
    .unwrap();
    let cfg = SimConfig { truth, ..SimConfig::reference(n, 0.5, seed) };
    generate(&cfg).unwrap().data
}

/// Gamma GLM with log link by iteratively reweighted least squares.
/// Returns `[beta0, beta...]` and their standard errors.
pub fn irls_gamma(data: &Dataset) -> (DVector<f64>, DVector<f64>) {
    let n = data.n();
    let p = data.p();
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { data.design()[(i, j - 1)] });
    let y = data.responses();
    let mut beta = DVector::zeros(p + 1);
    beta[0] = (y.sum() / n as f64).ln();
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    for _ in 0..100 {
        let eta = &x * &beta;
        // log link with Gamma variance gives unit working weights
        let work = DVector::from_fn(n, |i, _| eta[i] + (y[i] - eta[i].exp()) / eta[i].exp());
        let next = &xtx_inv * (x.transpose() * work);
        let change = (&next - &beta).norm();
        beta = next;
        if change < 1e-13 {
            break;
        }
    }
    let eta = &x * &beta;
    let pearson: f64 = (0..n).map(|i| ((y[i] - eta[i].exp()) / eta[i].exp()).powi(2)).sum();
    let phi2 = pearson / (n - p - 1) as f64;
    let se = DVector::from_fn(p + 1, |j, _| (phi2 * xtx_inv[(j, j)]).sqrt());
    (beta, se)
}

fn golden_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Numeric minimum of a convex function of two variables over a box, by
/// nested golden-section search.
pub fn brute_min2(lo: f64, hi: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    golden_min(lo, hi, |u| golden_min(lo, hi, |w| f(u, w)).1).1
}

pub fn partition_spread(coefficients: &[f64], blocks: &[Vec<usize>]) -> f64 {
    blocks
        .iter()
        .map(|b| {
            let vals: Vec<f64> = b.iter().map(|&j| coefficients[j]).collect();
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            max - min
        })
        .fold(0.0, f64::max)
}

/// Largest componentwise `|fd - g| / max(|g|, 1)` over `[beta0, beta, ln phi]`.
pub fn gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = generate(&SimConfig::reference(200, rng.random_range(0.0..0.9), seed)).unwrap();
    let data = sim.data;
    let p = data.p();
    let cache = ResponseCache::new(&data);
    let pi = DVector::from_fn(data.n(), |_, _| rng.random_range(0.0..1.0));
    let z = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
    let r = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.2..0.2));
    let weight = rng.random_range(0.05..1.0);
    let gamma = rng.random_range(0.0..0.1);
    let rho = rng.random_range(0.1..5.0);
    let mut objective = BetaObjective::new(&cache, &pi, Some((&z, &r)), weight, gamma, rho);

    let mut theta = DVector::zeros(p + 2);
    theta[0] = rng.random_range(0.0..2.5);
    for j in 1..=p {
        theta[j] = rng.random_range(-0.5..0.5);
    }
    theta[p + 1] = rng.random_range(0.1f64..1.0).ln();

    let mut grad = DVector::zeros(p + 2);
    objective.evaluate(&theta, &mut grad);
    let mut scratch = DVector::zeros(p + 2);
    let mut worst: f64 = 0.0;
    for j in 0..p + 2 {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let mut up = theta.clone();
        up[j] += h;
        let mut down = theta.clone();
        down[j] -= h;
        let fd = (objective.evaluate(&up, &mut scratch) - objective.evaluate(&down, &mut scratch))
            / (2.0 * h);
        worst = worst.max((fd - grad[j]).abs() / grad[j].abs().max(1.0));
    }
    worst
}

fn pair_objective(u: f64, w: f64, a: f64, b: f64, penalty: f64, rho: f64) -> f64 {
    penalty * (u - w).abs() + 0.5 * rho * ((u - a).powi(2) + (w - b).powi(2))
}

/// Largest gap between the closed-form pair update and a numeric minimizer
/// over all pairs of a random instance.
pub fn z_step_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 4;
    let beta = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let r = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
    let mut s = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in (j + 1)..p {
            let v = rng.random_range(0.0..1.0);
            s[(j, k)] = v;
            s[(k, j)] = v;
        }
    }
    let sim = SimilarityMatrix::new(s).unwrap();
    let weight = rng.random_range(0.05..1.0);
    let v = rng.random_range(0.0..10.0);
    let rho = rng.random_range(0.2..5.0);
    let z = admm_z_step(&beta, &r, &sim, weight, v, rho);

    let mut worst: f64 = 0.0;
    for j in 0..p {
        for k in (j + 1)..p {
            let a = beta[j] - r[(j, k)];
            let b = beta[k] - r[(k, j)];
            // each unordered pair enters the fusion sum twice
            let penalty = weight * v * sim.get(j, k);
            let closed = pair_objective(z[(j, k)], z[(k, j)], a, b, penalty, rho);
            let lo = a.min(b) - 1.0;
            let hi = a.max(b) + 1.0;
            let brute = brute_min2(lo, hi, |u, w| pair_objective(u, w, a, b, penalty, rho));
            worst = worst.max((closed - brute).abs());
        }
    }
    worst
}

/// Ridge-penalized Gamma GLM coefficients at a fixed shape by Newton's
/// method on `shape * sum(y exp(-eta) + eta) + gamma ||beta||^2`.
pub fn ridge_newton(data: &Dataset, shape: f64, gamma: f64) -> DVector<f64> {
    let n = data.n();
    let p = data.p();
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { data.design()[(i, j - 1)] });
    let y = data.responses();
    let mut beta = DVector::zeros(p + 1);
    beta[0] = (y.sum() / n as f64).ln();
    for _ in 0..100 {
        let eta = &x * &beta;
        let ratio = DVector::from_fn(n, |i, _| y[i] * (-eta[i]).exp());
        let mut grad = x.transpose() * ratio.map(|q| shape * (1.0 - q));
        let mut hess = x.transpose() * DMatrix::from_diagonal(&(ratio * shape)) * &x;
        for j in 1..=p {
            grad[j] += 2.0 * gamma * beta[j];
            hess[(j, j)] += 2.0 * gamma;
        }
        let step = hess.cholesky().unwrap().solve(&grad);
        beta -= &step;
        if step.norm() < 1e-14 {
            break;
        }
    }
    beta
}
