//! EM-ADMM fitting of the penalized Gamma mixture.
//!
//! Each EM iteration computes responsibilities, updates the mixture weights
//! in closed form, then runs an independent scaled-ADMM loop per component.
//! The outer loop stops when the Frobenius change of the coefficient matrix
//! drops below `eps_em` or after `max_em` iterations.

pub mod admm;
pub mod bfgs;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use admm::{
    admm_beta_step, admm_r_step, admm_residuals, admm_z_step, BetaObjective, BetaStep,
    ComponentParams, ComponentRecord, ResponseCache,
};

use crate::error::{Error, Result};
use crate::model::{
    check_dims, fusion_penalty, log_density_eta, log_likelihood, ridge_penalty, Dataset,
    ParameterSet, SimilarityMatrix, ETA_LIMIT,
};
use admm::fit_component;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Ridge strength.
    pub gamma: f64,
    /// Fusion strength.
    pub v: f64,
    /// ADMM penalty parameter.
    pub rho: f64,
    pub max_em: usize,
    pub max_admm: usize,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub eps_em: f64,
    pub seed: u64,
    /// Run the per-component M-steps on the rayon pool.
    pub parallel: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            gamma: 0.001,
            v: 0.0,
            rho: 1.0,
            max_em: 10,
            max_admm: 100,
            eps_pri: 0.05,
            eps_dual: 0.05,
            eps_em: 0.01,
            seed: 0,
            parallel: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be a nonnegative number");
        }
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return bad("v", "must be a nonnegative number");
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho", "must be positive");
        }
        if self.max_em < 1 {
            return bad("max_em", "must be at least 1");
        }
        if self.max_admm < 1 {
            return bad("max_admm", "must be at least 1");
        }
        for (name, eps) in
            [("eps_pri", self.eps_pri), ("eps_dual", self.eps_dual), ("eps_em", self.eps_em)]
        {
            if eps.is_nan() || eps <= 0.0 {
                return bad(name, "must be positive");
            }
        }
        Ok(())
    }
}

/// Auxiliary variables and scaled duals, one `p x p` matrix per component.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub z: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

impl AdmmState {
    /// `z[j,k,h] = beta[j,h]`, `r = 0`.
    pub fn initial(params: &ParameterSet) -> Self {
        let h = params.n_components();
        let p = params.n_covariates();
        Self {
            z: (0..h)
                .map(|c| admm::broadcast_rows(&params.coefficients.column(c).clone_owned()))
                .collect(),
            r: vec![DMatrix::zeros(p, p); h],
        }
    }
}

/// Posterior component-membership probabilities, `n x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub pi: DMatrix<f64>,
}

impl Responsibilities {
    /// Largest deviation of a row sum from one.
    pub fn max_row_error(&self) -> f64 {
        self.pi.row_iter().map(|row| (row.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Diagnostics for one EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Penalized objective (likelihood minus ridge and fusion penalties).
    pub objective: f64,
    pub log_likelihood: f64,
    /// `||B_new - B_old||_F`.
    pub coefficient_change: f64,
    pub weights: Vec<f64>,
    /// Worst responsibility row-sum error seen in the E-step.
    pub responsibility_error: f64,
    pub components: Vec<ComponentRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParameterSet,
    pub state: AdmmState,
    pub trace: Vec<IterationRecord>,
    pub em_iterations: usize,
    /// Total ADMM sweeps per component across all EM iterations.
    pub admm_iterations: Vec<usize>,
    pub converged: bool,
}

/// `pi[i,h] = w_h f_h(y_i) / sum_h' w_h' f_h'(y_i)`, normalized in log space.
pub fn e_step(data: &Dataset, params: &ParameterSet) -> Result<Responsibilities> {
    check_dims(data, params)?;
    let n = data.n();
    let h = params.n_components();
    let mut eta = data.design() * &params.coefficients;
    for c in 0..h {
        eta.column_mut(c).add_scalar_mut(params.intercepts[c]);
    }
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let mut pi = DMatrix::zeros(n, h);
    let mut terms = vec![0.0; h];
    for i in 0..n {
        let y = data.responses()[i];
        let ln_y = y.ln();
        for c in 0..h {
            let e = eta[(i, c)];
            if e.is_nan() || e.abs() > ETA_LIMIT {
                return Err(Error::Overflow { eta: e });
            }
            terms[c] = log_w[c] + log_density_eta(y, ln_y, e, params.dispersions[c]);
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || terms.iter().any(|t| t.is_nan()) {
            return Err(Error::Underflow { row: i });
        }
        let mut total = 0.0;
        for c in 0..h {
            let t = (terms[c] - max).exp();
            pi[(i, c)] = t;
            total += t;
        }
        for c in 0..h {
            pi[(i, c)] /= total;
        }
    }
    Ok(Responsibilities { pi })
}

/// Column means of the responsibilities.
pub fn update_weights(pi: &Responsibilities) -> DVector<f64> {
    let n = pi.pi.nrows() as f64;
    DVector::from_fn(pi.pi.ncols(), |c, _| pi.pi.column(c).sum() / n)
}

/// Runs EM-ADMM from `init`.
pub fn fit(
    data: &Dataset,
    sim: &SimilarityMatrix,
    n_components: usize,
    config: &FitConfig,
    init: &ParameterSet,
) -> Result<FitResult> {
    config.validate()?;
    init.validate()?;
    check_dims(data, init)?;
    if n_components < 1 || init.n_components() != n_components {
        return Err(Error::Dimension(format!(
            "requested H = {n_components} but the initial parameters have {} components",
            init.n_components()
        )));
    }
    if sim.p() != data.p() {
        return Err(Error::Dimension(format!(
            "similarity matrix is {0}x{0} but the data has p = {1}",
            sim.p(),
            data.p()
        )));
    }

    let cache = ResponseCache::new(data);
    let mut params = init.clone();
    let mut state = AdmmState::initial(&params);
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut admm_iterations = vec![0; n_components];
    let mut converged = false;

    for m in 0..config.max_em {
        let abort = |source: Error, trace: Vec<IterationRecord>| Error::FitAborted {
            iteration: m,
            source: Box::new(source),
            trace,
        };
        let resp = match e_step(data, &params) {
            Ok(r) => r,
            Err(e) => return Err(abort(e, trace)),
        };
        let weights = positive_simplex(update_weights(&resp));

        let run = |c: usize| {
            let pi_h = resp.pi.column(c).clone_owned();
            let start = ComponentParams {
                intercept: params.intercepts[c],
                coefficients: params.coefficients.column(c).clone_owned(),
                dispersion: params.dispersions[c],
            };
            fit_component(&cache, &pi_h, weights[c], &start, sim, config)
        };
        let outcomes: Vec<_> = if config.parallel {
            (0..n_components).into_par_iter().map(run).collect()
        } else {
            (0..n_components).map(run).collect()
        };

        let mut next = params.clone();
        next.weights = weights;
        let mut records = Vec::with_capacity(n_components);
        for (c, out) in outcomes.into_iter().enumerate() {
            next.intercepts[c] = out.params.intercept;
            next.coefficients.set_column(c, &out.params.coefficients);
            next.dispersions[c] = out.params.dispersion;
            state.z[c] = out.z;
            state.r[c] = out.r;
            admm_iterations[c] += out.record.admm_iterations;
            records.push(out.record);
        }
        if let Err(e) = next.validate() {
            return Err(abort(e, trace));
        }

        let change = (&next.coefficients - &params.coefficients).norm();
        let ll = match log_likelihood(data, &next) {
            Ok(v) => v,
            Err(e) => return Err(abort(e, trace)),
        };
        let objective =
            ll - ridge_penalty(&next, config.gamma) - fusion_penalty(&next, sim, config.v);
        trace.push(IterationRecord {
            iteration: m + 1,
            objective,
            log_likelihood: ll,
            coefficient_change: change,
            weights: next.weights.iter().copied().collect(),
            responsibility_error: resp.max_row_error(),
            components: records,
        });
        params = next;
        if change < config.eps_em {
            converged = true;
            break;
        }
    }

    Ok(FitResult { params, state, em_iterations: trace.len(), trace, admm_iterations, converged })
}

/// Keeps weights strictly positive so the parameter set stays valid when a
/// component receives (numerically) no responsibility.
fn positive_simplex(mut w: DVector<f64>) -> DVector<f64> {
    for v in w.iter_mut() {
        *v = v.max(f64::MIN_POSITIVE);
    }
    let total = w.sum();
    w / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_data() -> Dataset {
        let design = DMatrix::from_row_slice(
            6,
            2,
            &[0.1, 0.2, -0.3, 0.1, 0.2, 0.0, 0.4, -0.1, -0.2, -0.2, 0.0, 0.3],
        );
        Dataset::unnamed(DVector::from_vec(vec![1.2, 2.5, 3.1, 7.7, 0.9, 5.0]), design).unwrap()
    }

    fn params(h: usize) -> ParameterSet {
        let w = DVector::from_element(h, 1.0 / h as f64);
        ParameterSet::new(
            w,
            DVector::from_fn(h, |c, _| 0.5 + c as f64),
            DMatrix::from_fn(2, h, |j, c| 0.1 * (j as f64 + 1.0) * if c == 0 { 1.0 } else { -1.0 }),
            DVector::from_element(h, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn single_component_responsibilities_are_one() {
        let r = e_step(&toy_data(), &params(1)).unwrap();
        assert!(r.pi.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_components_split_evenly() {
        let mut p = params(2);
        p.intercepts[1] = p.intercepts[0];
        let col = p.coefficients.column(0).clone_owned();
        p.coefficients.set_column(1, &col);
        let r = e_step(&toy_data(), &p).unwrap();
        assert!(r.pi.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn responsibilities_match_unnormalized_products() {
        let data = toy_data();
        let p = params(2);
        let r = e_step(&data, &p).unwrap();
        for i in 0..data.n() {
            let x = data.row(i);
            let y = data.responses()[i];
            let dens: Vec<f64> = (0..2)
                .map(|c| {
                    let mu = p.component_mean(c, &x).unwrap();
                    let k = 1.0 / p.dispersions[c].powi(2);
                    let scale = mu / k;
                    p.weights[c] * y.powf(k - 1.0) * (-y / scale).exp()
                        / (scale.powf(k) * statrs::function::gamma::gamma(k))
                })
                .collect();
            let total: f64 = dens.iter().sum();
            for (c, d) in dens.iter().enumerate() {
                assert_relative_eq!(r.pi[(i, c)], d / total, max_relative = 1e-12);
            }
        }
        assert!(r.max_row_error() <= 1e-10);
    }

    #[test]
    fn e_step_reports_underflowing_row() {
        let mut p = params(1);
        p.dispersions[0] = 1e-160;
        let err = e_step(&toy_data(), &p).unwrap_err();
        assert!(matches!(err, Error::Underflow { .. }), "{err}");
    }

    #[test]
    fn weight_updates() {
        let r =
            Responsibilities { pi: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]) };
        assert_eq!(update_weights(&r).as_slice(), &[1.0, 0.0]);
        let r = Responsibilities { pi: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]) };
        assert_eq!(update_weights(&r).as_slice(), &[0.5, 0.5]);
        let r = Responsibilities {
            pi: DMatrix::from_row_slice(3, 2, &[0.2, 0.8, 0.9, 0.1, 0.45, 0.55]),
        };
        let w = update_weights(&r);
        assert_relative_eq!(w[0], (0.2 + 0.9 + 0.45) / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        for bad in [
            FitConfig { rho: 0.0, ..FitConfig::default() },
            FitConfig { max_em: 0, ..FitConfig::default() },
            FitConfig { max_admm: 0, ..FitConfig::default() },
            FitConfig { v: -1.0, ..FitConfig::default() },
            FitConfig { eps_em: 0.0, ..FitConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn fit_rejects_mismatched_components() {
        let data = toy_data();
        let sim = SimilarityMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        assert!(fit(&data, &sim, 3, &FitConfig::default(), &params(2)).is_err());
    }
}
