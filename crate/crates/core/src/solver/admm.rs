//! Scaled ADMM for one mixture component's M-step.
//!
//! For fixed responsibilities the component problem is split with auxiliary
//! copies `z[j,k]` of `beta[j]` (one per ordered covariate pair) and scaled
//! duals `r[j,k]`. Each sweep updates `(beta0, beta, phi)` by BFGS, then `z`
//! pairwise in closed form, then `r`.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

use super::bfgs::{self, BfgsOptions};
use super::FitConfig;
use crate::error::{Error, Result};
use crate::model::{Dataset, SimilarityMatrix, ETA_LIMIT};

/// Intercept, coefficients and dispersion of a single component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    pub dispersion: f64,
}

/// Result of one coefficient update.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaStep {
    pub params: ComponentParams,
    /// The line search failed before the gradient tolerance was met.
    pub stalled: bool,
}

/// Per-component ADMM diagnostics for one EM iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComponentRecord {
    pub admm_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub admm_converged: bool,
    /// Augmented Lagrangian after each full `(beta, z, r)` sweep.
    pub lagrangian: Vec<f64>,
    pub bfgs_stalls: usize,
    /// The component was degenerate and kept its previous parameters.
    pub frozen: bool,
}

/// Response-side quantities reused across every evaluation.
pub struct ResponseCache<'a> {
    pub y: &'a DVector<f64>,
    pub ln_y: DVector<f64>,
    pub x: &'a DMatrix<f64>,
}

impl<'a> ResponseCache<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self { y: data.responses(), ln_y: data.responses().map(f64::ln), x: data.design() }
    }
}

/// The coefficient-step objective: responsibility-weighted Gamma negative
/// log-likelihood, weighted ridge, and the ADMM quadratic
/// `rho/2 * sum_{j,k} (z[j,k] - beta[j] + r[j,k])^2`.
///
/// Parameters are packed as `[beta0, beta_1..beta_p, ln(phi)]`.
pub struct BetaObjective<'a> {
    cache: &'a ResponseCache<'a>,
    pi: &'a DVector<f64>,
    pi_sum: f64,
    pi_ln_y: f64,
    ridge: f64,
    rho: f64,
    /// `sum_k (z[j,k] + r[j,k])` per row.
    target_sum: DVector<f64>,
    /// `sum_k (z[j,k] + r[j,k])^2` per row.
    target_sq: DVector<f64>,
    terms_per_row: f64,
    fix_dispersion: bool,
    eta: DVector<f64>,
    work: DVector<f64>,
}

impl<'a> BetaObjective<'a> {
    pub fn new(
        cache: &'a ResponseCache<'a>,
        pi: &'a DVector<f64>,
        z: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
        weight: f64,
        gamma: f64,
        rho: f64,
    ) -> Self {
        let p = cache.x.ncols();
        let (target_sum, target_sq, terms_per_row) = match z {
            Some((z, r)) => {
                let c = z + r;
                (
                    DVector::from_fn(p, |j, _| c.row(j).sum()),
                    DVector::from_fn(p, |j, _| c.row(j).norm_squared()),
                    z.ncols() as f64,
                )
            }
            None => (DVector::zeros(p), DVector::zeros(p), 0.0),
        };
        Self {
            cache,
            pi,
            pi_sum: pi.sum(),
            pi_ln_y: pi.dot(&cache.ln_y),
            ridge: weight * gamma,
            rho: if z.is_some() { rho } else { 0.0 },
            target_sum,
            target_sq,
            terms_per_row,
            fix_dispersion: false,
            eta: DVector::zeros(cache.y.len()),
            work: DVector::zeros(cache.y.len()),
        }
    }

    pub fn fix_dispersion(mut self) -> Self {
        self.fix_dispersion = true;
        self
    }

    pub fn pack(params: &ComponentParams) -> DVector<f64> {
        let p = params.coefficients.len();
        let mut theta = DVector::zeros(p + 2);
        theta[0] = params.intercept;
        theta.rows_mut(1, p).copy_from(&params.coefficients);
        theta[p + 1] = params.dispersion.ln();
        theta
    }

    pub fn unpack(theta: &DVector<f64>) -> ComponentParams {
        let p = theta.len() - 2;
        ComponentParams {
            intercept: theta[0],
            coefficients: theta.rows(1, p).clone_owned(),
            dispersion: theta[p + 1].exp(),
        }
    }

    /// Objective value; writes the analytic gradient into `grad`.
    pub fn evaluate(&mut self, theta: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        let p = self.cache.x.ncols();
        let beta0 = theta[0];
        let beta = theta.rows(1, p);
        let shape = (-2.0 * theta[p + 1]).exp();
        if !(shape.is_finite() && shape > 1e-12 && shape < 1e12) {
            return f64::INFINITY;
        }

        self.eta.gemv(1.0, self.cache.x, &beta, 0.0);
        self.eta.add_scalar_mut(beta0);

        let mut pi_ratio = 0.0;
        let mut pi_eta = 0.0;
        for i in 0..self.eta.len() {
            let eta = self.eta[i];
            if eta.abs() > ETA_LIMIT {
                return f64::INFINITY;
            }
            let ratio = self.cache.y[i] * (-eta).exp();
            let w = self.pi[i];
            pi_ratio += w * ratio;
            pi_eta += w * eta;
            self.work[i] = w * shape * (1.0 - ratio);
        }

        let ln_shape = shape.ln();
        let nll = shape * (pi_ratio + pi_eta)
            - (shape - 1.0) * self.pi_ln_y
            - (shape * ln_shape - ln_gamma(shape)) * self.pi_sum;

        let mut value = nll + self.ridge * beta.norm_squared();
        grad[0] = self.work.sum();
        let mut grad_beta = grad.rows_mut(1, p);
        grad_beta.gemv_tr(1.0, self.cache.x, &self.work, 0.0);
        for j in 0..p {
            let b = beta[j];
            value += 0.5
                * self.rho
                * (self.target_sq[j] - 2.0 * b * self.target_sum[j] + self.terms_per_row * b * b);
            grad_beta[j] +=
                2.0 * self.ridge * b - self.rho * (self.target_sum[j] - self.terms_per_row * b);
        }
        grad[p + 1] = if self.fix_dispersion {
            0.0
        } else {
            -2.0 * shape
                * (pi_ratio + pi_eta
                    - self.pi_ln_y
                    - (ln_shape + 1.0 - digamma(shape)) * self.pi_sum)
        };
        value
    }

    /// Minimizes the objective by BFGS starting from `start`.
    pub fn minimize(&mut self, start: &ComponentParams) -> BetaStep {
        let outcome = bfgs::minimize(
            |theta, grad| self.evaluate(theta, grad),
            Self::pack(start),
            &BfgsOptions::default(),
        );
        BetaStep {
            params: Self::unpack(&outcome.x),
            stalled: outcome.stalled && !outcome.converged,
        }
    }
}

fn check_component_shapes(
    data: &Dataset,
    pi_h: &DVector<f64>,
    z: &DMatrix<f64>,
    r: &DMatrix<f64>,
    current: &ComponentParams,
) -> Result<()> {
    let (n, p) = (data.n(), data.p());
    if pi_h.len() != n {
        return Err(Error::Dimension(format!(
            "responsibility column has {} entries for n = {n}",
            pi_h.len()
        )));
    }
    if z.shape() != (p, p) || r.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "ADMM state shapes {:?}/{:?}, expected ({p}, {p})",
            z.shape(),
            r.shape()
        )));
    }
    if current.coefficients.len() != p {
        return Err(Error::Dimension(format!(
            "{} coefficients for p = {p}",
            current.coefficients.len()
        )));
    }
    if !(current.dispersion > 0.0 && current.dispersion.is_finite()) {
        return Err(Error::Domain(format!(
            "dispersion must be positive, got {}",
            current.dispersion
        )));
    }
    Ok(())
}

/// Coefficient step: approximately minimizes the responsibility-weighted
/// negative log-likelihood plus `weight * gamma * ||beta||^2` plus the ADMM
/// quadratic in `(z, r)`, jointly over intercept, coefficients and log
/// dispersion, warm-started from `current`.
pub fn admm_beta_step(
    data: &Dataset,
    pi_h: &DVector<f64>,
    z: &DMatrix<f64>,
    r: &DMatrix<f64>,
    current: &ComponentParams,
    weight: f64,
    config: &FitConfig,
) -> Result<BetaStep> {
    check_component_shapes(data, pi_h, z, r, current)?;
    let cache = ResponseCache::new(data);
    let mut objective =
        BetaObjective::new(&cache, pi_h, Some((z, r)), weight, config.gamma, config.rho);
    Ok(objective.minimize(current))
}

/// Closed-form auxiliary update. For every unordered pair `(j, k)` with
/// `a = beta[j] - r[j,k]` and `b = beta[k] - r[k,j]`, the pair is pulled
/// together by `theta = max(1 - weight*v*s[j,k] / (rho*|a - b|), 1/2)`; at
/// `theta = 1/2` both entries receive the identical midpoint.
pub fn admm_z_step(
    beta: &DVector<f64>,
    r: &DMatrix<f64>,
    sim: &SimilarityMatrix,
    weight: f64,
    v: f64,
    rho: f64,
) -> DMatrix<f64> {
    let p = beta.len();
    let mut z = DMatrix::zeros(p, p);
    for j in 0..p {
        z[(j, j)] = beta[j] - r[(j, j)];
        for k in (j + 1)..p {
            let a = beta[j] - r[(j, k)];
            let b = beta[k] - r[(k, j)];
            let d = (a - b).abs();
            let theta = if d == 0.0 {
                0.5
            } else {
                (1.0 - weight * v * sim.get(j, k) / (rho * d)).max(0.5)
            };
            if theta == 0.5 {
                let mid = 0.5 * a + 0.5 * b;
                z[(j, k)] = mid;
                z[(k, j)] = mid;
            } else {
                z[(j, k)] = theta * a + (1.0 - theta) * b;
                z[(k, j)] = (1.0 - theta) * a + theta * b;
            }
        }
    }
    z
}

/// Scaled dual update `r[j,k] += z[j,k] - beta[j]`.
pub fn admm_r_step(r: &DMatrix<f64>, z: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(r.nrows(), r.ncols(), |j, k| r[(j, k)] + (z[(j, k)] - beta[j]))
}

/// Primal residual `||r_now - r_prev||_F` and dual residual
/// `rho * ||z_now - z_prev||_F`.
pub fn admm_residuals(
    now: (&DMatrix<f64>, &DMatrix<f64>),
    prev: (&DMatrix<f64>, &DMatrix<f64>),
    rho: f64,
) -> (f64, f64) {
    let (z_now, r_now) = now;
    let (z_prev, r_prev) = prev;
    ((r_now - r_prev).norm(), rho * (z_now - z_prev).norm())
}

/// `z[j,k] = beta[j]` for every `k`.
pub(crate) fn broadcast_rows(beta: &DVector<f64>) -> DMatrix<f64> {
    let p = beta.len();
    DMatrix::from_fn(p, p, |j, _| beta[j])
}

/// Augmented Lagrangian of the split component problem in scaled form:
/// `g(beta) + weight*v/2 * sum s|z_jk - z_kj| + rho/2 ||z - beta + r||^2 - rho/2 ||r||^2`,
/// where `g` holds the likelihood and ridge parts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn augmented_lagrangian(
    smooth_part: f64,
    beta: &DVector<f64>,
    z: &DMatrix<f64>,
    r: &DMatrix<f64>,
    sim: &SimilarityMatrix,
    weight: f64,
    v: f64,
    rho: f64,
) -> f64 {
    let p = beta.len();
    let mut fusion = 0.0;
    let mut quad = 0.0;
    for j in 0..p {
        for k in 0..p {
            fusion += sim.get(j, k) * (z[(j, k)] - z[(k, j)]).abs();
            quad += (z[(j, k)] - beta[j] + r[(j, k)]).powi(2) - r[(j, k)].powi(2);
        }
    }
    smooth_part + 0.5 * weight * v * fusion + 0.5 * rho * quad
}

pub(crate) struct ComponentOutcome {
    pub params: ComponentParams,
    pub z: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub record: ComponentRecord,
}

/// Full ADMM loop for one component at fixed responsibilities: starts from
/// `z = beta`, `r = 0` and stops when both residuals are within tolerance or
/// after `config.max_admm` sweeps.
pub(crate) fn fit_component(
    cache: &ResponseCache<'_>,
    pi_h: &DVector<f64>,
    weight: f64,
    start: &ComponentParams,
    sim: &SimilarityMatrix,
    config: &FitConfig,
) -> ComponentOutcome {
    let p = start.coefficients.len();
    let effective_n = pi_h.sum();
    if weight < 1e-6 || effective_n < p as f64 {
        log::warn!(
            "freezing degenerate component (weight {weight:.3e}, effective size {effective_n:.2})"
        );
        return ComponentOutcome {
            z: broadcast_rows(&start.coefficients),
            r: DMatrix::zeros(p, p),
            params: start.clone(),
            record: ComponentRecord {
                admm_iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                admm_converged: false,
                lagrangian: Vec::new(),
                bfgs_stalls: 0,
                frozen: true,
            },
        };
    }

    let mut params = start.clone();
    let mut z = broadcast_rows(&params.coefficients);
    let mut r = DMatrix::zeros(p, p);
    let mut record = ComponentRecord {
        admm_iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        admm_converged: false,
        lagrangian: Vec::with_capacity(config.max_admm),
        bfgs_stalls: 0,
        frozen: false,
    };
    let mut scratch = DVector::zeros(p + 2);

    for _ in 0..config.max_admm {
        let mut objective =
            BetaObjective::new(cache, pi_h, Some((&z, &r)), weight, config.gamma, config.rho);
        let step = objective.minimize(&params);
        if step.stalled {
            record.bfgs_stalls += 1;
        }
        params = step.params;

        let z_next = admm_z_step(&params.coefficients, &r, sim, weight, config.v, config.rho);
        let r_next = admm_r_step(&r, &z_next, &params.coefficients);
        let (pri, dual) = admm_residuals((&z_next, &r_next), (&z, &r), config.rho);
        z = z_next;
        r = r_next;

        let mut smooth = BetaObjective::new(cache, pi_h, None, weight, config.gamma, config.rho);
        let smooth_value = smooth.evaluate(&BetaObjective::pack(&params), &mut scratch);
        record.lagrangian.push(augmented_lagrangian(
            smooth_value,
            &params.coefficients,
            &z,
            &r,
            sim,
            weight,
            config.v,
            config.rho,
        ));
        record.admm_iterations += 1;
        record.primal_residual = pri;
        record.dual_residual = dual;
        if pri <= config.eps_pri && dual <= config.eps_dual {
            record.admm_converged = true;
            break;
        }
    }
    if record.bfgs_stalls > 0 {
        log::debug!("coefficient line search stalled in {} ADMM sweeps", record.bfgs_stalls);
    }
    ComponentOutcome { params, z, r, record }
}
