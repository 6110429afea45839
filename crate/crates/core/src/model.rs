//! Gamma regression components, the finite mixture density and the penalized
//! objective.
//!
//! The Gamma density is parameterized by its mean `mu` and a dispersion `phi`
//! with shape `1/phi^2` and scale `mu * phi^2`, so the variance is
//! `mu^2 * phi^2`. Component means use a log link: `mu = exp(beta0 + x'beta)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest linear predictor magnitude accepted before exponentiation.
pub const ETA_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    mu: f64,
    phi: f64,
}

impl GammaParams {
    pub fn new(mu: f64, phi: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Domain(format!("gamma mean must be positive, got {mu}")));
        }
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::Domain(format!("gamma dispersion must be positive, got {phi}")));
        }
        Ok(Self { mu, phi })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn shape(&self) -> f64 {
        1.0 / (self.phi * self.phi)
    }

    pub fn scale(&self) -> f64 {
        self.mu * self.phi * self.phi
    }
}

/// `log f(y | mu, phi)`.
pub fn gamma_log_density(y: f64, params: &GammaParams) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::Domain(format!("gamma response must be positive, got {y}")));
    }
    Ok(log_density_eta(y, y.ln(), params.mu.ln(), params.phi))
}

/// Log density with the mean given on the log scale. No validation; callers
/// guarantee `y > 0`, finite `eta` and `phi > 0`.
#[inline]
pub(crate) fn log_density_eta(y: f64, ln_y: f64, eta: f64, phi: f64) -> f64 {
    let shape = 1.0 / (phi * phi);
    (shape - 1.0) * ln_y - shape * y * (-eta).exp() - shape * eta + shape * shape.ln()
        - ln_gamma(shape)
}

/// One draw from the Gamma distribution with mean `mu` and dispersion `phi`.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, params: &GammaParams) -> f64 {
    Gamma::new(params.shape(), params.scale()).expect("validated gamma parameters").sample(rng)
}

pub(crate) fn check_eta(eta: f64) -> Result<f64> {
    if eta.is_nan() || eta.abs() > ETA_LIMIT {
        Err(Error::Overflow { eta })
    } else {
        Ok(eta)
    }
}

/// `exp(beta0 + x'beta)`, refusing linear predictors beyond [`ETA_LIMIT`].
pub fn mean_from_linear_predictor(beta0: f64, beta: &[f64], x: &[f64]) -> Result<f64> {
    if beta.len() != x.len() {
        return Err(Error::Dimension(format!(
            "coefficient length {} vs covariate length {}",
            beta.len(),
            x.len()
        )));
    }
    let eta = beta0 + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
    Ok(check_eta(eta)?.exp())
}

/// Mixture parameters: weights, intercepts, a `p x H` coefficient matrix whose
/// column `h` belongs to component `h`, and dispersions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub weights: DVector<f64>,
    pub intercepts: DVector<f64>,
    pub coefficients: DMatrix<f64>,
    pub dispersions: DVector<f64>,
}

impl ParameterSet {
    pub fn new(
        weights: DVector<f64>,
        intercepts: DVector<f64>,
        coefficients: DMatrix<f64>,
        dispersions: DVector<f64>,
    ) -> Result<Self> {
        let params = Self { weights, intercepts, coefficients, dispersions };
        params.validate()?;
        Ok(params)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.weights.len();
        if h == 0 {
            return Err(Error::Dimension("parameter set has no components".into()));
        }
        if self.intercepts.len() != h
            || self.dispersions.len() != h
            || self.coefficients.ncols() != h
        {
            return Err(Error::Dimension(format!(
                "{h} weights but {} intercepts, {} coefficient columns, {} dispersions",
                self.intercepts.len(),
                self.coefficients.ncols(),
                self.dispersions.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Domain("component weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("component weights sum to {total}, not 1")));
        }
        if self.dispersions.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Domain("dispersions must be positive".into()));
        }
        if self.intercepts.iter().chain(self.coefficients.iter()).any(|b| !b.is_finite()) {
            return Err(Error::Domain("regression coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Linear predictor of component `h` at covariates `x`.
    pub fn linear_predictor(&self, h: usize, x: &[f64]) -> f64 {
        self.intercepts[h]
            + self.coefficients.column(h).iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn component_mean(&self, h: usize, x: &[f64]) -> Result<f64> {
        Ok(check_eta(self.linear_predictor(h, x))?.exp())
    }

    /// Reorders components so that new component `i` is old component `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let h = order.len();
        Self {
            weights: DVector::from_fn(h, |i, _| self.weights[order[i]]),
            intercepts: DVector::from_fn(h, |i, _| self.intercepts[order[i]]),
            coefficients: DMatrix::from_fn(self.n_covariates(), h, |j, i| {
                self.coefficients[(j, order[i])]
            }),
            dispersions: DVector::from_fn(h, |i, _| self.dispersions[order[i]]),
        }
    }
}

/// Positive responses with their `n x p` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    responses: DVector<f64>,
    design: DMatrix<f64>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(responses: DVector<f64>, design: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if design.nrows() != responses.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but there are {} responses",
                design.nrows(),
                responses.len()
            )));
        }
        if names.len() != design.ncols() {
            return Err(Error::Dimension(format!(
                "{} column names for {} covariates",
                names.len(),
                design.ncols()
            )));
        }
        if let Some(i) = responses.iter().position(|y| !(y.is_finite() && *y > 0.0)) {
            return Err(Error::Domain(format!(
                "response {i} is {} but responses must be strictly positive",
                responses[i]
            )));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("design matrix contains non-finite values".into()));
        }
        Ok(Self { responses, design, names })
    }

    /// Dataset with default names `x1..xp`.
    pub fn unnamed(responses: DVector<f64>, design: DMatrix<f64>) -> Result<Self> {
        let names = (1..=design.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(responses, design, names)
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.design.row(i).iter().copied().collect()
    }

    /// Rows selected by `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let responses = DVector::from_fn(idx.len(), |r, _| self.responses[idx[r]]);
        let design = DMatrix::from_fn(idx.len(), self.p(), |r, c| self.design[(idx[r], c)]);
        Self { responses, design, names: self.names.clone() }
    }
}

/// Symmetric, nonnegative prior similarity between covariates with a zero
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    entries: DMatrix<f64>,
}

impl SimilarityMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let p = entries.nrows();
        if entries.ncols() != p {
            return Err(Error::Dimension(format!(
                "similarity matrix is {}x{}, expected square",
                p,
                entries.ncols()
            )));
        }
        for j in 0..p {
            if entries[(j, j)] != 0.0 {
                return Err(Error::Domain(format!(
                    "similarity diagonal entry {} is {}, expected 0",
                    j + 1,
                    entries[(j, j)]
                )));
            }
            for k in 0..p {
                let s = entries[(j, k)];
                if !(s.is_finite() && s >= 0.0) {
                    return Err(Error::Domain(format!(
                        "similarity entry ({}, {}) is {s}; entries must be nonnegative",
                        j + 1,
                        k + 1
                    )));
                }
                if s != entries[(k, j)] {
                    return Err(Error::Domain(format!(
                        "similarity matrix is not symmetric at ({}, {})",
                        j + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Like [`SimilarityMatrix::new`] but overwrites the diagonal with zeros.
    pub fn with_zeroed_diagonal(mut entries: DMatrix<f64>) -> Result<Self> {
        let d = entries.nrows().min(entries.ncols());
        for j in 0..d {
            entries[(j, j)] = 0.0;
        }
        Self::new(entries)
    }

    pub fn p(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[(j, k)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Per-component terms `log w_h + log f(y | mu_h(x), phi_h)`.
pub(crate) fn weighted_component_log_densities(
    y: f64,
    x: &[f64],
    params: &ParameterSet,
) -> Result<Vec<f64>> {
    if x.len() != params.n_covariates() {
        return Err(Error::Dimension(format!(
            "covariate vector of length {} for a model with p = {}",
            x.len(),
            params.n_covariates()
        )));
    }
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::Domain(format!("gamma response must be positive, got {y}")));
    }
    let ln_y = y.ln();
    (0..params.n_components())
        .map(|h| {
            let eta = check_eta(params.linear_predictor(h, x))?;
            Ok(params.weights[h].ln() + log_density_eta(y, ln_y, eta, params.dispersions[h]))
        })
        .collect()
}

/// `log sum_h w_h f(y | mu_h(x), phi_h)` via log-sum-exp.
pub fn mixture_log_density(y: f64, x: &[f64], params: &ParameterSet) -> Result<f64> {
    let terms = weighted_component_log_densities(y, x, params)?;
    Ok(log_sum_exp(&terms))
}

/// Unpenalized mixture log-likelihood over the whole sample.
pub fn log_likelihood(data: &Dataset, params: &ParameterSet) -> Result<f64> {
    check_dims(data, params)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        total += mixture_log_density(data.responses[i], &data.row(i), params)?;
    }
    Ok(total)
}

/// `gamma * sum_h w_h ||beta_h||^2`.
pub fn ridge_penalty(params: &ParameterSet, gamma: f64) -> f64 {
    (0..params.n_components())
        .map(|h| params.weights[h] * params.coefficients.column(h).norm_squared())
        .sum::<f64>()
        * gamma
}

/// `v/2 * sum_h w_h sum_{j,k} s_jk |beta_jh - beta_kh|` over all ordered pairs.
pub fn fusion_penalty(params: &ParameterSet, sim: &SimilarityMatrix, v: f64) -> f64 {
    let p = params.n_covariates();
    let mut total = 0.0;
    for h in 0..params.n_components() {
        let beta = params.coefficients.column(h);
        let mut inner = 0.0;
        for j in 0..p {
            for k in 0..p {
                inner += sim.get(j, k) * (beta[j] - beta[k]).abs();
            }
        }
        total += params.weights[h] * inner;
    }
    0.5 * v * total
}

/// Log-likelihood minus the ridge and similarity-weighted fusion penalties.
pub fn penalized_objective(
    data: &Dataset,
    params: &ParameterSet,
    sim: &SimilarityMatrix,
    gamma: f64,
    v: f64,
) -> Result<f64> {
    check_dims(data, params)?;
    if sim.p() != data.p() {
        return Err(Error::Dimension(format!(
            "similarity matrix is {0}x{0} but the data has p = {1}",
            sim.p(),
            data.p()
        )));
    }
    if !(gamma >= 0.0 && v >= 0.0) {
        return Err(Error::Domain(format!(
            "penalties must be nonnegative (gamma = {gamma}, v = {v})"
        )));
    }
    Ok(log_likelihood(data, params)?
        - ridge_penalty(params, gamma)
        - fusion_penalty(params, sim, v))
}

pub(crate) fn check_dims(data: &Dataset, params: &ParameterSet) -> Result<()> {
    if data.p() != params.n_covariates() {
        return Err(Error::Dimension(format!(
            "data has p = {} covariates but the model has p = {}",
            data.p(),
            params.n_covariates()
        )));
    }
    Ok(())
}
