//! Goodness-of-fit, predictive and discrimination metrics for a fitted
//! mixture: NLL, pseudo R², MSE, CRPS, decile lift and quantile residuals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::model::{check_dims, log_likelihood, Dataset, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nll: f64,
    pub pseudo_r2: f64,
    pub mse: f64,
    pub mcrps: f64,
    pub lift: f64,
}

/// Predictive mixture at one covariate row: `(weight, shape, scale)` per
/// component.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureAt {
    parts: Vec<(f64, f64, f64)>,
}

impl MixtureAt {
    pub fn new(x: &[f64], params: &ParameterSet) -> Result<Self> {
        if x.len() != params.n_covariates() {
            return Err(Error::Dimension(format!(
                "covariate row has {} entries, model has p = {}",
                x.len(),
                params.n_covariates()
            )));
        }
        let mut parts = Vec::with_capacity(params.n_components());
        for h in 0..params.n_components() {
            let mu = params.component_mean(h, x)?;
            let phi2 = params.dispersions[h].powi(2);
            parts.push((params.weights[h], 1.0 / phi2, mu * phi2));
        }
        Ok(Self { parts })
    }

    pub fn mean(&self) -> f64 {
        self.parts.iter().map(|(w, k, s)| w * k * s).sum()
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        if z == f64::INFINITY {
            return 1.0;
        }
        self.parts.iter().map(|&(w, k, s)| w * gamma_lr(k, z / s)).sum()
    }

    /// `1 - cdf(z)` without cancellation in the upper tail.
    pub fn survival(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 1.0;
        }
        if z == f64::INFINITY {
            return 0.0;
        }
        self.parts.iter().map(|&(w, k, s)| w * gamma_ur(k, z / s)).sum()
    }

    /// Smallest `z` with `cdf(z) >= prob`, by bisection to relative width
    /// 1e-14.
    pub fn quantile(&self, prob: f64) -> f64 {
        if prob <= 0.0 {
            return 0.0;
        }
        if prob >= 1.0 {
            return f64::INFINITY;
        }
        let upper_tail = prob > 0.5;
        let below = |z: f64| {
            if upper_tail {
                self.survival(z) > 1.0 - prob
            } else {
                self.cdf(z) < prob
            }
        };
        let mut hi = self.mean().max(f64::MIN_POSITIVE);
        while below(hi) {
            hi *= 2.0;
        }
        let mut lo = hi;
        while lo > f64::MIN_POSITIVE && !below(lo) {
            lo *= 0.5;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if below(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        hi
    }
}

/// `sum_h w_h mu_h(x)`.
pub fn point_prediction(x: &[f64], params: &ParameterSet) -> Result<f64> {
    let mut total = 0.0;
    for h in 0..params.n_components() {
        total += params.weights[h] * params.component_mean(h, x)?;
    }
    Ok(total)
}

pub fn predictions(data: &Dataset, params: &ParameterSet) -> Result<DVector<f64>> {
    check_dims(data, params)?;
    let mut out = DVector::zeros(data.n());
    for i in 0..data.n() {
        out[i] = point_prediction(&data.row(i), params)?;
    }
    Ok(out)
}

/// Gamma deviance R²: one minus the deviance of `yhat` over the deviance of
/// the mean-only fit.
pub fn pseudo_r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "{} responses vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if let Some(v) = y.iter().chain(yhat).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("responses and predictions must be positive, got {v}")));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let deviance = |fit: &dyn Fn(usize) -> f64| -> f64 {
        (0..y.len()).map(|i| (y[i] / fit(i)).ln() - (y[i] - fit(i)) / fit(i)).sum()
    };
    // The null deviance keeps its (mathematically zero) linear term so that
    // a constant prediction equal to the mean reproduces it bit for bit.
    let null = deviance(&|_| mean);
    if null == 0.0 {
        return Err(Error::UndefinedMetric("pseudo R² needs a non-constant response".into()));
    }
    Ok(1.0 - deviance(&|i| yhat[i]) / null)
}

/// Ratio of the mean response in the top prediction decile to that in the
/// bottom decile. Ties in `yhat` are broken by index; the `n mod 10`
/// leftover observations go one each to the lowest groups.
pub fn lift(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!(
            "{} responses vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let n = y.len();
    if n < 10 {
        return Err(Error::UndefinedMetric(format!(
            "lift needs at least 10 observations, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| yhat[a].total_cmp(&yhat[b]).then(a.cmp(&b)));
    let base = n / 10;
    let extra = n % 10;
    let bottom_len = base + usize::from(extra > 0);
    let top_len = base;
    let mean = |idx: &[usize]| idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    let bottom = mean(&order[..bottom_len]);
    let top = mean(&order[n - top_len..]);
    if bottom == 0.0 {
        return Err(Error::UndefinedMetric("bottom decile has zero mean response".into()));
    }
    Ok(top / bottom)
}

const QUAD_TOL: f64 = 1e-6;
const QUAD_MAX_INTERVALS: usize = 2000;
const BREAK_PROBS: [f64; 10] = [1e-8, 1e-3, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999];

/// `int_0^inf (F(z|x) - 1{y <= z})^2 dz` for the predictive mixture, by
/// adaptive Gauss-Kronrod quadrature split at `y` and at mixture quantiles.
pub fn crps(y: f64, x: &[f64], params: &ParameterSet) -> Result<f64> {
    crps_mixture(y, &MixtureAt::new(x, params)?)
}

pub fn crps_mixture(y: f64, mix: &MixtureAt) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::Domain(format!("response must be positive, got {y}")));
    }
    let upper = mix.quantile(1.0 - 1e-8).max(y);
    let mut points: Vec<f64> = BREAK_PROBS.iter().map(|&p| mix.quantile(p)).collect();
    points.extend([0.0, y, upper]);
    points.retain(|p| (0.0..=upper).contains(p));
    points.sort_by(f64::total_cmp);
    points.dedup();

    let integrand = |z: f64| {
        if z < y {
            mix.cdf(z).powi(2)
        } else {
            mix.survival(z).powi(2)
        }
    };
    let mut total = 0.0;
    let mut achieved = 0.0;
    for w in points.windows(2) {
        let (value, err) = adaptive_gk15(&integrand, w[0], w[1], QUAD_TOL / points.len() as f64)?;
        total += value;
        achieved += err;
    }
    if achieved > QUAD_TOL {
        return Err(Error::Quadrature { achieved });
    }
    Ok(total)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = half * XGK[i];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive bisection: repeatedly splits the subinterval with the
/// largest error estimate until the summed estimate meets `tol`.
fn adaptive_gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let (value, err) = gk15(f, a, b);
    let mut heap = BinaryHeap::from([Piece { a, b, value, err }]);
    let mut total_err = err;
    while total_err > tol {
        if heap.len() >= QUAD_MAX_INTERVALS {
            return Err(Error::Quadrature { achieved: total_err });
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Quadrature { achieved: total_err });
        }
        let (lv, le) = gk15(f, worst.a, mid);
        let (rv, re) = gk15(f, mid, worst.b);
        total_err += le + re - worst.err;
        heap.push(Piece { a: worst.a, b: mid, value: lv, err: le });
        heap.push(Piece { a: mid, b: worst.b, value: rv, err: re });
    }
    Ok((heap.iter().map(|p| p.value).sum(), heap.iter().map(|p| p.err).sum()))
}

/// `Phi^{-1}(F(y_i | x_i))` for each observation, with `F` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn quantile_residuals(data: &Dataset, params: &ParameterSet) -> Result<DVector<f64>> {
    check_dims(data, params)?;
    let normal = Normal::standard();
    let mut out = DVector::zeros(data.n());
    let mut clamped = 0usize;
    for i in 0..data.n() {
        let mix = MixtureAt::new(&data.row(i), params)?;
        let y = data.responses()[i];
        // evaluate the smaller tail directly for accuracy
        let lower = mix.cdf(y);
        let u = if lower > 0.5 { 1.0 - mix.survival(y) } else { lower };
        let c = u.clamp(1e-12, 1.0 - 1e-12);
        if c != u {
            clamped += 1;
        }
        out[i] = normal.inverse_cdf(c);
    }
    if clamped > 0 {
        log::warn!("{clamped} quantile residuals clamped at probability 1e-12 from the boundary");
    }
    Ok(out)
}

/// All metrics of `params` on `data`.
pub fn report(data: &Dataset, params: &ParameterSet) -> Result<MetricReport> {
    let yhat = predictions(data, params)?;
    let y = data.responses();
    let n = data.n() as f64;
    let mut crps_sum = 0.0;
    for i in 0..data.n() {
        crps_sum += crps(y[i], &data.row(i), params)?;
    }
    Ok(MetricReport {
        nll: -log_likelihood(data, params)?,
        pseudo_r2: pseudo_r2(y.as_slice(), yhat.as_slice())?,
        mse: (y - &yhat).norm_squared() / n,
        mcrps: crps_sum / n,
        lift: lift(y.as_slice(), yhat.as_slice())?,
    })
}
