//! Dense BFGS with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop once the gradient infinity-norm falls to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Step halvings allowed before the line search gives up.
    pub max_backtracks: usize,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Relative size of objective changes treated as rounding noise.
    pub noise_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iter: 200, max_backtracks: 60, armijo: 1e-4, noise_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search could not reduce the objective; `x` is the last
    /// accepted iterate.
    pub stalled: bool,
}

/// Minimizes `objective`, which returns the value at `x` and writes the
/// gradient into its second argument. Non-finite values are treated as
/// infeasible and shrink the step.
pub fn minimize<F>(mut objective: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = DVector::zeros(n);
    let mut value = objective(&x, &mut grad);
    if !value.is_finite() {
        return BfgsOutcome {
            grad_norm: f64::INFINITY,
            x,
            value,
            iterations: 0,
            converged: false,
            stalled: true,
        };
    }

    let mut inv_hess = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trial = DVector::zeros(n);
    let mut trial_grad = DVector::zeros(n);
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < opts.max_iter {
        if grad.amax() <= opts.grad_tol {
            break;
        }
        let mut dir = -(&inv_hess * &grad);
        let mut slope = grad.dot(&dir);
        if slope.is_nan() || slope >= 0.0 {
            inv_hess.fill_with_identity();
            fresh = true;
            dir = -grad.clone();
            slope = grad.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            trial.copy_from(&x);
            trial.axpy(step, &dir, 1.0);
            let v = objective(&trial, &mut trial_grad);
            if v.is_finite() && v <= value + opts.armijo * step * slope {
                accepted = Some(v);
                break;
            }
            // Near the optimum the Armijo decrease drops below the rounding
            // error of the objective; fall back to the approximate Wolfe test
            // of Hager and Zhang, which judges the step by the slope instead.
            if v.is_finite() && v <= value + opts.noise_tol * value.abs() {
                let trial_slope = trial_grad.dot(&dir);
                if trial_slope >= 0.9 * slope && trial_slope <= -0.8 * slope {
                    accepted = Some(v);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(new_value) = accepted else {
            stalled = true;
            break;
        };
        iterations += 1;

        let s = &trial - &x;
        let y = &trial_grad - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                // rescale the identity before the first update
                inv_hess *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &inv_hess * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (H y s' + s y' H) + (rho^2 y'Hy + rho) s s'
            inv_hess.ger(-rho, &hy, &s, 1.0);
            inv_hess.ger(-rho, &s, &hy, 1.0);
            inv_hess.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }

        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = new_value;
    }

    let grad_norm = grad.amax();
    BfgsOutcome { converged: grad_norm <= opts.grad_tol, x, value, grad_norm, iterations, stalled }
}
