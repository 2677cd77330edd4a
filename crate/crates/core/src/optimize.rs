//! Small dense Levenberg-Marquardt solver with a finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub gradient_tol: f64,
    /// Stop when a step changes no parameter by more than this (relative).
    pub step_tol: f64,
    /// Stop when the cost falls below this.
    pub cost_tol: f64,
    /// Finite-difference step (relative, with an absolute floor of the same size).
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-12,
            step_tol: 1e-13,
            cost_tol: 1e-30,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub x: DVector<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn jacobian<F>(f: &F, x: &DVector<f64>, r0: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut j = DMatrix::zeros(r0.len(), x.len());
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        let d = (f(&xp) - f(&xm)) / (2.0 * step);
        j.set_column(k, &d);
    }
    j
}

/// Minimizes `½‖f(x)‖²`. Returns the best point even when the stopping
/// criteria were not met; `converged` reports which case applies.
pub fn levenberg_marquardt<F>(f: F, x0: DVector<f64>, opts: &LmOptions) -> LmResult
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0;
    let mut r = f(&x);
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = 1e-3;
    let mut grad_norm = f64::INFINITY;
    for it in 0..opts.max_iterations {
        if cost <= opts.cost_tol {
            return LmResult { x, cost, gradient_norm: 0.0, iterations: it, converged: true };
        }
        let j = jacobian(&f, &x, &r, opts.fd_step);
        let g = j.transpose() * &r;
        grad_norm = g.amax();
        if grad_norm <= opts.gradient_tol {
            return LmResult { x, cost, gradient_norm: grad_norm, iterations: it, converged: true };
        }
        let jtj = j.transpose() * &j;
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let xn = &x + &step;
            let rn = f(&xn);
            let cn = 0.5 * rn.norm_squared();
            if cn.is_finite() && cn < cost {
                let small = step.iter().zip(x.iter()).all(|(s, v)| s.abs() <= opts.step_tol * v.abs().max(1.0));
                x = xn;
                r = rn;
                cost = cn;
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                if small {
                    return LmResult { x, cost, gradient_norm: grad_norm, iterations: it + 1, converged: true };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction improves the cost at working precision
            return LmResult { x, cost, gradient_norm: grad_norm, iterations: it + 1, converged: true };
        }
    }
    LmResult {
        x,
        cost,
        gradient_norm: grad_norm,
        iterations: opts.max_iterations,
        converged: false,
    }
}

/// Converts an unconverged result into the corresponding error.
pub fn require_converged(r: LmResult) -> Result<LmResult> {
    if r.converged {
        Ok(r)
    } else {
        Err(Error::NotConverged {
            iterations: r.iterations,
            gradient_norm: r.gradient_norm,
            residual: (2.0 * r.cost).sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let r = levenberg_marquardt(f, DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8, "{:?}", r.x);
    }

    #[test]
    fn exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-1.3 * t).exp() + 0.4).collect();
        let f = |p: &DVector<f64>| DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y));
        let r = levenberg_marquardt(f, DVector::from_vec(vec![1.0, 1.0, 0.0]), &LmOptions::default());
        assert!((r.x[0] - 2.5).abs() < 1e-7 && (r.x[1] - 1.3).abs() < 1e-7 && (r.x[2] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let opts = LmOptions { max_iterations: 2, ..LmOptions::default() };
        let r = levenberg_marquardt(f, DVector::from_vec(vec![-1.2, 1.0]), &opts);
        assert!(!r.converged);
        assert!(matches!(require_converged(r), Err(Error::NotConverged { iterations: 2, .. })));
    }
}
