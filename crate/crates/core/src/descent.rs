//! Local descent from a starting point. Finds a critical point only; used as
//! a baseline and to polish candidate points.

use nalgebra::DVector;

use crate::error::Result;
use crate::model::CqrProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Stop once `‖∇M‖ ≤ tol_grad·(1 + ‖g‖)`.
    pub tol_grad: f64,
    /// Take Newton steps where the Hessian is positive definite.
    pub newton: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions { max_iter: 10_000, tol_grad: 1e-10, newton: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub point: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Backtracking line search along `−∇M`, or the Newton direction when
/// enabled and available.
pub fn local_descent(problem: &CqrProblem, start: &DVector<f64>, opts: &DescentOptions) -> Result<DescentResult> {
    let mut s = start.clone();
    let mut f = problem.evaluate(&s)?;
    let mut grad = problem.gradient(&s)?;
    let stop = opts.tol_grad * (1.0 + problem.g.norm());
    let mut t_prev = 1.0f64;
    let mut iterations = 0;
    while iterations < opts.max_iter && grad.norm() > stop {
        iterations += 1;
        let newton = if opts.newton {
            problem
                .hessian(&s)
                .ok()
                .and_then(|h| h.cholesky())
                .map(|c| -c.solve(&grad))
                .filter(|d| d.dot(&grad) < 0.0)
        } else {
            None
        };
        let is_newton = newton.is_some();
        let dir = newton.unwrap_or_else(|| -&grad);
        let slope = dir.dot(&grad);
        // Gradient steps restart from twice the last accepted length.
        let mut t = if is_newton { 1.0 } else { (2.0 * t_prev).min(1e6) };
        let mut accepted = false;
        if is_newton {
            // Close to a minimizer the decrease drops below the rounding
            // level of M; a full step that shrinks the gradient is taken.
            let trial = &s + &dir;
            let gt = problem.gradient(&trial)?;
            if gt.norm() < 0.5 * grad.norm() && problem.evaluate(&trial)? <= f + 1e-12 * (1.0 + f.abs()) {
                f = problem.evaluate(&trial)?;
                s = trial;
                grad = gt;
                continue;
            }
        }
        for _ in 0..80 {
            let trial = &s + &dir * t;
            let ft = problem.evaluate(&trial)?;
            if ft <= f + 1e-4 * t * slope {
                s = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if !is_newton {
            t_prev = t;
        }
        grad = problem.gradient(&s)?;
    }
    Ok(DescentResult { grad_norm: grad.norm(), point: s, value: f, iterations })
}
