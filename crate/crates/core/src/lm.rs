//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

/// A least-squares problem `min Σ r_i(x)^2`.
pub trait LeastSquares {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Residuals and Jacobian at `x`. The default uses central differences.
    fn residuals_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let r = self.residuals(x);
        let mut jac = DMatrix::zeros(r.len(), x.len());
        let mut probe = x.clone();
        for p in 0..x.len() {
            let h = 1e-6 * x[p].abs().max(1.0);
            probe[p] = x[p] + h;
            let plus = self.residuals(&probe);
            probe[p] = x[p] - h;
            let minus = self.residuals(&probe);
            probe[p] = x[p];
            jac.set_column(p, &((plus - minus) / (2.0 * h)));
        }
        (r, jac)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LmConfig {
    pub max_iter: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_rel_tol: f64,
    /// Stop when max |J^T r| falls below this.
    pub grad_tol: f64,
    /// Stop when the cost falls below this absolute value.
    pub cost_floor: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            cost_rel_tol: 1e-12,
            grad_tol: 1e-12,
            cost_floor: 1e-28,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    CostDecrease,
    Gradient,
    CostFloor,
    /// Damping grew without finding a descent step: stationary to machine precision.
    Stalled,
    NonFinite,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    /// Σ r_i^2 at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

impl LmOutcome {
    pub fn converged(&self) -> bool {
        !matches!(self.reason, StopReason::MaxIterations | StopReason::NonFinite)
    }
}

pub fn minimize<P: LeastSquares + ?Sized>(problem: &P, x0: DVector<f64>, cfg: &LmConfig) -> LmOutcome {
    let mut x = x0;
    let (mut r, mut jac) = problem.residuals_and_jacobian(&x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;

    let reason = loop {
        if !cost.is_finite() {
            break StopReason::NonFinite;
        }
        if cost <= cfg.cost_floor {
            break StopReason::CostFloor;
        }
        let grad = jac.tr_mul(&r);
        if grad.amax() <= cfg.grad_tol {
            break StopReason::Gradient;
        }
        if iterations >= cfg.max_iter {
            break StopReason::MaxIterations;
        }
        iterations += 1;

        let normal = jac.tr_mul(&jac);
        let diag_max = normal.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut accepted = None;
        while lambda < 1e16 {
            let mut damped = normal.clone();
            for p in 0..damped.nrows() {
                damped[(p, p)] += lambda * normal[(p, p)].max(1e-12 * diag_max);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 4.0;
                    continue;
                }
            };
            let candidate = &x + &step;
            let r_new = problem.residuals(&candidate);
            let c_new = r_new.norm_squared();
            if c_new.is_finite() && c_new < cost {
                lambda = (lambda / 3.0).max(1e-12);
                accepted = Some((candidate, c_new));
                break;
            }
            lambda *= 4.0;
        }
        let Some((candidate, c_new)) = accepted else {
            break StopReason::Stalled;
        };
        let rel = (cost - c_new) / cost;
        x = candidate;
        let (r_new, j_new) = problem.residuals_and_jacobian(&x);
        r = r_new;
        jac = j_new;
        cost = c_new;
        if rel < cfg.cost_rel_tol {
            break StopReason::CostDecrease;
        }
    };

    LmOutcome {
        x,
        cost,
        iterations,
        reason,
    }
}
