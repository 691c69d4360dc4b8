//! Central finite-difference checks for the solver gradients. These only
//! go through [`Problem::loss`], so they stay independent of the analytic
//! gradient code they arbitrate.

use crate::error::Result;
use crate::solver::{ModelState, Problem};
use nalgebra::DMatrix;

/// Central finite differences of the loss with respect to C, using a
/// per-entry step h = base_h * (1 + |C_ij|).
pub fn fd_grad_c(problem: &Problem, state: &ModelState, base_h: f64) -> Result<DMatrix<f64>> {
    let n = state.c.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut probe = state.clone();
    for j in 0..n {
        for i in 0..n {
            let orig = state.c[(i, j)];
            let h = base_h * (1.0 + orig.abs());
            probe.c[(i, j)] = orig + h;
            let plus = problem.loss(&probe)?;
            probe.c[(i, j)] = orig - h;
            let minus = problem.loss(&probe)?;
            probe.c[(i, j)] = orig;
            out[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Central finite differences of the loss with respect to W, restricted
/// to the H pattern (off-pattern entries never influence the loss).
pub fn fd_grad_w(problem: &Problem, state: &ModelState, base_h: f64) -> Result<DMatrix<f64>> {
    let n = state.w.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut probe = state.clone();
    for i in 0..n {
        for &j in &problem.neighbor_model().neighbors[i].clone() {
            let orig = state.w[(i, j)];
            let h = base_h * (1.0 + orig.abs());
            probe.w[(i, j)] = orig + h;
            let plus = problem.loss(&probe)?;
            probe.w[(i, j)] = orig - h;
            let minus = problem.loss(&probe)?;
            probe.w[(i, j)] = orig;
            out[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Largest entry-wise relative deviation between two gradients, with the
/// denominator floored at 1 so that near-zero entries compare absolutely.
pub fn max_relative_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(1.0))
        .fold(0.0_f64, f64::max)
}

/// Outcome of one full gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err_c: f64,
    pub max_rel_err_w: f64,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.max_rel_err_c.max(self.max_rel_err_w)
    }
}

/// Compare both analytic gradients against central finite differences at
/// the given state.
pub fn check_gradients(problem: &Problem, state: &ModelState, base_h: f64) -> Result<GradCheck> {
    let gc = problem.grad_c(state)?;
    let gw = problem.grad_w(state)?;
    let fc = fd_grad_c(problem, state, base_h)?;
    let fw = fd_grad_w(problem, state, base_h)?;
    Ok(GradCheck {
        max_rel_err_c: max_relative_error(&gc, &fc),
        max_rel_err_w: max_relative_error(&gw, &fw),
    })
}
