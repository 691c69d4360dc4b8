//! The MLC-PPF learner: localized correlation learning with an adaptive
//! neighbor weight, optional multi-view guidance, normalized-gradient
//! updates, and iterative fill-in of unobserved entries.
//!
//! The objective over D daily flow matrices and V feature views is
//!
//! ```text
//! L(C, W) = 1/2 sum_d || F_d - (H (*) W) F_d C ||_F^2
//!         + lambda/2 sum_v || X_v - C X_v^k ||_F^2,     X_v^k = H X_v
//! ```
//!
//! with observed entries of every F_d held fixed throughout. Gradients
//! are derived from this objective directly (the published closed forms
//! drop the localization of X_v in the guidance term and the outer
//! H-projection on the weight gradient; a finite-difference check
//! arbitrates — see `gradcheck`):
//!
//! ```text
//! gC = sum_d ((H (*) W) F_d)^T ((H (*) W) F_d C - F_d)
//!    + lambda sum_v (C X_v^k X_v^kT - X_v X_v^kT)
//! gW = sum_d H (*) ( ((H (*) W) F_d C - F_d) C^T F_d^T )
//! ```

use crate::core::{FlowTensor, ObservationMask, SolverConfig, ViewSet};
use crate::error::{Error, Result};
use crate::linalg::{localized_product, pinv};
use crate::neighborhood::NeighborModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Mutable optimization state for one fitting pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Correlation matrix mapping localized flows to flows.
    pub c: DMatrix<f64>,
    /// Adaptive neighbor weights; only the H pattern is ever active.
    pub w: DMatrix<f64>,
    /// Working flow copies: observed entries pinned to the input,
    /// unobserved entries iteratively filled.
    pub f_work: Vec<DMatrix<f64>>,
    /// Iterations applied so far.
    pub iteration: usize,
}

/// Why the fit loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Relative loss change fell below epsilon.
    Converged,
    /// Iteration budget exhausted.
    MaxIter,
    /// Both gradients vanished; the state is a stationary point.
    ZeroGradient,
}

/// Fit trajectory summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub final_loss: f64,
    /// Loss after initialization followed by the loss after each iteration.
    pub loss_history: Vec<f64>,
    pub stop_reason: StopReason,
    /// Iterations in which the C (resp. W) update was skipped because its
    /// gradient norm was exactly zero while the other variable still moved.
    pub zero_grad_c_steps: usize,
    pub zero_grad_w_steps: usize,
}

/// An immutable fitting problem: flows, neighbor structure, mask, views,
/// and the guidance weight, with view products precomputed.
#[derive(Debug, Clone)]
pub struct Problem {
    flows: FlowTensor,
    nbr: NeighborModel,
    mask: ObservationMask,
    lambda: f64,
    /// View feature matrices X_v.
    views: Vec<DMatrix<f64>>,
    /// Localized views X_v^k = H X_v.
    xk: Vec<DMatrix<f64>>,
    /// sum_v X_v^k X_v^kT.
    guide_a: DMatrix<f64>,
    /// sum_v X_v X_v^kT.
    guide_b: DMatrix<f64>,
    /// sum_v ||X_v||_F^2.
    view_sq_norm: f64,
}

impl Problem {
    pub fn new(
        flows: FlowTensor,
        nbr: NeighborModel,
        views: &ViewSet,
        mask: ObservationMask,
        lambda: f64,
    ) -> Result<Problem> {
        let n = flows.n();
        if flows.days() == 0 {
            return Err(Error::InvalidArgument("flow tensor has no days".into()));
        }
        if nbr.h.nrows() != n || mask.n() != n {
            return Err(Error::Dimension(format!(
                "flows are {n}x{n} but H is {}x{} and Y is {}x{}",
                nbr.h.nrows(),
                nbr.h.ncols(),
                mask.n(),
                mask.n()
            )));
        }
        for m in &flows.matrices {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension("ragged flow tensor".into()));
            }
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }

        let mut xk = Vec::with_capacity(views.len());
        let mut guide_a = DMatrix::zeros(n, n);
        let mut guide_b = DMatrix::zeros(n, n);
        let mut view_sq_norm = 0.0;
        for x in &views.views {
            if x.nrows() != n {
                return Err(Error::Dimension(format!(
                    "view has {} rows, expected {n}",
                    x.nrows()
                )));
            }
            let xkv = &nbr.h * x;
            guide_a.gemm(1.0, &xkv, &xkv.transpose(), 1.0);
            guide_b.gemm(1.0, x, &xkv.transpose(), 1.0);
            view_sq_norm += x.norm_squared();
            xk.push(xkv);
        }

        Ok(Problem {
            flows,
            nbr,
            mask,
            lambda,
            views: views.views.clone(),
            xk,
            guide_a,
            guide_b,
            view_sq_norm,
        })
    }

    pub fn n(&self) -> usize {
        self.flows.n()
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn neighbor_model(&self) -> &NeighborModel {
        &self.nbr
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Localized views X_v^k = H X_v.
    pub fn localized_views(&self) -> &[DMatrix<f64>] {
        &self.xk
    }

    /// Build the starting state: W from the supplied initial weights
    /// (Algorithm-style W <- S), unobserved flow entries zeroed, and C
    /// from the masked pseudo-inverse solve on the last day,
    /// C = pinv(Y (*) ((H (*) W) F_D)) (Y (*) F_D).
    pub fn initial_state(&self, w0: &DMatrix<f64>) -> Result<ModelState> {
        let n = self.n();
        if w0.nrows() != n || w0.ncols() != n {
            return Err(Error::Dimension(format!(
                "initial weight matrix is {}x{}, expected {n}x{n}",
                w0.nrows(),
                w0.ncols()
            )));
        }
        let f_work: Vec<DMatrix<f64>> =
            self.flows.matrices.iter().map(|f| f.component_mul(&self.mask.y)).collect();
        let c = init_c(f_work.last().expect("checked non-empty"), &self.nbr, w0, &self.mask)?;
        Ok(ModelState { c, w: w0.clone(), f_work, iteration: 0 })
    }

    /// Objective value at `state`. Errors if any intermediate is
    /// non-finite, which signals divergence.
    pub fn loss(&self, state: &ModelState) -> Result<f64> {
        let mut total = 0.0;
        for f in &state.f_work {
            let g = localized_product(&self.nbr, &state.w, f);
            let p = &g * &state.c;
            total += 0.5 * (f - p).norm_squared();
        }
        if self.lambda > 0.0 {
            for (x, xkv) in self.views.iter().zip(&self.xk) {
                total += 0.5 * self.lambda * (x - &state.c * xkv).norm_squared();
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite { context: "loss", iteration: state.iteration });
        }
        Ok(total)
    }

    /// Analytic gradient of the objective with respect to C.
    pub fn grad_c(&self, state: &ModelState) -> Result<DMatrix<f64>> {
        let n = self.n();
        let mut gc = DMatrix::zeros(n, n);
        for f in &state.f_work {
            let g = localized_product(&self.nbr, &state.w, f);
            let r = &g * &state.c - f;
            gc.gemm_tr(1.0, &g, &r, 1.0);
        }
        if self.lambda > 0.0 && !self.xk.is_empty() {
            gc.gemm(self.lambda, &state.c, &self.guide_a, 1.0);
            gc -= &self.guide_b * self.lambda;
        }
        if gc.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "grad_c", iteration: state.iteration });
        }
        Ok(gc)
    }

    /// Analytic gradient of the objective with respect to W; supported
    /// only on the H pattern.
    pub fn grad_w(&self, state: &ModelState) -> Result<DMatrix<f64>> {
        let n = self.n();
        let ct = state.c.transpose();
        let mut gw = DMatrix::zeros(n, n);
        for f in &state.f_work {
            let g = localized_product(&self.nbr, &state.w, f);
            let r = &g * &state.c - f;
            let m = &r * &ct;
            accumulate_pattern_dots(&self.nbr, &m, f, &mut gw);
        }
        if gw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "grad_w", iteration: state.iteration });
        }
        Ok(gw)
    }

    /// One normalized-gradient update: each variable moves by
    /// alpha * g / ||g||_F; a variable whose gradient norm is zero is left
    /// unchanged.
    pub fn step(
        &self,
        state: &mut ModelState,
        gc: &DMatrix<f64>,
        gw: &DMatrix<f64>,
        alpha: f64,
    ) -> StepOutcome {
        let gc_norm = gc.norm();
        let gw_norm = gw.norm();
        if gc_norm > 0.0 {
            state.c -= gc * (alpha / gc_norm);
        }
        if gw_norm > 0.0 {
            state.w -= gw * (alpha / gw_norm);
        }
        StepOutcome { c_moved: gc_norm > 0.0, w_moved: gw_norm > 0.0 }
    }

    /// Replace unobserved entries of every working day with the model's
    /// current reconstruction, leaving observed entries bit-identical:
    /// F <- Y (*) F + (1 - Y) (*) ((H (*) W) F C).
    pub fn fill_unobserved(&self, state: &mut ModelState) {
        let n = self.n();
        for f in &mut state.f_work {
            let g = localized_product(&self.nbr, &state.w, f);
            let p = g * &state.c;
            for c in 0..n {
                for r in 0..n {
                    if self.mask.y[(r, c)] == 0.0 {
                        f[(r, c)] = p[(r, c)];
                    }
                }
            }
        }
    }

    /// Prediction at unobserved entries for the last working day:
    /// (1 - Y) (*) ((H (*) W) F_D C), clamped at zero. Observed positions
    /// are zero in the returned matrix.
    pub fn predict(&self, state: &ModelState) -> DMatrix<f64> {
        predict_from(
            &state.c,
            &state.w,
            &self.nbr,
            &self.mask,
            state.f_work.last().expect("non-empty"),
        )
    }

    /// Run the full fitting loop from the given initial weights.
    pub fn fit(&self, w0: &DMatrix<f64>, cfg: &SolverConfig) -> Result<(ModelState, FitReport)> {
        let mut state = self.initial_state(w0)?;
        let mut history = Vec::with_capacity(cfg.max_iters.min(4096) + 1);

        let eval = self.loss_and_grads(&state)?;
        let mut prev_loss = eval.loss;
        history.push(prev_loss);
        let mut grads = Some((eval.gc, eval.gw));

        // An infinite tolerance can never be exceeded by a finite loss
        // change, so the loop cannot even start.
        if cfg.epsilon.is_infinite() {
            let report = FitReport {
                iterations: 0,
                final_loss: prev_loss,
                loss_history: history,
                stop_reason: StopReason::Converged,
                zero_grad_c_steps: 0,
                zero_grad_w_steps: 0,
            };
            return Ok((state, report));
        }

        let mut stop_reason = StopReason::MaxIter;
        let mut zero_grad_c_steps = 0;
        let mut zero_grad_w_steps = 0;

        for t in 1..=cfg.max_iters {
            if prev_loss == 0.0 {
                // Exact global optimum; the relative test is undefined and
                // nothing can improve.
                stop_reason = StopReason::Converged;
                break;
            }
            let (gc, gw) = grads.take().expect("gradients computed with previous loss");
            let outcome = {
                let gc_zero = gc.norm() == 0.0;
                let gw_zero = gw.norm() == 0.0;
                if gc_zero && gw_zero {
                    stop_reason = StopReason::ZeroGradient;
                    break;
                }
                if gc_zero {
                    zero_grad_c_steps += 1;
                }
                if gw_zero {
                    zero_grad_w_steps += 1;
                }
                self.step(&mut state, &gc, &gw, cfg.alpha)
            };
            debug_assert!(outcome.c_moved || outcome.w_moved);
            self.fill_unobserved(&mut state);
            state.iteration = t;

            let eval = self.loss_and_grads(&state)?;
            history.push(eval.loss);
            let rel_change = (prev_loss - eval.loss).abs() / prev_loss;
            prev_loss = eval.loss;
            grads = Some((eval.gc, eval.gw));
            if rel_change < cfg.epsilon {
                stop_reason = StopReason::Converged;
                break;
            }
        }

        let report = FitReport {
            iterations: state.iteration,
            final_loss: prev_loss,
            loss_history: history,
            stop_reason,
            zero_grad_c_steps,
            zero_grad_w_steps,
        };
        Ok((state, report))
    }

    /// Fused single pass computing the loss together with both gradients,
    /// sharing the per-day intermediates. Must agree with [`Problem::loss`],
    /// [`Problem::grad_c`], and [`Problem::grad_w`] (covered by tests).
    fn loss_and_grads(&self, state: &ModelState) -> Result<IterationEval> {
        let n = self.n();
        let ct = state.c.transpose();
        let mut loss = 0.0;
        let mut gc = DMatrix::zeros(n, n);
        let mut gw = DMatrix::zeros(n, n);
        for f in &state.f_work {
            let g = localized_product(&self.nbr, &state.w, f);
            let mut r = &g * &state.c;
            r -= f;
            loss += 0.5 * r.norm_squared();
            gc.gemm_tr(1.0, &g, &r, 1.0);
            let m = &r * &ct;
            accumulate_pattern_dots(&self.nbr, &m, f, &mut gw);
        }
        if self.lambda > 0.0 && !self.xk.is_empty() {
            // The guidance loss expands to
            //   1/2 (sum_v ||X_v||^2 - 2 <C, B> + <C, C A>)
            // with A = sum X_v^k X_v^kT and B = sum X_v X_v^kT, so the
            // C A product is shared between the loss and the gradient.
            let ca = &state.c * &self.guide_a;
            let guide = 0.5
                * self.lambda
                * (self.view_sq_norm - 2.0 * state.c.dot(&self.guide_b) + state.c.dot(&ca));
            // The expanded form can round to a tiny negative at an exact
            // guidance optimum; the residual form it mirrors is >= 0.
            loss += guide.max(0.0);
            gc += &ca * self.lambda;
            gc -= &self.guide_b * self.lambda;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: "loss", iteration: state.iteration });
        }
        Ok(IterationEval { loss, gc, gw })
    }
}

struct IterationEval {
    loss: f64,
    gc: DMatrix<f64>,
    gw: DMatrix<f64>,
}

/// Which variables a [`Problem::step`] actually moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub c_moved: bool,
    pub w_moved: bool,
}

/// Accumulate the H-pattern entries of `m * f^T` into `gw`:
/// gw(i, j) += dot(m.row(i), f.row(j)) for every neighbor pair (i, j).
fn accumulate_pattern_dots(
    nbr: &NeighborModel,
    m: &DMatrix<f64>,
    f: &DMatrix<f64>,
    gw: &mut DMatrix<f64>,
) {
    let n = f.nrows();
    for i in 0..n {
        for &j in &nbr.neighbors[i] {
            let mut acc = 0.0;
            for l in 0..f.ncols() {
                acc += m[(i, l)] * f[(j, l)];
            }
            gw[(i, j)] += acc;
        }
    }
}

/// Initialize C from the masked last-day solve,
/// C = pinv(Y (*) ((H (*) W) F_D)) (Y (*) F_D).
pub fn init_c(
    f_d: &DMatrix<f64>,
    nbr: &NeighborModel,
    w: &DMatrix<f64>,
    mask: &ObservationMask,
) -> Result<DMatrix<f64>> {
    let g = localized_product(nbr, w, f_d);
    let lhs = g.component_mul(&mask.y);
    let rhs = f_d.component_mul(&mask.y);
    Ok(pinv(&lhs)? * rhs)
}

/// Eq.-style standalone prediction: (1 - Y) (*) ((H (*) W) F_D C) with
/// negative values clamped to zero.
pub fn predict_from(
    c: &DMatrix<f64>,
    w: &DMatrix<f64>,
    nbr: &NeighborModel,
    mask: &ObservationMask,
    f_d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let g = localized_product(nbr, w, f_d);
    let p = g * c;
    let n = p.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if mask.y[(i, j)] == 0.0 {
            p[(i, j)].max(0.0)
        } else {
            0.0
        }
    })
}

/// Fit the departure-side model.
pub fn fit(
    flows: &FlowTensor,
    nbr: &NeighborModel,
    w0: &DMatrix<f64>,
    views: &ViewSet,
    mask: &ObservationMask,
    cfg: &SolverConfig,
) -> Result<(ModelState, FitReport)> {
    let problem = Problem::new(flows.clone(), nbr.clone(), views, mask.clone(), cfg.lambda)?;
    problem.fit(w0, cfg)
}

/// Fit the arrival-side model: identical to [`fit`] on transposed daily
/// matrices and the transposed mask, learning how flows arrive at each
/// area instead of how they leave it.
pub fn fit_arrivals(
    flows: &FlowTensor,
    nbr: &NeighborModel,
    w0: &DMatrix<f64>,
    views: &ViewSet,
    mask: &ObservationMask,
    cfg: &SolverConfig,
) -> Result<(ModelState, FitReport)> {
    let problem = Problem::new(
        flows.transposed(),
        nbr.clone(),
        views,
        mask.transposed(),
        cfg.lambda,
    )?;
    problem.fit(w0, cfg)
}

/// Merge the two passes' unobserved-entry predictions. `departure` is the
/// row-side prediction in original orientation; `arrival` the column-side
/// prediction already transposed back to original orientation. Target
/// rows take the departure values, target columns the arrival values, and
/// the doubly-unobserved target x target block their element-wise mean.
pub fn merge_predictions(
    departure: &DMatrix<f64>,
    arrival: &DMatrix<f64>,
    mask: &ObservationMask,
) -> DMatrix<f64> {
    let n = mask.n();
    // Knownness can be read off the mask diagonal: Y(i, i) = known(i).
    let known: Vec<bool> = (0..n).map(|i| mask.y[(i, i)] != 0.0).collect();
    DMatrix::from_fn(n, n, |i, j| match (known[i], known[j]) {
        (true, true) => 0.0,
        (false, true) => departure[(i, j)],
        (true, false) => arrival[(i, j)],
        (false, false) => 0.5 * (departure[(i, j)] + arrival[(i, j)]),
    })
}

/// Departure- and arrival-side fits plus the merged prediction for the
/// last day.
pub struct TwoSidedFit {
    pub departure: (ModelState, FitReport),
    pub arrival: (ModelState, FitReport),
    /// Merged prediction at unobserved entries, zeros elsewhere.
    pub prediction: DMatrix<f64>,
}

/// Run both fitting passes and merge their predictions.
pub fn fit_two_sided(
    flows: &FlowTensor,
    nbr: &NeighborModel,
    w0: &DMatrix<f64>,
    views: &ViewSet,
    mask: &ObservationMask,
    cfg: &SolverConfig,
) -> Result<TwoSidedFit> {
    let dep_problem =
        Problem::new(flows.clone(), nbr.clone(), views, mask.clone(), cfg.lambda)?;
    let dep = dep_problem.fit(w0, cfg)?;
    let dep_pred = dep_problem.predict(&dep.0);
    drop(dep_problem);

    let arr_problem = Problem::new(
        flows.transposed(),
        nbr.clone(),
        views,
        mask.transposed(),
        cfg.lambda,
    )?;
    let arr = arr_problem.fit(w0, cfg)?;
    let arr_pred = arr_problem.predict(&arr.0).transpose();

    let prediction = merge_predictions(&dep_pred, &arr_pred, mask);
    Ok(TwoSidedFit { departure: dep, arrival: arr, prediction })
}

/// Completion of the observed matrix: observed entries from the input,
/// unobserved from the merged prediction.
pub fn complete_matrix(
    observed: &DMatrix<f64>,
    prediction: &DMatrix<f64>,
    mask: &ObservationMask,
) -> DMatrix<f64> {
    let n = mask.n();
    DMatrix::from_fn(n, n, |i, j| {
        if mask.y[(i, j)] != 0.0 {
            observed[(i, j)]
        } else {
            prediction[(i, j)]
        }
    })
}
