//! Primal log-barrier path-following for
//! `min cᵀx  s.t.  F_k(x) ⪰ 0,  ‖x_B‖² ≤ φ`.
//!
//! Each centering step minimizes `t·cᵀx − Σ_k log det F_k(x) − log(φ − ‖x_B‖²)`
//! with damped Newton; `t` grows geometrically until `ν/t` meets the gap target,
//! where `ν` is the barrier parameter (total LMI size, plus one for the ball).

use std::ops::ControlFlow;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::block::{FrobeniusBall, LmiBlock};
use super::trace::{TraceRow, TraceWriter};
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
    pub ball: Option<FrobeniusBall>,
}

impl SdpProblem {
    pub fn new(objective: DVector<f64>, blocks: Vec<LmiBlock>, ball: Option<FrobeniusBall>) -> Result<Self> {
        let d = objective.len();
        for b in &blocks {
            if b.terms.iter().any(|(v, _)| *v >= d) {
                return Err(Error::Dimension(format!("block {} references a variable beyond {d}", b.name)));
            }
        }
        if let Some(ball) = ball {
            if ball.start + ball.len > d {
                return Err(Error::Dimension("ball range exceeds the variable dimension".into()));
            }
            if !(ball.radius_sq > 0.0) {
                return Err(Error::Infeasible("Frobenius ball has empty interior".into()));
            }
        }
        Ok(Self { objective, blocks, ball })
    }

    pub fn dim(&self) -> usize {
        self.objective.len()
    }

    /// Barrier parameter `ν`.
    pub fn nu(&self) -> f64 {
        (self.blocks.iter().map(LmiBlock::size).sum::<usize>() + usize::from(self.ball.is_some())) as f64
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective.dot(x)
    }

    /// Cholesky factors of every block, or `None` outside the open feasible set.
    fn factor(&self, x: &DVector<f64>) -> Option<Vec<Cholesky<f64, Dyn>>> {
        if let Some(ball) = self.ball {
            if !(ball.margin(x) > 0.0) {
                return None;
            }
        }
        self.blocks.iter().map(|b| b.eval(x).cholesky()).collect()
    }

    pub fn is_strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.factor(x).is_some()
    }

    /// `−Σ log det F_k(x) − log(φ − ‖x_B‖²)`; `+∞` outside the domain.
    pub fn barrier_value(&self, x: &DVector<f64>) -> f64 {
        let Some(chols) = self.factor(x) else { return f64::INFINITY };
        let mut v = 0.0;
        for ch in &chols {
            v -= 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        if let Some(ball) = self.ball {
            v -= ball.margin(x).ln();
        }
        v
    }

    /// Barrier gradient and Hessian at a strictly feasible point.
    pub fn barrier_derivatives(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let chols = self.factor(x).ok_or_else(|| Error::Numerical("point is not strictly feasible".into()))?;
        let d = self.dim();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for (b, ch) in self.blocks.iter().zip(&chols) {
            // Ã_i = L⁻¹ A_i L⁻ᵀ, so ∂_i = −tr Ã_i and ∂²_ij = ⟨Ã_i, Ã_j⟩.
            let scaled: Vec<(usize, DMatrix<f64>)> = b
                .terms
                .iter()
                .map(|(v, a)| {
                    let mut y = a.clone();
                    ch.l_dirty().solve_lower_triangular_mut(&mut y);
                    let mut z = y.transpose();
                    ch.l_dirty().solve_lower_triangular_mut(&mut z);
                    (*v, z)
                })
                .collect();
            for (i, (vi, ai)) in scaled.iter().enumerate() {
                g[*vi] -= ai.trace();
                for (vj, aj) in &scaled[..=i] {
                    let hij = ai.dot(aj);
                    h[(*vi, *vj)] += hij;
                    if vi != vj {
                        h[(*vj, *vi)] += hij;
                    }
                }
            }
        }
        if let Some(ball) = self.ball {
            let s = ball.margin(x);
            for i in ball.start..ball.start + ball.len {
                g[i] += 2.0 * x[i] / s;
                h[(i, i)] += 2.0 / s;
                for j in ball.start..ball.start + ball.len {
                    h[(i, j)] += 4.0 * x[i] * x[j] / (s * s);
                }
            }
        }
        Ok((g, h))
    }

    /// Smallest eigenvalue of each block at `x`.
    pub fn block_min_eigenvalues(&self, x: &DVector<f64>) -> Vec<(String, f64)> {
        self.blocks.iter().map(|b| (b.name.clone(), min_eigenvalue(&b.eval(x)))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Initial barrier weight; chosen from the starting objective when absent.
    pub t0: Option<f64>,
    pub mu: f64,
    /// Centering stops once `λ²/2` falls below this.
    pub newton_tol: f64,
    /// Target for `ν/t` relative to `max(|cᵀx|, gap_floor)`.
    pub eps_gap: f64,
    pub gap_floor: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    /// Largest relative diagonal shift tried when the Newton matrix is not PD.
    pub regularization_cap: f64,
    pub trace_path: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            t0: None,
            mu: 10.0,
            newton_tol: 5e-7,
            eps_gap: 1e-9,
            gap_floor: 1e-12,
            max_outer: 60,
            max_newton: 200,
            regularization_cap: 1e-6,
            trace_path: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 1.0) {
            return Err(Error::Invalid(format!("barrier growth μ must exceed 1, got {}", self.mu)));
        }
        if !(self.eps_gap > 0.0) {
            return Err(Error::Invalid(format!("gap target must be positive, got {}", self.eps_gap)));
        }
        if !(self.gap_floor > 0.0) {
            return Err(Error::Invalid("gap floor must be positive".into()));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Invalid("Newton tolerance must be positive".into()));
        }
        if let Some(t0) = self.t0 {
            if !(t0 > 0.0 && t0.is_finite()) {
                return Err(Error::Invalid(format!("t0 must be positive, got {t0}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub objective: f64,
    /// Total Newton steps.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Duality-gap bound at exit; `ν/t` after an exactly centered stage.
    pub gap: f64,
    /// `gap / max(|objective|, gap_floor)`.
    pub relative_gap: f64,
    pub block_min_eigenvalues: Vec<(String, f64)>,
    pub ball_margin: Option<f64>,
    /// Objective after each completed centering.
    pub outer_objectives: Vec<f64>,
    /// Outer stages whose centering stopped before the Newton tolerance.
    pub uncentered_stages: usize,
    pub wall_time_s: f64,
    pub message: Option<String>,
}

impl SolverReport {
    pub fn min_block_eigenvalue(&self) -> f64 {
        self.block_min_eigenvalues.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min)
    }
}

/// A stage ending with a smaller Newton decrement still certifies a gap.
const NEAR_CENTERED_DECREMENT: f64 = 0.5;

/// Decrement below which a stalled line search still counts as centered.
const STALL_DECREMENT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonStep {
    pub direction: DVector<f64>,
    /// Newton decrement `λ = sqrt(gᵀH⁻¹g)`.
    pub decrement: f64,
}

/// Solves the (Jacobi-equilibrated) Newton system, shifting the diagonal when
/// Cholesky fails.
fn solve_newton_system(h: &DMatrix<f64>, g: &DVector<f64>, cap: f64) -> Result<DVector<f64>> {
    let d = h.nrows();
    let scale: DVector<f64> = DVector::from_fn(d, |i, _| {
        let v = h[(i, i)];
        if v > 0.0 && v.is_finite() { 1.0 / v.sqrt() } else { 1.0 }
    });
    let mut hs = h.clone();
    for j in 0..d {
        for i in 0..d {
            hs[(i, j)] *= scale[i] * scale[j];
        }
    }
    let gs = g.component_mul(&scale);
    let mut shift = 0.0;
    loop {
        let mut m = hs.clone();
        for i in 0..d {
            m[(i, i)] += shift;
        }
        if let Some(ch) = m.cholesky() {
            let y = ch.solve(&(-&gs));
            if y.iter().all(|v| v.is_finite()) {
                return Ok(y.component_mul(&scale));
            }
        }
        shift = if shift == 0.0 { 1e-14 } else { shift * 100.0 };
        if shift > cap {
            return Err(Error::Numerical("Newton matrix is not positive definite after regularization".into()));
        }
    }
}

/// Newton direction for `t·cᵀx + barrier(x)` at a strictly feasible `x`.
pub fn newton_step(problem: &SdpProblem, x: &DVector<f64>, t: f64, options: &SolverOptions) -> Result<NewtonStep> {
    let (gb, h) = problem.barrier_derivatives(x)?;
    let g = &problem.objective * t + gb;
    let direction = solve_newton_system(&h, &g, options.regularization_cap)?;
    let decrement = (-g.dot(&direction)).max(0.0).sqrt();
    Ok(NewtonStep { direction, decrement })
}

/// Barrier weight that best centers `x0`: the `t` minimizing the Newton
/// decrement `‖t·c + ∇φ(x0)‖_{H⁻¹}`, floored so that `ν/t` stays within ten
/// times the starting objective scale.
fn initial_weight(problem: &SdpProblem, x0: &DVector<f64>, options: &SolverOptions) -> Result<f64> {
    let nu = problem.nu();
    let reference = problem
        .objective_value(x0)
        .abs()
        .max(1e-3 * problem.objective.norm() * x0.norm())
        .max(options.gap_floor);
    let floor = nu / (10.0 * reference);
    let (gb, h) = problem.barrier_derivatives(x0)?;
    let hc = solve_newton_system(&h, &problem.objective, options.regularization_cap)?;
    let hg = solve_newton_system(&h, &gb, options.regularization_cap)?;
    // Both solves return −H⁻¹(·), so the ratio keeps its sign.
    let denom = problem.objective.dot(&hc);
    let t = if denom != 0.0 { -problem.objective.dot(&hg) / denom } else { 0.0 };
    Ok(if t.is_finite() { t.max(floor) } else { floor })
}

/// Snapshot handed to an observer after every accepted Newton step.
#[derive(Debug)]
pub struct Iterate<'a> {
    pub x: &'a DVector<f64>,
    pub t: f64,
    pub outer: usize,
    pub newton: usize,
    pub decrement: f64,
}

/// Minimizes from a strictly feasible `x0`.
pub fn solve(problem: &SdpProblem, x0: &DVector<f64>, options: &SolverOptions) -> Result<(DVector<f64>, SolverReport)> {
    solve_observed(problem, x0, options, |_| ControlFlow::Continue(()))
}

/// [`solve`] with a per-iterate callback; `ControlFlow::Break` stops early
/// with status `MaxIter`.
pub fn solve_observed<F>(
    problem: &SdpProblem,
    x0: &DVector<f64>,
    options: &SolverOptions,
    mut observer: F,
) -> Result<(DVector<f64>, SolverReport)>
where
    F: FnMut(&Iterate<'_>) -> ControlFlow<()>,
{
    options.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::Dimension("starting point has the wrong length".into()));
    }
    if !problem.is_strictly_feasible(x0) {
        return Err(Error::Infeasible("starting point is not strictly feasible".into()));
    }
    let start = Instant::now();
    let mut trace = options.trace_path.as_deref().map(TraceWriter::create).transpose()?;
    let nu = problem.nu();
    let mut x = x0.clone();
    let mut t = match options.t0 {
        Some(t0) => t0,
        None => initial_weight(problem, &x, options)?,
    };
    let mut iterations = 0;
    let mut outer_objectives = Vec::new();
    let mut status = SolverStatus::MaxIter;
    let mut message = None;
    let mut uncentered = 0;

    let mut last_gap_bound = f64::INFINITY;

    'outer: for outer in 0..options.max_outer {
        let mut centered = false;
        let mut last_decrement = f64::INFINITY;
        for _ in 0..options.max_newton {
            let step = match newton_step(problem, &x, t, options) {
                Ok(s) => s,
                Err(e) => {
                    status = SolverStatus::NumericalFailure;
                    message = Some(e.to_string());
                    break 'outer;
                }
            };
            last_decrement = step.decrement;
            let lambda_sq = step.decrement * step.decrement;
            if lambda_sq / 2.0 <= options.newton_tol {
                centered = true;
                break;
            }
            // Armijo backtracking on t·cᵀx + barrier, evaluated as a difference
            // so the large t·cᵀx term cancels exactly.
            let barrier0 = problem.barrier_value(&x);
            let c_dir = t * problem.objective.dot(&step.direction);
            let mut alpha = 1.0;
            let mut accepted = None;
            let mut any_feasible = false;
            for _ in 0..60 {
                let cand = &x + &step.direction * alpha;
                let b = problem.barrier_value(&cand);
                if b.is_finite() {
                    any_feasible = true;
                    if alpha * c_dir + (b - barrier0) <= -0.25 * alpha * lambda_sq {
                        accepted = Some(cand);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some(next) = accepted else {
                if !any_feasible {
                    status = SolverStatus::NumericalFailure;
                    message = Some("line search could not stay strictly feasible".into());
                    break 'outer;
                }
                // No measurable decrease left: centered to working precision.
                centered = step.decrement <= STALL_DECREMENT;
                break;
            };
            if next == x {
                centered = step.decrement <= STALL_DECREMENT;
                break;
            }
            x = next;
            iterations += 1;
            if let Some(w) = trace.as_mut() {
                let min_eig = problem.block_min_eigenvalues(&x).iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
                w.write(&TraceRow {
                    iteration: iterations,
                    barrier_t: t,
                    decrement: step.decrement,
                    objective: problem.objective_value(&x),
                    min_eigenvalue: min_eig,
                })?;
            }
            let it = Iterate { x: &x, t, outer, newton: iterations, decrement: step.decrement };
            if observer(&it).is_break() {
                message = Some("stopped by observer".into());
                break 'outer;
            }
        }
        if !centered {
            uncentered += 1;
        }
        let obj = problem.objective_value(&x);
        outer_objectives.push(obj);
        // Suboptimality bound on the barrier subproblem minimizer, widened for
        // a residual decrement below ½.
        let gap_bound = match centered {
            true => nu / t,
            false if last_decrement < NEAR_CENTERED_DECREMENT => (nu + last_decrement * nu.sqrt()) / t,
            false => f64::INFINITY,
        };
        last_gap_bound = gap_bound;
        if gap_bound <= options.eps_gap * obj.abs().max(options.gap_floor) {
            status = SolverStatus::Optimal;
            break;
        }
        t *= options.mu;
    }
    if let Some(w) = trace.as_mut() {
        w.flush()?;
    }
    let objective = problem.objective_value(&x);
    let gap = if last_gap_bound.is_finite() { last_gap_bound } else { nu / t };
    let report = SolverReport {
        status,
        objective,
        iterations,
        outer_iterations: outer_objectives.len(),
        gap,
        relative_gap: gap / objective.abs().max(options.gap_floor),
        block_min_eigenvalues: problem.block_min_eigenvalues(&x),
        ball_margin: problem.ball.map(|b| b.margin(&x)),
        outer_objectives,
        uncentered_stages: uncentered,
        wall_time_s: start.elapsed().as_secs_f64(),
        message,
    };
    Ok((x, report))
}

/// Phase 1: minimizes `s` subject to `F_k(x) + s·I ≻ 0` from `x0` and stops
/// as soon as every block has minimum eigenvalue at least `margin`.
/// `x0` must lie strictly inside the ball, if any.
pub fn find_strictly_feasible(problem: &SdpProblem, x0: &DVector<f64>, margin: f64) -> Result<DVector<f64>> {
    let d = problem.dim();
    let min_eig = |x: &DVector<f64>| {
        problem.blocks.iter().map(|b| min_eigenvalue(&b.eval(x))).fold(f64::INFINITY, f64::min)
    };
    if min_eig(x0) >= margin && problem.ball.is_none_or(|b| b.margin(x0) > 0.0) {
        return Ok(x0.clone());
    }
    if let Some(b) = problem.ball {
        if !(b.margin(x0) > 0.0) {
            return Err(Error::Infeasible("phase-1 start lies outside the Frobenius ball".into()));
        }
    }
    let s0 = (margin - min_eig(x0)).max(0.0) + 1.0;
    let mut blocks: Vec<LmiBlock> = problem
        .blocks
        .iter()
        .map(|b| {
            let mut e = b.clone();
            e.add_term(d, DMatrix::identity(b.size(), b.size()));
            e
        })
        .collect();
    // s ≥ −1 bounds the auxiliary problem below.
    let mut floor = LmiBlock::new("phase1-floor", DMatrix::from_element(1, 1, 1.0));
    floor.add_term(d, DMatrix::from_element(1, 1, 1.0));
    blocks.push(floor);
    let mut c = DVector::zeros(d + 1);
    c[d] = 1.0;
    let aux = SdpProblem::new(c, blocks, problem.ball)?;
    let start = x0.clone().insert_row(d, s0);
    let mut found = None;
    let options = SolverOptions { t0: Some(1.0), eps_gap: 1e-12, ..SolverOptions::default() };
    let (last, _) = solve_observed(&aux, &start, &options, |it| {
        let x = it.x.rows(0, d).into_owned();
        if min_eig(&x) >= margin {
            found = Some(x);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    found.ok_or_else(|| {
        Error::Infeasible(format!("phase 1 stalled with min eigenvalue {:.3e}", min_eig(&last.rows(0, d).into_owned())))
    })
}
