//! Inverse problems: recover `Q` from Gram matrices of unlabeled snapshots.
//!
//! Variables are `Q, P_1, …, P_{N−1}` with `P_N ≡ Q`. Every `F_t` below is
//! `[[BᵀP_{t+1}B + I, BᵀP_{t+1}A], [AᵀP_{t+1}B, AᵀP_{t+1}A + Q − P_t]] ⪰ 0`.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::ensemble::PermutationSchedule;
use crate::error::{Error, Result};
use crate::linalg::{frob, is_psd, min_eigenvalue, svec, svec_len, symmetrize, trace_product};
use crate::lqr::{gains_from_p, gains_from_riccati, riccati_map, solve_dre, CostMatrix, GainSchedule, SystemDynamics};
use crate::sdp::{
    find_strictly_feasible, solve_observed, FrobeniusBall, LmiBlock, SdpProblem, SdpVariableLayout, SolverOptions,
    SolverReport, SolverStatus,
};

pub const DEFAULT_NOISELESS_SCALE: f64 = 1e-4;
pub const DEFAULT_NOISY_SCALE: f64 = 1.0;

/// Default Frobenius bound `φ = 100·n`.
pub fn default_phi(n: usize) -> f64 {
    100.0 * n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Noiseless,
    Noisy,
}

/// `−tr(P_1G_1) + tr(P_NG_N) + Σ_{t<N} tr(QG_t)`; `p` holds `P_1 … P_N`.
pub fn evaluate_h(q: &DMatrix<f64>, p: &[DMatrix<f64>], g: &[DMatrix<f64>]) -> f64 {
    let n_h = g.len();
    let mut h = -trace_product(&p[0], &g[0]) + trace_product(&p[n_h - 1], &g[n_h - 1]);
    for gt in &g[..n_h - 1] {
        h += trace_product(q, gt);
    }
    h
}

/// `H/M + tr(P_1Σ) − tr(P_NΣ) − (N−1)·tr(QΣ)`.
pub fn evaluate_h_empirical(
    q: &DMatrix<f64>,
    p: &[DMatrix<f64>],
    g: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
    agents: usize,
) -> f64 {
    let n_h = g.len();
    evaluate_h(q, p, g) / agents as f64 + trace_product(&p[0], sigma)
        - trace_product(&p[n_h - 1], sigma)
        - (n_h - 1) as f64 * trace_product(q, sigma)
}

/// The `(m+n)×(m+n)` constraint matrix `F_t` for given `Q, P_t, P_{t+1}`.
pub fn constraint_block(
    dyn_: &SystemDynamics,
    q: &DMatrix<f64>,
    p_t: &DMatrix<f64>,
    p_next: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, m) = (dyn_.n(), dyn_.m());
    let w = stacked_input_state(dyn_);
    let mut f = w.transpose() * p_next * &w;
    for i in 0..m {
        f[(i, i)] += 1.0;
    }
    let mut br = f.view_mut((m, m), (n, n));
    br += q;
    br -= p_t;
    symmetrize(&f)
}

/// `W = [B A]`, so that `WᵀPW` is the `P`-dependent part of `F_t`.
fn stacked_input_state(dyn_: &SystemDynamics) -> DMatrix<f64> {
    let (n, m) = (dyn_.n(), dyn_.m());
    let mut w = DMatrix::zeros(n, m + n);
    w.view_mut((0, 0), (n, m)).copy_from(dyn_.b());
    w.view_mut((0, m), (n, n)).copy_from(dyn_.a());
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Minimum eigenvalue of `F_1 … F_{N−1}`.
    pub f_min_eigenvalues: Vec<f64>,
    /// `‖Ric(P_{t+1}) − P_t‖_F`; zero on the exact DRE.
    pub schur_residuals: Vec<f64>,
    pub q_min_eigenvalue: f64,
    /// Minimum eigenvalue of `P_1 … P_N`.
    pub p_min_eigenvalues: Vec<f64>,
    /// `‖P_N − Q‖_F`.
    pub equality_residual: f64,
    /// `φ − ‖Q‖_F²`.
    pub ball_margin: Option<f64>,
}

impl FeasibilityReport {
    /// Smallest margin over all cone and ball constraints.
    pub fn min_margin(&self) -> f64 {
        self.f_min_eigenvalues
            .iter()
            .chain(&self.p_min_eigenvalues)
            .chain(std::iter::once(&self.q_min_eigenvalue))
            .chain(self.ball_margin.as_ref())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn check_feasibility(
    q: &DMatrix<f64>,
    p: &[DMatrix<f64>],
    dyn_: &SystemDynamics,
    phi: Option<f64>,
) -> FeasibilityReport {
    let n_h = p.len();
    let f_min_eigenvalues = (0..n_h - 1).map(|t| min_eigenvalue(&constraint_block(dyn_, q, &p[t], &p[t + 1]))).collect();
    let schur_residuals = (0..n_h - 1).map(|t| frob(&(riccati_map(dyn_, &p[t + 1], q) - &p[t]))).collect();
    FeasibilityReport {
        f_min_eigenvalues,
        schur_residuals,
        q_min_eigenvalue: min_eigenvalue(q),
        p_min_eigenvalues: p.iter().map(min_eigenvalue).collect(),
        equality_residual: frob(&(&p[n_h - 1] - q)),
        ball_margin: phi.map(|f| f - q.norm_squared()),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IocOptions {
    /// Objective multiplier; the mode default when absent.
    pub scale: Option<f64>,
    /// Frobenius bound; mandatory in noisy mode, optional in noiseless mode.
    pub phi: Option<f64>,
    pub solver: SolverOptions,
}

/// One inverse problem instance.
#[derive(Debug, Clone)]
pub struct IocSdpProblem {
    pub g: Vec<DMatrix<f64>>,
    pub dyn_: SystemDynamics,
    pub mode: Mode,
    pub sigma: Option<DMatrix<f64>>,
    pub phi: Option<f64>,
    pub agents: usize,
    pub scale: f64,
}

fn validate_grams(g: &[DMatrix<f64>], n: usize) -> Result<()> {
    if g.len() < 2 {
        return Err(Error::Invalid(format!("horizon N must be ≥ 2, got {}", g.len())));
    }
    for (t, gt) in g.iter().enumerate() {
        if gt.shape() != (n, n) {
            return Err(Error::Dimension(format!("G_{} is {:?}, expected {n}×{n}", t + 1, gt.shape())));
        }
        if gt.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("G_{} has non-finite entries", t + 1)));
        }
        if frob(&(gt - gt.transpose())) > 1e-10 * frob(gt).max(1.0) {
            return Err(Error::Invalid(format!("G_{} is not symmetric", t + 1)));
        }
        if !is_psd(gt) {
            return Err(Error::NotPsd { what: format!("G_{}", t + 1), min_eig: min_eigenvalue(gt) });
        }
    }
    Ok(())
}

impl IocSdpProblem {
    pub fn noiseless(g: Vec<DMatrix<f64>>, dyn_: SystemDynamics, agents: usize) -> Result<Self> {
        validate_grams(&g, dyn_.n())?;
        if agents == 0 {
            return Err(Error::Invalid("agent count must be ≥ 1".into()));
        }
        Ok(Self { g, dyn_, mode: Mode::Noiseless, sigma: None, phi: None, agents, scale: DEFAULT_NOISELESS_SCALE })
    }

    pub fn noisy(
        g: Vec<DMatrix<f64>>,
        dyn_: SystemDynamics,
        sigma: DMatrix<f64>,
        phi: f64,
        agents: usize,
    ) -> Result<Self> {
        let n = dyn_.n();
        validate_grams(&g, n)?;
        if agents == 0 {
            return Err(Error::Invalid("agent count must be ≥ 1".into()));
        }
        if sigma.shape() != (n, n) {
            return Err(Error::Dimension(format!("Σ is {:?}, expected {n}×{n}", sigma.shape())));
        }
        if frob(&(&sigma - sigma.transpose())) > 1e-12 * frob(&sigma).max(1.0) || !is_psd(&sigma) {
            return Err(Error::NotPsd { what: "Σ".into(), min_eig: min_eigenvalue(&sigma) });
        }
        if !(phi >= 0.0 && phi.is_finite()) {
            return Err(Error::Invalid(format!("φ must be finite and ≥ 0, got {phi}")));
        }
        Ok(Self { g, dyn_, mode: Mode::Noisy, sigma: Some(symmetrize(&sigma)), phi: Some(phi), agents, scale: DEFAULT_NOISY_SCALE })
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!("objective scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    /// Adds (or, in noiseless mode, replaces) the Frobenius bound.
    pub fn with_phi(mut self, phi: Option<f64>) -> Result<Self> {
        match (self.mode, phi) {
            (Mode::Noisy, None) => return Err(Error::Invalid("noisy mode requires φ".into())),
            (_, Some(f)) if !(f >= 0.0 && f.is_finite()) => {
                return Err(Error::Invalid(format!("φ must be finite and ≥ 0, got {f}")))
            }
            _ => {}
        }
        self.phi = phi;
        Ok(self)
    }

    /// Removes the ball even in noisy mode (for unboundedness probes).
    pub fn without_ball(mut self) -> Self {
        self.phi = None;
        self
    }

    pub fn horizon(&self) -> usize {
        self.g.len()
    }

    pub fn layout(&self) -> SdpVariableLayout {
        SdpVariableLayout::ioc(self.dyn_.n(), self.horizon())
    }

    /// Unscaled objective (`H` or `H_E`) at `(Q, P_1 … P_N)`.
    pub fn objective(&self, q: &DMatrix<f64>, p: &[DMatrix<f64>]) -> f64 {
        match (&self.mode, &self.sigma) {
            (Mode::Noisy, Some(s)) => evaluate_h_empirical(q, p, &self.g, s, self.agents),
            _ => evaluate_h(q, p, &self.g),
        }
    }

    /// Builds the scaled SDP in the variables of [`Self::layout`].
    pub fn build(&self) -> Result<SdpProblem> {
        let layout = self.layout();
        let (n, m, n_h) = (self.dyn_.n(), self.dyn_.m(), self.horizon());
        let mut c = DVector::zeros(layout.dim());
        let gsum: DMatrix<f64> = self.g.iter().fold(DMatrix::zeros(n, n), |acc, g| acc + g);
        let (cq, cp1) = match (&self.mode, &self.sigma) {
            (Mode::Noisy, Some(s)) => {
                let inv_m = 1.0 / self.agents as f64;
                (svec(&gsum) * inv_m - svec(s) * n_h as f64, svec(&self.g[0]) * (-inv_m) + svec(s))
            }
            _ => (svec(&gsum), -svec(&self.g[0])),
        };
        c.rows_mut(layout.offset(0), svec_len(n)).copy_from(&(cq * self.scale));
        c.rows_mut(layout.offset(1), svec_len(n)).axpy(self.scale, &cp1, 1.0);

        let w = stacked_input_state(&self.dyn_);
        let mut constant = DMatrix::zeros(m + n, m + n);
        constant.view_mut((0, 0), (m, m)).fill_with_identity();
        let embed = |e: &DMatrix<f64>, sign: f64| {
            let mut out = DMatrix::zeros(m + n, m + n);
            out.view_mut((m, m), (n, n)).copy_from(&(e * sign));
            out
        };
        let mut blocks = Vec::with_capacity(2 * n_h);
        for t in 1..n_h {
            let mut b = LmiBlock::new(format!("F{t}"), constant.clone());
            // Block index of P_{t+1}; P_N is Q (block 0).
            let next = if t + 1 == n_h { 0 } else { t + 1 };
            b.add_linear_map(layout.offset(next), n, |e| w.transpose() * e * &w);
            b.add_linear_map(layout.offset(0), n, |e| embed(e, 1.0));
            b.add_linear_map(layout.offset(t), n, |e| embed(e, -1.0));
            blocks.push(b);
        }
        for k in 0..layout.len() {
            blocks.push(LmiBlock::psd(layout.name(k).to_string(), layout.offset(k), n));
        }
        let ball = self.phi.map(|phi| FrobeniusBall { start: layout.offset(0), len: svec_len(n), radius_sq: phi });
        SdpProblem::new(c, blocks, ball)
    }

    /// `Q⁰ = c·I` with `c` inside the ball, `P_N = Q⁰`, `P_t = ½·Ric(P_{t+1})`.
    /// Each Schur complement is `½·Ric(P_{t+1}) ⪰ ½·Q⁰ ≻ 0`, so the point is
    /// strictly feasible.
    pub fn initial_point(&self) -> Vec<DMatrix<f64>> {
        let n = self.dyn_.n();
        let c = match self.phi {
            Some(phi) => 0.1f64.min(0.5 * (phi / n as f64).sqrt()),
            None => 0.1,
        };
        let q0 = DMatrix::identity(n, n) * c;
        let n_h = self.horizon();
        let mut p = vec![q0.clone(); n_h];
        for t in (0..n_h - 1).rev() {
            p[t] = riccati_map(&self.dyn_, &p[t + 1], &q0) * 0.5;
        }
        let mut vars = vec![q0];
        vars.extend(p.into_iter().take(n_h - 1));
        vars
    }

    fn precondition_warnings(&self) -> Vec<String> {
        let (n, n_h) = (self.dyn_.n(), self.horizon());
        let mut w = Vec::new();
        if n_h < n + 1 {
            w.push(format!("horizon N = {n_h} is below n + 1 = {}; Q may not be unique", n + 1));
        }
        let g1 = &self.g[0];
        let lmin = min_eigenvalue(g1);
        if !(lmin > 1e-12 * frob(g1)) {
            w.push(format!("G_1 is not positive definite (min eigenvalue {lmin:e}); data lacks persistent excitation"));
        }
        w
    }

    pub fn solve(&self, options: &SolverOptions) -> Result<EstimateResult> {
        self.solve_observed(options, |_, _| {})
    }

    /// Solves and passes every accepted iterate `(Q, P_1 … P_N)` to `observer`.
    pub fn solve_observed<F>(&self, options: &SolverOptions, mut observer: F) -> Result<EstimateResult>
    where
        F: FnMut(&DMatrix<f64>, &[DMatrix<f64>]),
    {
        let n = self.dyn_.n();
        let n_h = self.horizon();
        let warnings = self.precondition_warnings();
        for w in &warnings {
            log::warn!("{w}");
        }
        if self.phi == Some(0.0) {
            // The only feasible point: Q = 0 forces every P_t = 0.
            let zeros = vec![DMatrix::zeros(n, n); n_h];
            return self.finish(DMatrix::zeros(n, n), zeros, trivial_report(), warnings);
        }
        let layout = self.layout();
        let problem = self.build()?;
        let mut x0 = layout.pack(&self.initial_point())?;
        if !problem.is_strictly_feasible(&x0) {
            x0 = find_strictly_feasible(&problem, &x0, 1e-9)?;
        }
        let expand = |v: &DVector<f64>| {
            let mut mats = layout.unpack(v);
            let q = mats[0].clone();
            let mut p: Vec<DMatrix<f64>> = mats.drain(1..).collect();
            p.push(q.clone());
            (q, p)
        };
        let (x, report) = solve_observed(&problem, &x0, options, |it| {
            let (q, p) = expand(it.x);
            observer(&q, &p);
            ControlFlow::Continue(())
        })?;
        if report.status == SolverStatus::NumericalFailure {
            log::warn!("solver reported numerical failure: {}", report.message.as_deref().unwrap_or(""));
        }
        let (q, p) = expand(&x);
        self.finish(q, p, report, warnings)
    }

    fn finish(
        &self,
        q: DMatrix<f64>,
        p: Vec<DMatrix<f64>>,
        report: SolverReport,
        warnings: Vec<String>,
    ) -> Result<EstimateResult> {
        let objective = self.objective(&q, &p);
        let feasibility = check_feasibility(&q, &p, &self.dyn_, self.phi);
        let k_est = gains_from_p(&self.dyn_, &p)?;
        Ok(EstimateResult {
            q_est: CostMatrix::new(symmetrize(&q))?,
            p_est: p,
            k_est,
            objective,
            scaled_objective: objective * self.scale,
            scale: self.scale,
            mode: self.mode,
            report,
            feasibility,
            warnings,
        })
    }
}

fn trivial_report() -> SolverReport {
    SolverReport {
        status: SolverStatus::Optimal,
        objective: 0.0,
        iterations: 0,
        outer_iterations: 0,
        gap: 0.0,
        relative_gap: 0.0,
        block_min_eigenvalues: Vec::new(),
        ball_margin: Some(0.0),
        outer_objectives: Vec::new(),
        uncentered_stages: 0,
        wall_time_s: 0.0,
        message: Some("φ = 0 admits only Q = 0".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub q_est: CostMatrix,
    /// `P_1 … P_N` as returned by the SDP, with `P_N = Q_est`.
    pub p_est: Vec<DMatrix<f64>>,
    pub k_est: GainSchedule,
    /// Unscaled `H` (noiseless) or `H_E` (noisy).
    pub objective: f64,
    pub scaled_objective: f64,
    pub scale: f64,
    pub mode: Mode,
    pub report: SolverReport,
    pub feasibility: FeasibilityReport,
    pub warnings: Vec<String>,
}

fn scaled(problem: IocSdpProblem, options: &IocOptions) -> Result<IocSdpProblem> {
    match options.scale {
        Some(s) => problem.with_scale(s),
        None => Ok(problem),
    }
}

pub fn estimate_noiseless(
    g: &[DMatrix<f64>],
    dyn_: &SystemDynamics,
    agents: usize,
    options: &IocOptions,
) -> Result<EstimateResult> {
    let problem = IocSdpProblem::noiseless(g.to_vec(), dyn_.clone(), agents)?.with_phi(options.phi)?;
    scaled(problem, options)?.solve(&options.solver)
}

pub fn estimate_noisy(
    g: &[DMatrix<f64>],
    dyn_: &SystemDynamics,
    sigma: &DMatrix<f64>,
    phi: f64,
    agents: usize,
    options: &IocOptions,
) -> Result<EstimateResult> {
    let problem = IocSdpProblem::noisy(g.to_vec(), dyn_.clone(), sigma.clone(), phi, agents)?;
    scaled(problem, options)?.solve(&options.solver)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRecovery {
    pub schedule: PermutationSchedule,
    /// Timesteps (1-based) whose matching had an equal-cost alternative.
    pub ambiguous_steps: Vec<usize>,
}

/// Re-links shuffled snapshots by simulating each agent from its column of
/// `Y_1` under the gains of `Q_est` and matching predictions to observations
/// with a minimum squared-distance assignment at every `t ≥ 2`.
pub fn recover_permutations(
    q_est: &CostMatrix,
    dyn_: &SystemDynamics,
    y: &[DMatrix<f64>],
) -> Result<PermutationRecovery> {
    let n_h = y.len();
    if n_h < 2 {
        return Err(Error::Invalid("need at least two snapshots".into()));
    }
    let agents = y[0].ncols();
    if y.iter().any(|yt| yt.shape() != (dyn_.n(), agents)) {
        return Err(Error::Dimension("snapshots must all be n×M".into()));
    }
    let gains = gains_from_riccati(dyn_, &solve_dre(dyn_, q_est, n_h)?)?;
    let mut pred = y[0].clone();
    let mut perms = vec![(0..agents).collect::<Vec<_>>()];
    let mut ambiguous_steps = Vec::new();
    for t in 1..n_h {
        let acl = dyn_.a() + dyn_.b() * gains.k(t);
        pred = acl * pred;
        let cost = DMatrix::from_fn(agents, agents, |i, j| (pred.column(i) - y[t].column(j)).norm_squared());
        let a = min_cost_assignment(&cost)?;
        if a.ambiguous {
            ambiguous_steps.push(t + 1);
        }
        let mut perm = vec![0; agents];
        for (agent, &col) in a.row_to_col.iter().enumerate() {
            perm[col] = agent;
        }
        perms.push(perm);
    }
    Ok(PermutationRecovery { schedule: PermutationSchedule { perms }, ambiguous_steps })
}
