//! Conditioning and identifiability diagnostics, plus the error metrics and
//! log–log fits shared by the experiments.
//!
//! Stacked trajectories use `x_{2:N} = [x_2; …; x_N]` and `u = [u_1; …; u_{N−1}]`,
//! related by `x_{2:N} = L·u + Ã·x_1` with `L_{jk} = A^{j−k}B` for `k ≤ j`.
//! Stationarity gives `u = −Lᵀ(I⊗Q)x_{2:N}`, so with `ℱ(Q) = L·Lᵀ(I⊗Q)`
//! the optimal trajectory solves `(I + ℱ(Q))·x_{2:N} = Ã·x_1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, frob, kron_identity, singular_values, smat, svec_len};
use crate::lqr::{closed_loop_matrices, gains_from_riccati, solve_dre, CostMatrix, GainSchedule, SystemDynamics};

/// `Γ_k = [A^{k−1}B, …, AB, B]`, an `n × km` matrix.
pub fn controllability_matrix(dyn_: &SystemDynamics, k: usize) -> DMatrix<f64> {
    let (n, m) = (dyn_.n(), dyn_.m());
    let mut out = DMatrix::zeros(n, k * m);
    let mut blk = dyn_.b().clone();
    for j in (0..k).rev() {
        out.view_mut((0, j * m), (n, m)).copy_from(&blk);
        blk = dyn_.a() * blk;
    }
    out
}

pub const DEFAULT_ILL_CONDITIONED_THRESHOLD: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `cond(Γ_n)`.
    pub cond_gamma_n: f64,
    /// `cond(Γ_{N−1})`, the full-horizon stack.
    pub cond_gamma_stacked: f64,
    pub rank_gamma_n: usize,
    pub threshold: f64,
    pub ill_conditioned: bool,
}

pub fn condition_report(dyn_: &SystemDynamics, horizon: usize, threshold: f64) -> ConditionReport {
    let n = dyn_.n();
    let gn = controllability_matrix(dyn_, n);
    let cond_gamma_n = condition_number(&gn);
    ConditionReport {
        cond_gamma_n,
        cond_gamma_stacked: condition_number(&controllability_matrix(dyn_, horizon.saturating_sub(1).max(1))),
        rank_gamma_n: crate::linalg::rank(&gn, 1e-10),
        threshold,
        ill_conditioned: !(cond_gamma_n <= threshold),
    }
}

/// Dense stacked operators for horizon `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmpOperators {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// `Γ = [A^{N−2}B, …, B]ᵀ`, `(N−1)m × n`.
    pub gamma: DMatrix<f64>,
    /// `𝒮 = [𝒮_1, …, 𝒮_{N−1}]`: block selectors with `Lᵀ = 𝒮·(I⊗Γ)`.
    pub s_blocks: Vec<DMatrix<f64>>,
    /// `[A; A²; …; A^{N−1}]`.
    pub a_tilde: DMatrix<f64>,
    /// Input-to-state map `L`.
    pub l: DMatrix<f64>,
}

impl PmpOperators {
    pub fn new(dyn_: &SystemDynamics, horizon: usize) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::Invalid("horizon must be ≥ 2".into()));
        }
        let (n, m, h) = (dyn_.n(), dyn_.m(), horizon - 1);
        let mut powers = vec![DMatrix::identity(n, n)];
        for j in 1..=h {
            powers.push(dyn_.a() * &powers[j - 1]);
        }
        let mut a_tilde = DMatrix::zeros(h * n, n);
        for j in 0..h {
            a_tilde.view_mut((j * n, 0), (n, n)).copy_from(&powers[j + 1]);
        }
        let mut l = DMatrix::zeros(h * n, h * m);
        for j in 0..h {
            for k in 0..=j {
                l.view_mut((j * n, k * m), (n, m)).copy_from(&(&powers[j - k] * dyn_.b()));
            }
        }
        let gamma = controllability_matrix(dyn_, h).transpose();
        // Column block j of Lᵀ stacks (A^{j−k}B)ᵀ over rows k ≤ j, which is Γ
        // block h−1−(j−k).
        let s_blocks = (0..h)
            .map(|j| {
                let mut s = DMatrix::zeros(h * m, h * m);
                for k in 0..=j {
                    let src = h - 1 - (j - k);
                    s.view_mut((k * m, src * m), (m, m)).fill_with_identity();
                }
                s
            })
            .collect();
        Ok(Self { n, m, horizon, gamma, s_blocks, a_tilde, l })
    }

    /// `𝒮·(I⊗Γ)`, equal to `Lᵀ`.
    pub fn s_times_gamma(&self) -> DMatrix<f64> {
        let h = self.horizon - 1;
        let mut out = DMatrix::zeros(h * self.m, h * self.n);
        for (j, s) in self.s_blocks.iter().enumerate() {
            out.view_mut((0, j * self.n), (h * self.m, self.n)).copy_from(&(s * &self.gamma));
        }
        out
    }

    /// `ℱ(Q) = L·Lᵀ·(I⊗Q)`.
    pub fn f_of_q(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        &self.l * self.l.transpose() * kron_identity(self.horizon - 1, q)
    }

    pub fn system_matrix(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.f_of_q(q);
        DMatrix::identity(f.nrows(), f.ncols()) + f
    }

    /// `(I + ℱ(Q))⁻¹·Ã`, the map from `x_1` to `x_{2:N}`.
    pub fn model_map(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.system_matrix(q)
            .lu()
            .solve(&self.a_tilde)
            .ok_or_else(|| Error::Numerical("I + ℱ(Q) is singular".into()))
    }
}

/// States `x_1 … x_N` and inputs `u_1 … u_{N−1}` from the dense stacked solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

pub fn pmp_trajectory_oracle(
    dyn_: &SystemDynamics,
    q: &CostMatrix,
    x1: &DVector<f64>,
    horizon: usize,
) -> Result<OracleTrajectory> {
    let ops = PmpOperators::new(dyn_, horizon)?;
    let (n, m) = (ops.n, ops.m);
    if x1.len() != n || q.n() != n {
        return Err(Error::Dimension("x1 and Q must match the state dimension".into()));
    }
    let rhs = &ops.a_tilde * x1;
    let stack = ops
        .system_matrix(q.matrix())
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("I + ℱ(Q) is singular".into()))?;
    let u = -(ops.l.transpose() * kron_identity(horizon - 1, q.matrix()) * &stack);
    let mut xs = vec![x1.clone()];
    xs.extend((0..horizon - 1).map(|j| stack.rows(j * n, n).into_owned()));
    Ok(OracleTrajectory { x: xs, u: (0..horizon - 1).map(|k| u.rows(k * m, m).into_owned()).collect() })
}

/// Linearized identifiability margin of `Q ↦ (I + ℱ(Q))⁻¹Ã` around `Q̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearKernelReport {
    /// Smallest gain of the linearized map over unit-Frobenius symmetric `ΔQ`.
    pub margin: f64,
    /// `margin / largest gain`.
    pub relative_margin: f64,
    /// Minimizing direction, unit Frobenius norm.
    pub delta_q: DMatrix<f64>,
    /// Exact model distance `‖M(Q̄+εΔQ) − M(Q̄)‖_F / ε` along `delta_q`, `ε` the probe step.
    pub model_distance: f64,
    pub step: f64,
}

/// `‖M(Q+ΔQ) − M(Q)‖_F` for the model map `M`.
pub fn model_distance(dyn_: &SystemDynamics, q: &DMatrix<f64>, dq: &DMatrix<f64>, horizon: usize) -> Result<f64> {
    let ops = PmpOperators::new(dyn_, horizon)?;
    Ok(frob(&(ops.model_map(&(q + dq))? - ops.model_map(q)?)))
}

pub fn near_kernel_probe(dyn_: &SystemDynamics, q_bar: &DMatrix<f64>, horizon: usize) -> Result<NearKernelReport> {
    let ops = PmpOperators::new(dyn_, horizon)?;
    let n = ops.n;
    let d = svec_len(n);
    let step = 1e-5 * frob(q_bar).max(1e-12);
    let base_len = (horizon - 1) * n * n;
    let mut jac = DMatrix::zeros(base_len, d);
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = step;
        let dq = smat(&e, n);
        let diff = (ops.model_map(&(q_bar + &dq))? - ops.model_map(&(q_bar - &dq))?) / (2.0 * step);
        jac.column_mut(k).copy_from_slice(diff.as_slice());
    }
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let (imin, &smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Numerical("empty Jacobian".into()))?;
    let smax = svd.singular_values.max();
    let dir: Vec<f64> = v_t.row(imin).iter().copied().collect();
    let delta_q = smat(&dir, n);
    let model_distance = frob(&(ops.model_map(&(q_bar + &delta_q * step))? - ops.model_map(q_bar)?)) / step;
    Ok(NearKernelReport {
        margin: smin,
        relative_margin: if smax > 0.0 { smin / smax } else { 0.0 },
        delta_q,
        model_distance,
        step,
    })
}

/// Absolute floor for denominators of relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-12;

pub fn relative_error(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    frob(&(est - truth)) / frob(truth).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rel_q: f64,
    pub rel_k_min: f64,
    pub rel_k_max: f64,
    pub rel_acl_min: f64,
    pub rel_acl_max: f64,
    /// `|H(estimate) − H(truth)|`, when the caller supplies both values.
    pub objective_gap: Option<f64>,
}

fn min_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Errors of an estimate `(Q_est, K_est)` against the truth `Q̄`, whose gains
/// come from the exact DRE over the same horizon.
pub fn error_metrics(
    dyn_: &SystemDynamics,
    q_est: &DMatrix<f64>,
    k_est: &GainSchedule,
    q_true: &CostMatrix,
) -> Result<ErrorMetrics> {
    let horizon = k_est.len() + 1;
    let k_true = gains_from_riccati(dyn_, &solve_dre(dyn_, q_true, horizon)?)?;
    let acl = |k: &GainSchedule| -> Vec<DMatrix<f64>> {
        k.matrices().iter().map(|kt| dyn_.a() + dyn_.b() * kt).collect()
    };
    let (acl_est, acl_true) = (acl(k_est), acl(&k_true));
    let (rel_k_min, rel_k_max) =
        min_max(k_est.matrices().iter().zip(k_true.matrices()).map(|(e, t)| relative_error(e, t)));
    let (rel_acl_min, rel_acl_max) = min_max(acl_est.iter().zip(&acl_true).map(|(e, t)| relative_error(e, t)));
    Ok(ErrorMetrics {
        rel_q: relative_error(q_est, q_true.matrix()),
        rel_k_min,
        rel_k_max,
        rel_acl_min,
        rel_acl_max,
        objective_gap: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Least-squares fit of `log y = intercept + slope·log x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(Error::Invalid("need at least 3 points for a slope fit".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Invalid("log–log fit requires positive values".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("abscissae must not all coincide".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    Ok(LogLogFit { slope, intercept, residual })
}

/// `Π_{k=1}^{t} A_cl(k)` for `t = 1 … N−1` under the optimal gains for `Q`.
pub fn closed_loop_products(dyn_: &SystemDynamics, q: &CostMatrix, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    let gains = gains_from_riccati(dyn_, &solve_dre(dyn_, q, horizon)?)?;
    let acl = closed_loop_matrices(dyn_, &gains)?;
    let mut out = Vec::with_capacity(acl.len());
    let mut prod = DMatrix::identity(dyn_.n(), dyn_.n());
    for a in &acl {
        prod = a * prod;
        out.push(prod.clone());
    }
    Ok(out)
}

/// Frobenius distance between the closed-loop product stacks of `Q` and `Q′`.
pub fn closed_loop_gap(dyn_: &SystemDynamics, q: &CostMatrix, q_prime: &CostMatrix, horizon: usize) -> Result<f64> {
    let a = closed_loop_products(dyn_, q, horizon)?;
    let b = closed_loop_products(dyn_, q_prime, horizon)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt())
}

/// Upper bounds `b_1 … b_N` on `‖P_t‖_F` over the noisy feasible set:
/// `b_N = √φ` and
/// `b_t = ‖A‖²b_{t+1} + √φ + ‖A‖²‖B‖²·b_{t+1}²·√m`,
/// using `‖(BᵀPB + I)⁻¹‖_F ≤ √m`.
pub fn riccati_norm_bounds(dyn_: &SystemDynamics, phi: f64, horizon: usize) -> Vec<f64> {
    let a2 = frob(dyn_.a()).powi(2);
    let b2 = frob(dyn_.b()).powi(2);
    let sq_m = (dyn_.m() as f64).sqrt();
    let root_phi = phi.max(0.0).sqrt();
    let mut bounds = vec![0.0; horizon];
    bounds[horizon - 1] = root_phi;
    for t in (0..horizon - 1).rev() {
        let next = bounds[t + 1];
        bounds[t] = a2 * next + root_phi + a2 * b2 * next * next * sq_m;
    }
    bounds
}

/// Linear bounds `b_N = √φ`, `b_t = ‖A‖²b_{t+1} + √φ` on `‖P_t‖_F` over the
/// noisy feasible set, from `0 ⪯ P_t ⪯ Ric(P_{t+1}) ⪯ AᵀP_{t+1}A + Q`.
/// Never larger than [`riccati_norm_bounds`], and finite where that overflows.
pub fn riccati_norm_bounds_sharp(dyn_: &SystemDynamics, phi: f64, horizon: usize) -> Vec<f64> {
    let a2 = frob(dyn_.a()).powi(2);
    let root_phi = phi.max(0.0).sqrt();
    let mut bounds = vec![0.0; horizon];
    bounds[horizon - 1] = root_phi;
    for t in (0..horizon - 1).rev() {
        bounds[t] = a2 * bounds[t + 1] + root_phi;
    }
    bounds
}

/// Singular values of `Γ_k`, descending.
pub fn controllability_spectrum(dyn_: &SystemDynamics, k: usize) -> Vec<f64> {
    singular_values(&controllability_matrix(dyn_, k))
}
