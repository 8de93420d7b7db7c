//! Forward discrete-time finite-horizon LQR with `S = Q` and `R = I`.
//!
//! Time indices follow the usual 1-based convention in the API
//! (`P_1 … P_N`, `K_1 … K_{N-1}`); storage is 0-based.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frob, min_eigenvalue, rank, symmetrize, symmetrize_in_place};

/// Thresholds for the structural checks on `(A, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityTolerances {
    /// `σ_min(A) > invertibility·σ_max(A)`.
    pub invertibility: f64,
    /// Relative singular-value threshold for rank decisions.
    pub rank: f64,
}

impl Default for ValidityTolerances {
    fn default() -> Self {
        Self { invertibility: 1e-12, rank: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub invertible: bool,
    pub full_column_rank: bool,
    pub controllable: bool,
    pub min_singular_value_a: f64,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.invertible && self.full_column_rank && self.controllable
    }
}

/// Discrete-time pair `(A, B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemDynamics {
    /// Checks shapes and finiteness only; see [`SystemDynamics::validity`].
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("A must be square, got {:?}", a.shape())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {}×m with m ≥ 1, got {:?}",
                a.nrows(),
                b.shape()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("system matrices contain non-finite entries".into()));
        }
        Ok(Self { a, b })
    }

    /// Like [`SystemDynamics::new`] but also requires invertible `A`, full
    /// column rank `B` and controllability.
    pub fn new_valid(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let sys = Self::new(a, b)?;
        sys.require_valid(&ValidityTolerances::default())?;
        Ok(sys)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `[A^{n-1}B, …, AB, B]`.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        crate::analysis::controllability_matrix(self, self.n())
    }

    pub fn validity(&self, tol: &ValidityTolerances) -> Validity {
        let sv = linalg::singular_values(&self.a);
        let smax = sv.first().copied().unwrap_or(0.0);
        let smin = sv.last().copied().unwrap_or(0.0);
        Validity {
            invertible: smin > tol.invertibility * smax.max(f64::MIN_POSITIVE),
            full_column_rank: rank(&self.b, tol.rank) == self.m(),
            controllable: rank(&self.controllability_matrix(), tol.rank) == self.n(),
            min_singular_value_a: smin,
        }
    }

    pub fn require_valid(&self, tol: &ValidityTolerances) -> Result<()> {
        let v = self.validity(tol);
        if !v.invertible {
            return Err(Error::Precondition(format!(
                "A is not invertible (σ_min = {:e})",
                v.min_singular_value_a
            )));
        }
        if !v.full_column_rank {
            return Err(Error::Precondition("B does not have full column rank".into()));
        }
        if !v.controllable {
            return Err(Error::Precondition("(A, B) is not controllable".into()));
        }
        Ok(())
    }
}

/// Symmetric PSD state cost `Q` (also the terminal cost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    q: DMatrix<f64>,
    bound: Option<f64>,
}

impl CostMatrix {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Dimension(format!("Q must be square, got {:?}", q.shape())));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("Q contains non-finite entries".into()));
        }
        let asym = frob(&(&q - q.transpose()));
        if asym > 1e-8 * frob(&q).max(1.0) {
            return Err(Error::Invalid(format!("Q is not symmetric (‖Q − Qᵀ‖_F = {asym:e})")));
        }
        let q = symmetrize(&q);
        if !linalg::is_psd(&q) {
            return Err(Error::NotPsd { what: "Q".into(), min_eig: min_eigenvalue(&q) });
        }
        Ok(Self { q, bound: None })
    }

    pub fn zeros(n: usize) -> Self {
        Self { q: DMatrix::zeros(n, n), bound: None }
    }

    /// Attaches the bound `‖Q‖_F² ≤ φ`.
    pub fn with_bound(mut self, phi: f64) -> Result<Self> {
        let nrm2 = self.q.norm_squared();
        if nrm2 > phi {
            return Err(Error::Invalid(format!("‖Q‖_F² = {nrm2} exceeds bound φ = {phi}")));
        }
        self.bound = Some(phi);
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }
}

/// `P_1 … P_N` from the backward recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    p: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    pub fn from_matrices(p: Vec<DMatrix<f64>>) -> Self {
        Self { p }
    }

    pub fn horizon(&self) -> usize {
        self.p.len()
    }

    /// `P_t`, 1-based.
    pub fn p(&self, t: usize) -> &DMatrix<f64> {
        &self.p[t - 1]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    /// `‖P_t − Ric(P_{t+1})‖_F` for `t = 1 … N−1`.
    pub fn dre_residuals(&self, dyn_: &SystemDynamics, q: &CostMatrix) -> Vec<f64> {
        (0..self.p.len().saturating_sub(1))
            .map(|i| {
                let next = riccati_map(dyn_, &self.p[i + 1], q.matrix());
                frob(&(&self.p[i] - next))
            })
            .collect()
    }
}

/// `K_1 … K_{N−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    k: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn from_matrices(k: Vec<DMatrix<f64>>) -> Self {
        Self { k }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// `K_t`, 1-based.
    pub fn k(&self, t: usize) -> &DMatrix<f64> {
        &self.k[t - 1]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub agent_id: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    pub fn control_energy(&self) -> f64 {
        self.u.iter().map(|u| u.norm_squared()).sum()
    }
}

/// Adjoint states and optimality residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmpCertificate {
    /// `λ_2 … λ_N`.
    pub lambda: Vec<DVector<f64>>,
    /// `‖u_t + Bᵀλ_{t+1}‖` for `t = 1 … N−1`.
    pub stationarity: Vec<f64>,
    /// `‖x_{t+1} − A x_t − B u_t‖` for `t = 1 … N−1`.
    pub dynamics: Vec<f64>,
}

impl PmpCertificate {
    pub fn max_residual(&self) -> f64 {
        self.stationarity.iter().chain(&self.dynamics).copied().fold(0.0, f64::max)
    }
}

fn check_q(dyn_: &SystemDynamics, q: &DMatrix<f64>) -> Result<()> {
    if q.shape() != (dyn_.n(), dyn_.n()) {
        return Err(Error::Dimension(format!(
            "Q is {:?}, system has n = {}",
            q.shape(),
            dyn_.n()
        )));
    }
    Ok(())
}

/// `(BᵀPB + I)⁻¹ Bᵀ P A`, i.e. `−K` for the given `P_{t+1}`.
fn feedback_factor(dyn_: &SystemDynamics, p_next: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = (dyn_.a(), dyn_.b());
    let bt_p = b.transpose() * p_next;
    let mut r = &bt_p * b;
    for i in 0..dyn_.m() {
        r[(i, i)] += 1.0;
    }
    symmetrize_in_place(&mut r);
    let rhs = &bt_p * a;
    if let Some(ch) = r.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    // P_{t+1} slightly indefinite (e.g. an SDP iterate on the boundary).
    r.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("BᵀPB + I is singular".into()))
}

/// One backward Riccati step `Ric(P) = AᵀPA + Q − AᵀPB(BᵀPB+I)⁻¹BᵀPA`.
pub fn riccati_map(dyn_: &SystemDynamics, p_next: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let a = dyn_.a();
    let at_p = a.transpose() * p_next;
    let mut out = &at_p * a + q;
    match feedback_factor(dyn_, p_next) {
        Ok(x) => out -= &at_p * dyn_.b() * x,
        Err(_) => out.fill(f64::NAN),
    }
    symmetrize_in_place(&mut out);
    out
}

pub fn solve_dre(dyn_: &SystemDynamics, q: &CostMatrix, horizon: usize) -> Result<RiccatiSolution> {
    if horizon < 2 {
        return Err(Error::Invalid(format!("horizon N must be ≥ 2, got {horizon}")));
    }
    check_q(dyn_, q.matrix())?;
    let mut p = vec![DMatrix::zeros(dyn_.n(), dyn_.n()); horizon];
    p[horizon - 1] = q.matrix().clone();
    for t in (0..horizon - 1).rev() {
        let a = dyn_.a();
        let at_p = a.transpose() * &p[t + 1];
        let x = feedback_factor(dyn_, &p[t + 1])?;
        let mut next = &at_p * a + q.matrix() - &at_p * dyn_.b() * x;
        symmetrize_in_place(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite P at t = {}", t + 1)));
        }
        p[t] = next;
    }
    Ok(RiccatiSolution { p })
}

/// Gains from any sequence `P_1 … P_N` (DRE-exact or not).
pub fn gains_from_p(dyn_: &SystemDynamics, p: &[DMatrix<f64>]) -> Result<GainSchedule> {
    if p.len() < 2 {
        return Err(Error::Invalid("need at least two P matrices".into()));
    }
    for pt in p {
        check_q(dyn_, pt)?;
    }
    let k = p[1..]
        .iter()
        .map(|p_next| feedback_factor(dyn_, p_next).map(|x| -x))
        .collect::<Result<Vec<_>>>()?;
    Ok(GainSchedule { k })
}

pub fn gains_from_riccati(dyn_: &SystemDynamics, riccati: &RiccatiSolution) -> Result<GainSchedule> {
    gains_from_p(dyn_, riccati.matrices())
}

/// Reciprocal condition floor for the closed-loop invertibility check.
pub const CLOSED_LOOP_RCOND_FLOOR: f64 = 1e-12;

pub fn closed_loop_matrices(dyn_: &SystemDynamics, gains: &GainSchedule) -> Result<Vec<DMatrix<f64>>> {
    gains
        .matrices()
        .iter()
        .enumerate()
        .map(|(i, k)| {
            if k.shape() != (dyn_.m(), dyn_.n()) {
                return Err(Error::Dimension(format!("K_{} has shape {:?}", i + 1, k.shape())));
            }
            let acl = dyn_.a() + dyn_.b() * k;
            let rc = linalg::rcond(&acl);
            if rc < CLOSED_LOOP_RCOND_FLOOR {
                return Err(Error::SingularClosedLoop { t: i + 1, rcond: rc });
            }
            Ok(acl)
        })
        .collect()
}

pub fn simulate_agent(dyn_: &SystemDynamics, gains: &GainSchedule, x1: &DVector<f64>) -> Result<Trajectory> {
    if x1.len() != dyn_.n() {
        return Err(Error::Dimension(format!("x1 has length {}, expected {}", x1.len(), dyn_.n())));
    }
    let mut x = Vec::with_capacity(gains.len() + 1);
    let mut u = Vec::with_capacity(gains.len());
    x.push(x1.clone());
    for k in gains.matrices() {
        let xt = x.last().unwrap();
        let ut = k * xt;
        let next = dyn_.a() * xt + dyn_.b() * &ut;
        u.push(ut);
        x.push(next);
    }
    Ok(Trajectory { x, u, agent_id: 0 })
}

pub fn pmp_check(dyn_: &SystemDynamics, q: &CostMatrix, traj: &Trajectory) -> Result<PmpCertificate> {
    check_q(dyn_, q.matrix())?;
    let n_h = traj.x.len();
    if n_h < 2 || traj.u.len() != n_h - 1 {
        return Err(Error::Dimension("trajectory needs N states and N−1 inputs".into()));
    }
    let qm = q.matrix();
    // lambda[j] holds λ_{j+2}.
    let mut lambda = vec![DVector::zeros(dyn_.n()); n_h - 1];
    lambda[n_h - 2] = qm * &traj.x[n_h - 1];
    for j in (0..n_h - 2).rev() {
        lambda[j] = dyn_.a().transpose() * &lambda[j + 1] + qm * &traj.x[j + 1];
    }
    let stationarity = (0..n_h - 1)
        .map(|t| (&traj.u[t] + dyn_.b().transpose() * &lambda[t]).norm())
        .collect();
    let dynamics = (0..n_h - 1)
        .map(|t| (&traj.x[t + 1] - dyn_.a() * &traj.x[t] - dyn_.b() * &traj.u[t]).norm())
        .collect();
    Ok(PmpCertificate { lambda, stationarity, dynamics })
}

/// `x_NᵀQx_N + Σ_{t<N} (x_tᵀQx_t + ‖u_t‖²)`.
pub fn objective_value(q: &CostMatrix, traj: &Trajectory) -> f64 {
    let qm = q.matrix();
    let quad = |x: &DVector<f64>| x.dot(&(qm * x));
    let n_h = traj.x.len();
    let mut cost = quad(&traj.x[n_h - 1]);
    for t in 0..n_h - 1 {
        cost += quad(&traj.x[t]) + traj.u[t].norm_squared();
    }
    cost
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> (SystemDynamics, CostMatrix) {
        let d = SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        (d, CostMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap())
    }

    #[test]
    fn scalar_dre_gain_and_rollout() {
        let (d, q) = scalar();
        let ric = solve_dre(&d, &q, 2).unwrap();
        assert!((ric.p(1)[(0, 0)] - 1.5).abs() < 1e-14);
        assert!((ric.p(2)[(0, 0)] - 1.0).abs() < 1e-14);
        let k = gains_from_riccati(&d, &ric).unwrap();
        assert!((k.k(1)[(0, 0)] - -0.5).abs() < 1e-14);
        let acl = closed_loop_matrices(&d, &k).unwrap();
        assert!((acl[0][(0, 0)] - 0.5).abs() < 1e-14);
        let traj = simulate_agent(&d, &k, &DVector::from_element(1, 2.0)).unwrap();
        assert!((traj.x[1][0] - 1.0).abs() < 1e-14);
        assert!((traj.u[0][0] - -1.0).abs() < 1e-14);
        assert!((objective_value(&q, &traj) - 6.0).abs() < 1e-14);
        assert!(pmp_check(&d, &q, &traj).unwrap().max_residual() <= 1e-12);
    }

    #[test]
    fn zero_cost_is_a_fixed_point() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let d = SystemDynamics::new(a.clone(), b).unwrap();
        let q = CostMatrix::zeros(2);
        let ric = solve_dre(&d, &q, 7).unwrap();
        assert!(ric.matrices().iter().all(|p| p.iter().all(|&v| v == 0.0)));
        let k = gains_from_riccati(&d, &ric).unwrap();
        assert!(k.matrices().iter().all(|k| k.iter().all(|&v| v == 0.0)));
        for acl in closed_loop_matrices(&d, &k).unwrap() {
            assert_eq!(acl, a);
        }
        let traj = simulate_agent(&d, &k, &DVector::from_row_slice(&[1.0, -1.0])).unwrap();
        let cert = pmp_check(&d, &q, &traj).unwrap();
        assert!(cert.lambda.iter().all(|l| l.norm() == 0.0));
        assert_eq!(cert.max_residual(), 0.0);
        assert_eq!(objective_value(&q, &traj), 0.0);
    }

    #[test]
    fn zero_initial_state_gives_zero_trajectory() {
        let (d, q) = scalar();
        let k = gains_from_riccati(&d, &solve_dre(&d, &q, 5).unwrap()).unwrap();
        let traj = simulate_agent(&d, &k, &DVector::zeros(1)).unwrap();
        assert!(traj.x.iter().chain(&traj.u).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn perturbed_input_violates_stationarity() {
        let (d, q) = scalar();
        let k = gains_from_riccati(&d, &solve_dre(&d, &q, 4).unwrap()).unwrap();
        let mut traj = simulate_agent(&d, &k, &DVector::from_element(1, 2.0)).unwrap();
        traj.u[1][0] += 1.0;
        // keep the trajectory dynamically feasible
        for t in 1..traj.u.len() {
            traj.x[t + 1] = d.a() * &traj.x[t] + d.b() * &traj.u[t];
        }
        let cert = pmp_check(&d, &q, &traj).unwrap();
        assert!(cert.stationarity.iter().copied().fold(0.0, f64::max) >= 0.99);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (d, q) = scalar();
        assert!(solve_dre(&d, &q, 1).is_err());
        assert!(CostMatrix::new(DMatrix::from_element(1, 1, -1.0)).is_err());
        assert!(CostMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        let q2 = CostMatrix::new(DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(solve_dre(&d, &q2, 3), Err(Error::Dimension(_))));
        assert!(SystemDynamics::new(DMatrix::identity(2, 2), DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn validity_flags() {
        let ok = SystemDynamics::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!(ok.validity(&ValidityTolerances::default()).is_valid());
        // B lies in an A-invariant subspace.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let bad = SystemDynamics::new(a, b).unwrap();
        let v = bad.validity(&ValidityTolerances::default());
        assert!(v.invertible && v.full_column_rank && !v.controllable);
        assert!(bad.require_valid(&ValidityTolerances::default()).is_err());
        let singular = SystemDynamics::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(!singular.validity(&ValidityTolerances::default()).invertible);
    }
}
