//! Multi-agent dataset generation.
//!
//! Snapshot sequences are stored as `Vec<DMatrix<f64>>` of length `N`, each
//! entry `n×M` with one column per agent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::lqr::{simulate_agent, GainSchedule, SystemDynamics};
use crate::rng::{self, tag};

/// `A = exp(Â·dt)`, `B = ∫₀^dt exp(Â s) ds · B̂`, both read off the exponential
/// of the augmented generator `[[Â, B̂], [0, 0]]·dt`.
pub fn discretize(a_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>, dt: f64) -> Result<SystemDynamics> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Invalid(format!("sample period must be positive, got {dt}")));
    }
    let n = a_hat.nrows();
    if !a_hat.is_square() || b_hat.nrows() != n {
        return Err(Error::Dimension("Â must be n×n and B̂ n×m".into()));
    }
    let m = b_hat.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a_hat * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b_hat * dt));
    let e = aug.exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    SystemDynamics::new(e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Axis-aligned box for initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBox {
    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self { lower: vec![lower; n], upper: vec![upper; n] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::Dimension("box bounds must have equal, nonzero length".into()));
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Invalid(format!("invalid box interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// `n×M` matrix of i.i.d. uniform starts; agent `i` draws from its own stream.
pub fn sample_initial_states(agents: usize, bounds: &StateBox, seed: u64) -> Result<DMatrix<f64>> {
    bounds.validate()?;
    if agents == 0 {
        return Err(Error::Invalid("agent count must be ≥ 1".into()));
    }
    let n = bounds.dim();
    let mut x = DMatrix::zeros(n, agents);
    for i in 0..agents {
        let mut r = rng::stream(seed, &[tag::INITIAL_STATE, i as u64]);
        for k in 0..n {
            let (lo, hi) = (bounds.lower[k], bounds.upper[k]);
            x[(k, i)] = if lo == hi { lo } else { r.random_range(lo..hi) };
        }
    }
    Ok(x)
}

/// Clean closed-loop states and inputs for a whole population.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTruth {
    /// `X_1 … X_N`.
    pub states: Vec<DMatrix<f64>>,
    /// `U_1 … U_{N−1}`, `m×M`.
    pub inputs: Vec<DMatrix<f64>>,
}

impl EnsembleTruth {
    pub fn agents(&self) -> usize {
        self.states[0].ncols()
    }

    /// `Σ_i Σ_t ‖u_t^i‖²`.
    pub fn control_energy(&self) -> f64 {
        self.inputs.iter().map(|u| u.norm_squared()).sum()
    }

    /// Restriction to the first `agents` columns.
    pub fn prefix(&self, agents: usize) -> Self {
        let cut = |v: &Vec<DMatrix<f64>>| v.iter().map(|m| m.columns(0, agents).into_owned()).collect();
        Self { states: cut(&self.states), inputs: cut(&self.inputs) }
    }
}

pub fn simulate_ensemble(dyn_: &SystemDynamics, gains: &GainSchedule, x1: &DMatrix<f64>) -> Result<EnsembleTruth> {
    let (n, m, agents) = (dyn_.n(), dyn_.m(), x1.ncols());
    let horizon = gains.len() + 1;
    let mut states = vec![DMatrix::zeros(n, agents); horizon];
    let mut inputs = vec![DMatrix::zeros(m, agents); horizon - 1];
    for i in 0..agents {
        let traj = simulate_agent(dyn_, gains, &x1.column(i).into_owned())?;
        for (t, x) in traj.x.iter().enumerate() {
            states[t].set_column(i, x);
        }
        for (t, u) in traj.u.iter().enumerate() {
            inputs[t].set_column(i, u);
        }
    }
    Ok(EnsembleTruth { states, inputs })
}

/// Per-timestep column permutations; `Y_t[:, j] = X_t[:, perms[t][j]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSchedule {
    pub perms: Vec<Vec<usize>>,
}

impl PermutationSchedule {
    pub fn identity(horizon: usize, agents: usize) -> Self {
        Self { perms: vec![(0..agents).collect(); horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.perms.len()
    }

    pub fn is_valid(&self) -> bool {
        let Some(first) = self.perms.first() else { return true };
        let agents = first.len();
        let bijective = self.perms.iter().all(|p| {
            let mut seen = vec![false; agents];
            p.len() == agents && p.iter().all(|&i| i < agents && !std::mem::replace(&mut seen[i], true))
        });
        bijective && first.iter().enumerate().all(|(j, &i)| i == j)
    }

    /// Reorders the columns of `states` according to the schedule.
    pub fn apply(&self, states: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        if states.len() != self.perms.len() {
            return Err(Error::Dimension("schedule and snapshot horizons differ".into()));
        }
        states
            .iter()
            .zip(&self.perms)
            .map(|(x, p)| {
                if p.len() != x.ncols() {
                    return Err(Error::Dimension("permutation length differs from agent count".into()));
                }
                Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, j| x[(r, p[j])]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub snr_db: Option<f64>,
    /// Ground truth, kept for testing only.
    pub true_schedule: Option<PermutationSchedule>,
}

/// Shuffled snapshots and their Gram matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleObservations {
    pub y: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
    pub agents: usize,
    pub meta: EnsembleMeta,
}

impl EnsembleObservations {
    /// Wraps already-shuffled snapshots.
    pub fn from_snapshots(y: Vec<DMatrix<f64>>, seed: u64) -> Result<Self> {
        let agents = y.first().map(|m| m.ncols()).ok_or_else(|| Error::Invalid("empty snapshot sequence".into()))?;
        if y.iter().any(|m| m.shape() != y[0].shape()) {
            return Err(Error::Dimension("snapshots must share a shape".into()));
        }
        let g = y.iter().map(gram_matrix).collect();
        Ok(Self { y, g, agents, meta: EnsembleMeta { seed, snr_db: None, true_schedule: None } })
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }
}

pub fn shuffle(states: &[DMatrix<f64>], seed: u64) -> Result<(EnsembleObservations, PermutationSchedule)> {
    let first = states.first().ok_or_else(|| Error::Invalid("empty snapshot sequence".into()))?;
    if states.iter().any(|m| m.shape() != first.shape()) {
        return Err(Error::Dimension("snapshots must share a shape".into()));
    }
    let agents = first.ncols();
    let perms = (0..states.len())
        .map(|t| {
            let mut p: Vec<usize> = (0..agents).collect();
            if t > 0 {
                p.shuffle(&mut rng::stream(seed, &[tag::PERMUTATION, t as u64]));
            }
            p
        })
        .collect();
    let schedule = PermutationSchedule { perms };
    let mut obs = EnsembleObservations::from_snapshots(schedule.apply(states)?, seed)?;
    obs.meta.true_schedule = Some(schedule.clone());
    Ok((obs, schedule))
}

/// Zero-mean Gaussian measurement noise with known covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: DMatrix<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySnapshots {
    pub observed: Vec<DMatrix<f64>>,
    pub noise: Vec<DMatrix<f64>>,
}

/// Adds an independent `N(0, Σ)` draw to every column at every timestep,
/// including `t = 1`. The draw for agent `i` at time `t` depends only on
/// `(seed, i, t)`.
pub fn add_noise(states: &[DMatrix<f64>], noise: &NoiseModel) -> Result<NoisySnapshots> {
    let n = noise.sigma.nrows();
    if states.iter().any(|x| x.nrows() != n) {
        return Err(Error::Dimension("Σ does not match the state dimension".into()));
    }
    if noise.sigma.iter().all(|&v| v == 0.0) {
        return Ok(NoisySnapshots {
            observed: states.to_vec(),
            noise: states.iter().map(|x| DMatrix::zeros(x.nrows(), x.ncols())).collect(),
        });
    }
    let l = psd_factor(&noise.sigma)?;
    let mut observed = Vec::with_capacity(states.len());
    let mut realized = Vec::with_capacity(states.len());
    for (t, x) in states.iter().enumerate() {
        let mut v = DMatrix::zeros(n, x.ncols());
        for i in 0..x.ncols() {
            let mut r = rng::stream(noise.seed, &[tag::NOISE, i as u64, t as u64]);
            let z = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
            v.set_column(i, &(&l * z));
        }
        observed.push(x + &v);
        realized.push(v);
    }
    Ok(NoisySnapshots { observed, noise: realized })
}

/// Streaming outer-product accumulator: `O(n²)` memory, one pass.
///
/// The floating-point result depends on the order columns arrive in; use
/// [`gram_matrix`] when bit-exact permutation invariance is needed.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    g: DMatrix<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(n: usize) -> Self {
        Self { g: DMatrix::zeros(n, n), count: 0 }
    }

    pub fn push(&mut self, y: &[f64]) {
        let n = self.g.nrows();
        assert_eq!(y.len(), n, "column length differs from accumulator dimension");
        for j in 0..n {
            for i in 0..=j {
                self.g[(i, j)] += y[i] * y[j];
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> DMatrix<f64> {
        let n = self.g.nrows();
        for j in 0..n {
            for i in 0..j {
                self.g[(j, i)] = self.g[(i, j)];
            }
        }
        self.g
    }
}

/// `Σ_i y_i y_iᵀ` over a stream of columns.
pub fn accumulate_grams<'a, I>(n: usize, columns: I) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = GramAccumulator::new(n);
    for c in columns {
        acc.push(c);
    }
    acc.finish()
}

/// `Y Yᵀ` with columns visited in a canonical (lexicographic) order, so the
/// result is bit-identical for every column permutation of `Y`.
pub fn gram_matrix(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let mut order: Vec<usize> = (0..y.ncols()).collect();
    order.sort_by(|&a, &b| {
        y.column(a)
            .iter()
            .zip(y.column(b).iter())
            .map(|(x, z)| x.total_cmp(z))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let data = y.as_slice();
    accumulate_grams(n, order.iter().map(|&j| &data[j * n..(j + 1) * n]))
}

/// `scale·G·Gᵀ` with `G` an `n×degrees` standard-normal matrix.
pub fn sample_wishart_covariance(n: usize, scale: f64, degrees: usize, seed: u64) -> Result<DMatrix<f64>> {
    if degrees < n {
        return Err(Error::Invalid(format!("Wishart degrees ({degrees}) must be ≥ n ({n})")));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::Invalid(format!("Wishart scale must be ≥ 0, got {scale}")));
    }
    let mut r = rng::stream(seed, &[tag::WISHART]);
    let g = DMatrix::from_fn(n, degrees, |_, _| r.sample::<f64, _>(StandardNormal));
    Ok(crate::linalg::symmetrize(&(&g * g.transpose() * scale)))
}

/// Dataset SNR in dB: the mean over agents of `Σ_t‖x_t‖² / Σ_t‖v_t‖²`.
/// Returns `+∞` when any trajectory has zero noise energy.
pub fn snr_db(clean: &[DMatrix<f64>], noise: &[DMatrix<f64>]) -> Result<f64> {
    if clean.len() != noise.len() || clean.iter().zip(noise).any(|(x, v)| x.shape() != v.shape()) {
        return Err(Error::Dimension("clean states and noise must have matching shapes".into()));
    }
    let agents = clean.first().map(|x| x.ncols()).unwrap_or(0);
    if agents == 0 {
        return Err(Error::Invalid("no trajectories".into()));
    }
    let mut total = 0.0;
    for i in 0..agents {
        let signal: f64 = clean.iter().map(|x| x.column(i).norm_squared()).sum();
        let noise_e: f64 = noise.iter().map(|v| v.column(i).norm_squared()).sum();
        if noise_e == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += signal / noise_e;
    }
    Ok(10.0 * (total / agents as f64).log10())
}
