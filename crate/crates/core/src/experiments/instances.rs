//! Random problem instances.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    add_noise, discretize, sample_initial_states, shuffle, simulate_ensemble, snr_db, EnsembleObservations,
    EnsembleTruth, NoiseModel, PermutationSchedule, StateBox,
};
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::lqr::{gains_from_riccati, solve_dre, CostMatrix, GainSchedule, SystemDynamics, ValidityTolerances};
use crate::rng::{self, tag};

pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

/// Sample period used by every experiment.
pub const DEFAULT_DT: f64 = 0.05;

fn normal_matrix(r: &mut rng::StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// `Q̄ = G·Gᵀ`, `G` standard normal, redrawn until `‖Q̄‖_F² ≤ φ`.
pub fn sample_cost(n: usize, phi: f64, seed: u64) -> Result<CostMatrix> {
    let mut r = rng::stream(seed, &[tag::COST]);
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let g = normal_matrix(&mut r, n, n);
        let q = symmetrize(&(&g * g.transpose()));
        if q.norm_squared() <= phi {
            return CostMatrix::new(q)?.with_bound(phi);
        }
    }
    Err(Error::Invalid(format!("no Q̄ with ‖Q̄‖_F² ≤ {phi} in {MAX_REJECTION_ATTEMPTS} draws")))
}

/// Continuous-time model and its zero-order-hold discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSystem {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub dt: f64,
    pub dynamics: SystemDynamics,
}

impl SampledSystem {
    pub fn new(a_hat: DMatrix<f64>, b_hat: DMatrix<f64>, dt: f64) -> Result<Self> {
        let dynamics = discretize(&a_hat, &b_hat, dt)?;
        Ok(Self { a_hat, b_hat, dt, dynamics })
    }
}

/// `Â`, `B̂` with standard-normal entries, redrawn until the sampled pair is
/// invertible, full column rank and controllable.
pub fn sample_system(n: usize, m: usize, dt: f64, seed: u64) -> Result<SampledSystem> {
    let mut r = rng::stream(seed, &[tag::SYSTEM]);
    let tol = ValidityTolerances::default();
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let sys = SampledSystem::new(normal_matrix(&mut r, n, n), normal_matrix(&mut r, n, m), dt)?;
        if sys.dynamics.validity(&tol).is_valid() {
            return Ok(sys);
        }
    }
    Err(Error::Precondition(format!("no valid system in {MAX_REJECTION_ATTEMPTS} draws")))
}

/// `Â = 0`, `B̂ = I` on the plane: `A = I`, `B = dt·I`.
pub fn double_integrator(dt: f64) -> Result<SampledSystem> {
    SampledSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), dt)
}

/// One generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub truth: EnsembleTruth,
    pub gains: GainSchedule,
    /// Observed (possibly noisy) snapshots before shuffling.
    pub observed: Vec<DMatrix<f64>>,
    pub noise: Option<Vec<DMatrix<f64>>>,
    pub observations: EnsembleObservations,
    pub schedule: PermutationSchedule,
}

/// Simulates `agents` optimal trajectories from uniform starts, adds noise
/// when `sigma` is given, and shuffles each snapshot.
pub fn generate_dataset(
    dyn_: &SystemDynamics,
    q: &CostMatrix,
    horizon: usize,
    agents: usize,
    bounds: &StateBox,
    sigma: Option<&DMatrix<f64>>,
    seed: u64,
) -> Result<GeneratedDataset> {
    let gains = gains_from_riccati(dyn_, &solve_dre(dyn_, q, horizon)?)?;
    let x1 = sample_initial_states(agents, bounds, seed)?;
    let truth = simulate_ensemble(dyn_, &gains, &x1)?;
    dataset_from_truth(truth, gains, sigma, seed)
}

/// Noise and shuffling stages of [`generate_dataset`] for a given population.
pub fn dataset_from_truth(
    truth: EnsembleTruth,
    gains: GainSchedule,
    sigma: Option<&DMatrix<f64>>,
    seed: u64,
) -> Result<GeneratedDataset> {
    let (observed, noise, snr) = match sigma {
        Some(s) => {
            let noisy = add_noise(&truth.states, &NoiseModel { sigma: s.clone(), seed })?;
            let snr = snr_db(&truth.states, &noisy.noise)?;
            (noisy.observed, Some(noisy.noise), Some(snr))
        }
        None => (truth.states.clone(), None, None),
    };
    let (mut observations, schedule) = shuffle(&observed, seed)?;
    observations.meta.snr_db = snr;
    Ok(GeneratedDataset { truth, gains, observed, noise, observations, schedule })
}
