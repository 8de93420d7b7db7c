//! One dataset from a config.

use crate::dataset::{Dataset, DatasetInfo};
use crate::error::Result;
use crate::experiments::config::{ExperimentConfig, SystemKind};
use crate::experiments::instances::generate_dataset;

/// Draws system, `Q̄`, `Σ`, starts, noise and permutations from `config.seed`
/// and packages the shuffled snapshots with their ground truth.
pub fn simulate(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let seed = config.seed;
    let dyn_ = config.build_system(seed)?;
    let n = dyn_.n();
    let q = config.build_cost(n, seed)?;
    let sigma = config.build_sigma(n, seed)?;
    let bounds = config.state_box(n);
    let data = generate_dataset(&dyn_, &q, config.horizon, config.agents, &bounds, sigma.as_ref(), seed)?;
    let info = DatasetInfo {
        seed,
        dt: (config.system.kind != SystemKind::Discrete).then_some(config.system.dt),
        bounds: Some(bounds),
        phi: config.cost.q.is_none().then_some(config.cost.phi),
        sigma,
        snr_db: data.observations.meta.snr_db,
        q_true: Some(q.matrix().clone()),
        permutations: Some(data.schedule),
    };
    Dataset::new(&dyn_, data.observations.y, info)
}
