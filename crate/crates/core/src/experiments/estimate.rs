//! Estimation on a stored dataset.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::{error_metrics, ErrorMetrics};
use crate::dataset::{rows, Dataset};
use crate::error::{Error, Result};
use crate::ioc::{default_phi, estimate_noiseless, estimate_noisy, evaluate_h, recover_permutations, FeasibilityReport, IocOptions, Mode};
use crate::lqr::solve_dre;
use crate::sdp::{SolverReport, SolverStatus};

pub const ESTIMATE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    /// Share of `(t, column)` entries matching the stored schedule.
    pub accuracy: Option<f64>,
    pub ambiguous_steps: Vec<usize>,
    pub perms: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub schema_version: u32,
    pub mode: Mode,
    pub agents: usize,
    pub scale: f64,
    pub phi: Option<f64>,
    #[serde(with = "rows")]
    pub q_est: DMatrix<f64>,
    #[serde(with = "rows::list")]
    pub k_est: Vec<DMatrix<f64>>,
    #[serde(with = "rows::list")]
    pub p_est: Vec<DMatrix<f64>>,
    pub objective: f64,
    /// Objective at the stored `Q̄` and its Riccati matrices.
    pub objective_truth: Option<f64>,
    pub metrics: Option<ErrorMetrics>,
    pub report: SolverReport,
    pub feasibility: FeasibilityReport,
    pub warnings: Vec<String>,
    pub permutations: Option<PermutationSummary>,
}

impl EstimateOutput {
    pub fn is_optimal(&self) -> bool {
        self.report.status == SolverStatus::Optimal
    }
}

/// Runs the estimator in `mode`, or in noisy mode exactly when the dataset
/// carries `Σ`. Metrics are filled in when the dataset stores `Q̄`.
pub fn estimate_dataset(
    data: &Dataset,
    mode: Option<Mode>,
    options: &IocOptions,
    recover: bool,
) -> Result<EstimateOutput> {
    let dyn_ = data.dynamics()?;
    let n = dyn_.n();
    let agents = data.manifest.agents;
    let mode = mode.unwrap_or(if data.sigma().is_some() { Mode::Noisy } else { Mode::Noiseless });
    let (est, phi) = match mode {
        Mode::Noiseless => (estimate_noiseless(&data.grams, &dyn_, agents, options)?, options.phi),
        Mode::Noisy => {
            let sigma = data
                .sigma()
                .ok_or_else(|| Error::Invalid("noisy mode needs a dataset with a noise covariance".into()))?;
            let phi = options.phi.unwrap_or_else(|| default_phi(n));
            (estimate_noisy(&data.grams, &dyn_, sigma, phi, agents, options)?, Some(phi))
        }
    };
    let q_true = data.q_true()?;
    let (metrics, objective_truth) = match &q_true {
        Some(q) => {
            let mut m = error_metrics(&dyn_, est.q_est.matrix(), &est.k_est, q)?;
            let truth = match mode {
                Mode::Noiseless => Some(evaluate_h(q.matrix(), solve_dre(&dyn_, q, data.manifest.horizon)?.matrices(), &data.grams)),
                Mode::Noisy => None,
            };
            m.objective_gap = truth.map(|h| (est.objective - h).abs());
            (Some(m), truth)
        }
        None => (None, None),
    };
    let permutations = if recover {
        let r = recover_permutations(&est.q_est, &dyn_, &data.snapshots)?;
        let accuracy = data.manifest.permutations.as_ref().map(|truth| {
            let total: usize = truth.perms.iter().map(Vec::len).sum();
            let hits: usize = truth
                .perms
                .iter()
                .zip(&r.schedule.perms)
                .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x == y).count())
                .sum();
            hits as f64 / total.max(1) as f64
        });
        Some(PermutationSummary { accuracy, ambiguous_steps: r.ambiguous_steps, perms: r.schedule.perms })
    } else {
        None
    };
    Ok(EstimateOutput {
        schema_version: ESTIMATE_SCHEMA_VERSION,
        mode,
        agents,
        scale: est.scale,
        phi,
        q_est: est.q_est.matrix().clone(),
        k_est: est.k_est.matrices().to_vec(),
        p_est: est.p_est,
        objective: est.objective,
        objective_truth,
        metrics,
        report: est.report,
        feasibility: est.feasibility,
        warnings: est.warnings,
        permutations,
    })
}
