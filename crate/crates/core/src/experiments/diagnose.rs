//! Conditioning and identifiability-margin report for one system.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::{condition_report, controllability_spectrum, near_kernel_probe, ConditionReport};
use crate::dataset::rows;
use crate::error::Result;
use crate::lqr::{CostMatrix, SystemDynamics, ValidityTolerances};

pub const DIAGNOSE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearKernel {
    pub margin: f64,
    pub relative_margin: f64,
    pub model_distance: f64,
    pub step: f64,
    #[serde(with = "rows")]
    pub delta_q: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub condition: ConditionReport,
    /// Singular values of `Γ_n`, descending.
    pub controllability_spectrum: Vec<f64>,
    #[serde(with = "rows")]
    pub q_bar: DMatrix<f64>,
    pub near_kernel: NearKernel,
}

/// Fails with a precondition error unless `(A, B)` is valid: `A`
/// invertible, `B` full column rank, the pair controllable.
pub fn diagnose(dyn_: &SystemDynamics, q_bar: &CostMatrix, horizon: usize, threshold: f64) -> Result<DiagnoseReport> {
    dyn_.require_valid(&ValidityTolerances::default())?;
    let probe = near_kernel_probe(dyn_, q_bar.matrix(), horizon)?;
    Ok(DiagnoseReport {
        schema_version: DIAGNOSE_SCHEMA_VERSION,
        n: dyn_.n(),
        m: dyn_.m(),
        horizon,
        condition: condition_report(dyn_, horizon, threshold),
        controllability_spectrum: controllability_spectrum(dyn_, dyn_.n()),
        q_bar: q_bar.matrix().clone(),
        near_kernel: NearKernel {
            margin: probe.margin,
            relative_margin: probe.relative_margin,
            model_distance: probe.model_distance,
            step: probe.step,
            delta_q: probe.delta_q,
        },
    })
}
