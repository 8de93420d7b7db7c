//! Per-trial result rows and experiment summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{ConditionReport, ErrorMetrics};
use crate::error::Result;
use crate::sdp::{SolverReport, SolverStatus};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// One `(trial, M)` cell. Metric fields are empty when the trial failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub trial: usize,
    pub seed: u64,
    pub agents: usize,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub scale: Option<f64>,
    pub phi: Option<f64>,
    /// `optimal`, `max_iter`, `numerical_failure` or `error`.
    pub status: String,
    pub iterations: Option<usize>,
    pub outer_iterations: Option<usize>,
    pub relative_gap: Option<f64>,
    pub min_block_eigenvalue: Option<f64>,
    pub rel_q: Option<f64>,
    pub rel_k_min: Option<f64>,
    pub rel_k_max: Option<f64>,
    pub rel_acl_min: Option<f64>,
    pub rel_acl_max: Option<f64>,
    pub objective: Option<f64>,
    pub objective_truth: Option<f64>,
    pub objective_gap: Option<f64>,
    pub snr_db: Option<f64>,
    pub cond_gamma_n: Option<f64>,
    pub cond_gamma_stacked: Option<f64>,
    pub ill_conditioned: Option<bool>,
    pub gram_time_s: Option<f64>,
    pub solve_time_s: Option<f64>,
    pub total_time_s: Option<f64>,
    pub error: Option<String>,
}

pub fn status_label(status: SolverStatus) -> &'static str {
    match status {
        SolverStatus::Optimal => "optimal",
        SolverStatus::MaxIter => "max_iter",
        SolverStatus::NumericalFailure => "numerical_failure",
    }
}

impl RunRecord {
    pub fn new(experiment: &str, trial: usize, seed: u64, agents: usize, n: usize, m: usize, horizon: usize) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            trial,
            seed,
            agents,
            n,
            m,
            horizon,
            scale: None,
            phi: None,
            status: "error".into(),
            iterations: None,
            outer_iterations: None,
            relative_gap: None,
            min_block_eigenvalue: None,
            rel_q: None,
            rel_k_min: None,
            rel_k_max: None,
            rel_acl_min: None,
            rel_acl_max: None,
            objective: None,
            objective_truth: None,
            objective_gap: None,
            snr_db: None,
            cond_gamma_n: None,
            cond_gamma_stacked: None,
            ill_conditioned: None,
            gram_time_s: None,
            solve_time_s: None,
            total_time_s: None,
            error: None,
        }
    }

    pub fn failed(mut self, message: impl Into<String>) -> Self {
        self.status = "error".into();
        self.error = Some(message.into());
        self
    }

    pub fn is_failure(&self) -> bool {
        self.status == "error"
    }

    pub fn set_report(&mut self, r: &SolverReport) {
        self.status = status_label(r.status).into();
        self.iterations = Some(r.iterations);
        self.outer_iterations = Some(r.outer_iterations);
        self.relative_gap = Some(r.relative_gap);
        self.min_block_eigenvalue = Some(r.min_block_eigenvalue());
    }

    pub fn set_metrics(&mut self, e: &ErrorMetrics) {
        self.rel_q = Some(e.rel_q);
        self.rel_k_min = Some(e.rel_k_min);
        self.rel_k_max = Some(e.rel_k_max);
        self.rel_acl_min = Some(e.rel_acl_min);
        self.rel_acl_max = Some(e.rel_acl_max);
        self.objective_gap = e.objective_gap;
    }

    pub fn set_conditioning(&mut self, c: &ConditionReport) {
        self.cond_gamma_n = Some(c.cond_gamma_n);
        self.cond_gamma_stacked = Some(c.cond_gamma_stacked);
        self.ill_conditioned = Some(c.ill_conditioned);
    }
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(RECORD_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let out: std::result::Result<Vec<RunRecord>, _> = r.deserialize().collect();
    Ok(out?)
}

pub const RECORD_HEADER: [&str; 31] = [
    "schema_version",
    "experiment",
    "trial",
    "seed",
    "agents",
    "n",
    "m",
    "horizon",
    "scale",
    "phi",
    "status",
    "iterations",
    "outer_iterations",
    "relative_gap",
    "min_block_eigenvalue",
    "rel_q",
    "rel_k_min",
    "rel_k_max",
    "rel_acl_min",
    "rel_acl_max",
    "objective",
    "objective_truth",
    "objective_gap",
    "snr_db",
    "cond_gamma_n",
    "cond_gamma_stacked",
    "ill_conditioned",
    "gram_time_s",
    "solve_time_s",
    "total_time_s",
    "error",
];

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    Some((mean, var.sqrt()))
}

/// Fraction of `values` (failures counted as misses) satisfying `pred`.
pub fn fraction(values: &[Option<f64>], pred: impl Fn(f64) -> bool) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| v.is_some_and(&pred)).count() as f64 / values.len() as f64
}
