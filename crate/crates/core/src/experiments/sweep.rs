//! Noiseless sweep over random triplets `(A, B, Q̄)`.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{condition_report, error_metrics};
use crate::error::Result;
use crate::experiments::config::ExperimentConfig;
use crate::experiments::instances::generate_dataset;
use crate::experiments::records::{fraction, median, write_records, RunRecord};
use crate::experiments::{isolate, thread_pool, trace_path, trial_seed, write_json};
use crate::ioc::{estimate_noiseless, evaluate_h};
use crate::lqr::solve_dre;

pub const EXPERIMENT: &str = "noiseless_sweep";
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
/// Objective gaps at most this fraction of `|H(Q̄, {P̄_t})|` count as flat.
pub const FLAT_OBJECTIVE_REL: f64 = 1e-3;
pub const GAIN_REL_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub experiment: String,
    pub trials: usize,
    pub failures: usize,
    pub non_optimal: usize,
    pub condition_threshold: f64,
    pub ill_conditioned: usize,
    pub median_cond_gamma_n: Option<f64>,
    pub median_rel_q: Option<f64>,
    pub median_rel_k_max: Option<f64>,
    /// Share of trials with objective gap ≤ [`FLAT_OBJECTIVE_REL`]·|H at truth|.
    pub flat_objective_fraction: f64,
    /// Share of trials with `rel_K_max ≤` [`GAIN_REL_TOL`].
    pub gain_recovered_fraction: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub summary: SweepSummary,
}

impl SweepOutcome {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_records(&dir.join("records.csv"), &self.records)?;
        write_json(&dir.join("summary.json"), &self.summary)
    }
}

pub fn run_noiseless_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let start = Instant::now();
    let traces = config.trace.then(|| config.out_dir.join("traces"));
    if let Some(d) = &traces {
        std::fs::create_dir_all(d)?;
    }
    let pool = thread_pool(config.workers)?;
    let records: Vec<RunRecord> =
        pool.install(|| (0..config.trials).into_par_iter().map(|t| sweep_trial(config, t, traces.as_deref())).collect());
    let summary = summarize(config, &records, start.elapsed().as_secs_f64());
    log::info!(
        "sweep: {} trials, {} failures, flat objective {:.0}%, gains recovered {:.0}%",
        summary.trials,
        summary.failures,
        100.0 * summary.flat_objective_fraction,
        100.0 * summary.gain_recovered_fraction
    );
    Ok(SweepOutcome { records, summary })
}

fn sweep_trial(config: &ExperimentConfig, trial: usize, traces: Option<&Path>) -> RunRecord {
    let seed = trial_seed(config.seed, trial, 0);
    let n = config.state_dim().unwrap_or(config.system.n);
    let mut rec = RunRecord::new(EXPERIMENT, trial, seed, config.agents, n, config.system.m, config.horizon);
    let start = Instant::now();
    let outcome = isolate(|| {
        let mut rec = rec.clone();
        let dyn_ = config.build_system(seed)?;
        rec.m = dyn_.m();
        let q = config.build_cost(n, seed)?;
        rec.set_conditioning(&condition_report(&dyn_, config.horizon, config.condition_threshold));
        let t0 = Instant::now();
        let data =
            generate_dataset(&dyn_, &q, config.horizon, config.agents, &config.state_box(n), None, seed)?;
        rec.gram_time_s = Some(t0.elapsed().as_secs_f64());
        let mut options = config.ioc_options();
        options.solver.trace_path = trace_path(traces, &format!("trial_{trial:04}.csv"));
        let t1 = Instant::now();
        let est = estimate_noiseless(&data.observations.g, &dyn_, config.agents, &options)?;
        rec.solve_time_s = Some(t1.elapsed().as_secs_f64());
        rec.scale = Some(est.scale);
        rec.phi = options.phi;
        rec.set_report(&est.report);
        let truth = evaluate_h(q.matrix(), solve_dre(&dyn_, &q, config.horizon)?.matrices(), &data.observations.g);
        let mut metrics = error_metrics(&dyn_, est.q_est.matrix(), &est.k_est, &q)?;
        metrics.objective_gap = Some((est.objective - truth).abs());
        rec.set_metrics(&metrics);
        rec.objective = Some(est.objective);
        rec.objective_truth = Some(truth);
        Ok(rec)
    });
    rec = match outcome {
        Ok(r) => r,
        Err(msg) => {
            log::warn!("trial {trial} failed: {msg}");
            rec.failed(msg)
        }
    };
    rec.total_time_s = Some(start.elapsed().as_secs_f64());
    rec
}

fn summarize(config: &ExperimentConfig, records: &[RunRecord], wall_time_s: f64) -> SweepSummary {
    let col = |f: fn(&RunRecord) -> Option<f64>| records.iter().map(f).collect::<Vec<_>>();
    let present = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<_>>();
    let flat: Vec<Option<f64>> = records
        .iter()
        .map(|r| match (r.objective_gap, r.objective_truth) {
            (Some(g), Some(h)) => Some(g - FLAT_OBJECTIVE_REL * h.abs()),
            _ => None,
        })
        .collect();
    let rel_k_max = col(|r| r.rel_k_max);
    SweepSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        experiment: EXPERIMENT.into(),
        trials: records.len(),
        failures: records.iter().filter(|r| r.is_failure()).count(),
        non_optimal: records.iter().filter(|r| r.status != "optimal").count(),
        condition_threshold: config.condition_threshold,
        ill_conditioned: records.iter().filter(|r| r.ill_conditioned == Some(true)).count(),
        median_cond_gamma_n: median(&present(&col(|r| r.cond_gamma_n))),
        median_rel_q: median(&present(&col(|r| r.rel_q))),
        median_rel_k_max: median(&present(&rel_k_max)),
        flat_objective_fraction: fraction(&flat, |v| v <= 0.0),
        gain_recovered_fraction: fraction(&rel_k_max, |v| v <= GAIN_REL_TOL),
        wall_time_s,
    }
}
