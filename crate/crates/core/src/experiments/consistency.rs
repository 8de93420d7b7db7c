//! Consistency experiment: one fixed `(A, B, Q̄)`, repeated noisy datasets,
//! each split into nested groups of increasing size.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{condition_report, error_metrics, fit_loglog_slope, LogLogFit};
use crate::dataset::rows;
use crate::ensemble::{add_noise, sample_initial_states, shuffle, simulate_ensemble, snr_db, NoiseModel};
use crate::error::Result;
use crate::experiments::config::ExperimentConfig;
use crate::experiments::records::{mean_std, median, write_records, RunRecord};
use crate::experiments::{isolate, thread_pool, trace_path, trial_seed, write_json};
use crate::ioc::{default_phi, estimate_noiseless, estimate_noisy};
use crate::lqr::{gains_from_riccati, solve_dre, CostMatrix, SystemDynamics};

pub const EXPERIMENT: &str = "consistency";
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Statistics of one group size over all successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub agents: usize,
    pub trials: usize,
    pub failures: usize,
    pub mean_rel_q: Option<f64>,
    pub std_rel_q: Option<f64>,
    pub mean_solve_time_s: Option<f64>,
    pub median_solve_time_s: Option<f64>,
    pub mean_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub schema_version: u32,
    pub experiment: String,
    pub trials: usize,
    pub failures: usize,
    pub shared_sigma: bool,
    #[serde(with = "rows")]
    pub q_true: DMatrix<f64>,
    pub cond_gamma_n: f64,
    pub groups: Vec<GroupStats>,
    pub mean_fit: Option<LogLogFit>,
    pub std_fit: Option<LogLogFit>,
    pub mean_strictly_decreasing: bool,
    /// Mean solve time at the largest group over that at the smallest.
    pub solve_time_ratio: Option<f64>,
    pub snr_db_min: Option<f64>,
    pub snr_db_max: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyOutcome {
    pub records: Vec<RunRecord>,
    pub summary: ConsistencySummary,
}

impl ConsistencyOutcome {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_records(&dir.join("records.csv"), &self.records)?;
        write_json(&dir.join("summary.json"), &self.summary)?;
        let mut w = csv::Writer::from_path(dir.join("groups.csv"))?;
        for g in &self.summary.groups {
            w.serialize(g)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Fixed {
    dyn_: SystemDynamics,
    q: CostMatrix,
    sigma: Option<DMatrix<f64>>,
}

pub fn run_consistency(config: &ExperimentConfig) -> Result<ConsistencyOutcome> {
    config.validate()?;
    let start = Instant::now();
    let dyn_ = config.build_system(config.seed)?;
    let n = dyn_.n();
    let q = config.build_cost(n, config.seed)?;
    let shared = config.noise.shared;
    let sigma = if shared { config.build_sigma(n, config.seed)? } else { None };
    let fixed = Fixed { dyn_, q, sigma };
    let traces = config.trace.then(|| config.out_dir.join("traces"));
    if let Some(d) = &traces {
        std::fs::create_dir_all(d)?;
    }
    let pool = thread_pool(config.workers)?;
    let records: Vec<RunRecord> = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .flat_map_iter(|t| run_trial(config, &fixed, t, traces.as_deref()))
            .collect()
    });
    let summary = summarize(config, &fixed, &records, start.elapsed().as_secs_f64());
    if let Some(f) = &summary.mean_fit {
        log::info!("consistency: mean rel_Q slope {:.3}", f.slope);
    }
    Ok(ConsistencyOutcome { records, summary })
}

fn run_trial(config: &ExperimentConfig, fixed: &Fixed, trial: usize, traces: Option<&Path>) -> Vec<RunRecord> {
    let seed = trial_seed(config.seed, trial, 0);
    let (n, m) = (fixed.dyn_.n(), fixed.dyn_.m());
    let grid = &config.agent_grid;
    let base = |k: usize| RunRecord::new(EXPERIMENT, trial, trial_seed(config.seed, trial, k + 1), grid[k], n, m, config.horizon);
    let prepared = isolate(|| {
        let sigma = match &fixed.sigma {
            Some(s) => Some(s.clone()),
            None => config.build_sigma(n, seed)?,
        };
        let gains = gains_from_riccati(&fixed.dyn_, &solve_dre(&fixed.dyn_, &fixed.q, config.horizon)?)?;
        let largest = *grid.last().expect("validated non-empty grid");
        let x1 = sample_initial_states(largest, &config.state_box(n), seed)?;
        let truth = simulate_ensemble(&fixed.dyn_, &gains, &x1)?;
        let (observed, noise) = match &sigma {
            Some(s) => {
                let noisy = add_noise(&truth.states, &NoiseModel { sigma: s.clone(), seed })?;
                (noisy.observed, Some(noisy.noise))
            }
            None => (truth.states.clone(), None),
        };
        Ok((sigma, truth, observed, noise))
    });
    let (sigma, truth, observed, noise) = match prepared {
        Ok(p) => p,
        Err(msg) => {
            log::warn!("trial {trial} failed: {msg}");
            return (0..grid.len()).map(|k| base(k).failed(msg.clone())).collect();
        }
    };
    let prefix = |v: &[DMatrix<f64>], agents: usize| v.iter().map(|x| x.columns(0, agents).into_owned()).collect::<Vec<_>>();
    (0..grid.len())
        .map(|k| {
            let agents = grid[k];
            let mut rec = base(k);
            let start = Instant::now();
            let outcome = isolate(|| {
                let mut rec = rec.clone();
                let t0 = Instant::now();
                let (obs, _) = shuffle(&prefix(&observed, agents), rec.seed)?;
                rec.gram_time_s = Some(t0.elapsed().as_secs_f64());
                if let Some(noise) = &noise {
                    rec.snr_db = Some(snr_db(&prefix(&truth.states, agents), &prefix(noise, agents))?);
                }
                let mut options = config.ioc_options();
                options.solver.trace_path = trace_path(traces, &format!("trial_{trial:04}_m_{agents}.csv"));
                let t1 = Instant::now();
                let est = match &sigma {
                    Some(s) => {
                        let phi = options.phi.unwrap_or_else(|| default_phi(n));
                        rec.phi = Some(phi);
                        estimate_noisy(&obs.g, &fixed.dyn_, s, phi, agents, &options)?
                    }
                    None => {
                        rec.phi = options.phi;
                        estimate_noiseless(&obs.g, &fixed.dyn_, agents, &options)?
                    }
                };
                rec.solve_time_s = Some(t1.elapsed().as_secs_f64());
                rec.scale = Some(est.scale);
                rec.set_report(&est.report);
                rec.set_metrics(&error_metrics(&fixed.dyn_, est.q_est.matrix(), &est.k_est, &fixed.q)?);
                rec.objective = Some(est.objective);
                Ok(rec)
            });
            rec = match outcome {
                Ok(r) => r,
                Err(msg) => {
                    log::warn!("trial {trial}, M = {agents} failed: {msg}");
                    rec.failed(msg)
                }
            };
            rec.total_time_s = Some(start.elapsed().as_secs_f64());
            rec
        })
        .collect()
}

fn summarize(config: &ExperimentConfig, fixed: &Fixed, records: &[RunRecord], wall_time_s: f64) -> ConsistencySummary {
    let groups: Vec<GroupStats> = config
        .agent_grid
        .iter()
        .map(|&agents| {
            let cell: Vec<&RunRecord> = records.iter().filter(|r| r.agents == agents).collect();
            let ok: Vec<&RunRecord> = cell.iter().copied().filter(|r| !r.is_failure()).collect();
            let rel_q: Vec<f64> = ok.iter().filter_map(|r| r.rel_q).collect();
            let times: Vec<f64> = ok.iter().filter_map(|r| r.solve_time_s).collect();
            let snr: Vec<f64> = ok.iter().filter_map(|r| r.snr_db).collect();
            let stats = mean_std(&rel_q);
            GroupStats {
                agents,
                trials: cell.len(),
                failures: cell.len() - ok.len(),
                mean_rel_q: stats.map(|s| s.0),
                std_rel_q: stats.map(|s| s.1),
                mean_solve_time_s: mean_std(&times).map(|s| s.0),
                median_solve_time_s: median(&times),
                mean_snr_db: mean_std(&snr).map(|s| s.0),
            }
        })
        .collect();
    let fit = |f: fn(&GroupStats) -> Option<f64>| {
        let points: Option<Vec<(f64, f64)>> = groups.iter().map(|g| f(g).map(|v| (g.agents as f64, v))).collect();
        points.and_then(|p| fit_loglog_slope(&p).ok())
    };
    let means: Vec<Option<f64>> = groups.iter().map(|g| g.mean_rel_q).collect();
    let mean_strictly_decreasing = means.iter().all(Option::is_some)
        && means.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
    let solve_time_ratio = match (groups.first().and_then(|g| g.mean_solve_time_s), groups.last().and_then(|g| g.mean_solve_time_s)) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    let snr: Vec<f64> = records.iter().filter_map(|r| r.snr_db).collect();
    ConsistencySummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        experiment: EXPERIMENT.into(),
        trials: config.trials,
        failures: records.iter().filter(|r| r.is_failure()).count(),
        shared_sigma: config.noise.shared,
        q_true: fixed.q.matrix().clone(),
        cond_gamma_n: condition_report(&fixed.dyn_, config.horizon, config.condition_threshold).cond_gamma_n,
        mean_fit: fit(|g| g.mean_rel_q),
        std_fit: fit(|g| g.std_rel_q),
        groups,
        mean_strictly_decreasing,
        solve_time_ratio,
        snr_db_min: snr.iter().copied().reduce(f64::min),
        snr_db_max: snr.iter().copied().reduce(f64::max),
        wall_time_s,
    }
}
