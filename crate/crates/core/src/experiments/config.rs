//! Experiment configuration.
//!
//! A config is resolved in layers: the preset for the experiment kind, then
//! an optional TOML file, then environment variables. Environment keys use the
//! prefix [`ENV_PREFIX`] and `__` between nesting levels, so
//! `LQR_IOC_ESTIMATOR__SOLVER__MAX_NEWTON=300` sets `estimator.solver.max_newton`.

use std::path::{Path, PathBuf};

use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::rows::from_rows;
use crate::ensemble::{sample_wishart_covariance, StateBox};
use crate::error::{Error, Result};
use crate::experiments::instances::{double_integrator, sample_cost, sample_system, SampledSystem, DEFAULT_DT};
use crate::ioc::IocOptions;
use crate::lqr::{CostMatrix, SystemDynamics};
use crate::sdp::SolverOptions;

pub const ENV_PREFIX: &str = "LQR_IOC_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    NoiselessSweep,
    Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Standard-normal `Â`, `B̂` of size `n×n`, `n×m`, redrawn until valid.
    Random,
    DoubleIntegrator,
    /// Continuous-time `a`, `b` discretized with `dt`.
    Continuous,
    /// `a`, `b` used as the discrete-time system directly.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsSpec {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Rejection bound `‖Q̄‖_F² ≤ phi` for sampled costs.
    pub phi: f64,
    /// Fixed `Q̄`; sampled when absent.
    pub q: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Fixed,
    Wishart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub scale: f64,
    /// Wishart degrees of freedom; the state dimension when absent.
    pub degrees: Option<usize>,
    /// Draw one Wishart covariance for the whole experiment instead of one
    /// per dataset.
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Objective scale; the mode default when absent.
    pub scale: Option<f64>,
    /// Estimator ball `‖Q‖_F² ≤ phi`; the mode default when absent.
    pub phi: Option<f64>,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Write a per-solve barrier trace CSV.
    pub trace: bool,
    pub system: SystemSpec,
    pub horizon: usize,
    /// Agents per dataset for `simulate` and the noiseless sweep.
    pub agents: usize,
    /// Nested group sizes for the consistency experiment.
    pub agent_grid: Vec<usize>,
    pub trials: usize,
    pub bounds: BoundsSpec,
    pub cost: CostSpec,
    pub noise: NoiseSpec,
    pub estimator: EstimatorConfig,
    pub condition_threshold: f64,
}

impl ExperimentConfig {
    /// Random `n = 3`, `m = 1` triplets, `N = 20`, `M = 15`, noiseless.
    pub fn noiseless_sweep() -> Self {
        Self {
            kind: ExperimentKind::NoiselessSweep,
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 0,
            trace: false,
            system: SystemSpec { kind: SystemKind::Random, n: 3, m: 1, dt: DEFAULT_DT, a: None, b: None },
            horizon: 20,
            agents: 15,
            agent_grid: vec![10, 40, 160, 640, 2560],
            trials: 50,
            bounds: BoundsSpec { lower: -10.0, upper: 10.0 },
            cost: CostSpec { phi: 5.0, q: None },
            noise: NoiseSpec { kind: NoiseKind::None, sigma: None, scale: 0.02, degrees: None, shared: false },
            estimator: EstimatorConfig { scale: None, phi: None, solver: SolverOptions::default() },
            condition_threshold: crate::analysis::DEFAULT_ILL_CONDITIONED_THRESHOLD,
        }
    }

    /// Planar double integrator, nested groups over `agent_grid`, Wishart noise.
    pub fn consistency() -> Self {
        let mut c = Self::noiseless_sweep();
        c.kind = ExperimentKind::Consistency;
        c.system = SystemSpec { kind: SystemKind::DoubleIntegrator, n: 2, m: 2, dt: DEFAULT_DT, a: None, b: None };
        c.trials = 20;
        c.noise.kind = NoiseKind::Wishart;
        c
    }

    pub fn preset(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::NoiselessSweep => Self::noiseless_sweep(),
            ExperimentKind::Consistency => Self::consistency(),
        }
    }

    /// Resolves preset, file and environment layers. `kind` forces the
    /// experiment kind; a file naming a different kind is rejected.
    pub fn load(path: Option<&Path>, kind: Option<ExperimentKind>) -> Result<Self> {
        let layers = |base: Figment| {
            let with_file = match path {
                Some(p) => base.merge(Toml::file_exact(p)),
                None => base,
            };
            with_file.merge(Env::prefixed(ENV_PREFIX).split("__"))
        };
        if let Some(p) = path {
            if !p.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("config file {} not found", p.display()),
                )));
            }
        }
        #[derive(Deserialize)]
        struct KindOnly {
            kind: Option<ExperimentKind>,
        }
        let declared = layers(Figment::new()).extract::<KindOnly>().map_err(config_error)?.kind;
        let kind = match (kind, declared) {
            (Some(k), Some(d)) if k != d => {
                return Err(Error::Invalid(format!("config declares kind {d:?} but {k:?} was requested")))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => ExperimentKind::NoiselessSweep,
        };
        let config: Self =
            layers(Figment::from(Serialized::defaults(Self::preset(kind)))).extract().map_err(config_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let fail = |msg: String| Err(Error::Invalid(msg));
        if s.n == 0 || s.m == 0 {
            return fail("system dimensions must be at least 1".into());
        }
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", s.dt));
        }
        if matches!(s.kind, SystemKind::Continuous | SystemKind::Discrete) && (s.a.is_none() || s.b.is_none()) {
            return fail("explicit systems need both `a` and `b`".into());
        }
        if self.horizon < 2 {
            return fail(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if self.agents == 0 || self.trials == 0 {
            return fail("agent and trial counts must be at least 1".into());
        }
        if self.agent_grid.is_empty() || self.agent_grid[0] == 0 {
            return fail("agent_grid must be non-empty with positive entries".into());
        }
        if self.agent_grid.windows(2).any(|w| w[0] >= w[1]) {
            return fail("agent_grid must be strictly increasing".into());
        }
        if !(self.bounds.lower < self.bounds.upper) {
            return fail("bounds.lower must be below bounds.upper".into());
        }
        if !(self.cost.phi > 0.0) {
            return fail("cost.phi must be positive".into());
        }
        match self.noise.kind {
            NoiseKind::Fixed if self.noise.sigma.is_none() => return fail("fixed noise needs `sigma`".into()),
            NoiseKind::Wishart if !(self.noise.scale >= 0.0) => return fail("Wishart scale must be ≥ 0".into()),
            _ => {}
        }
        if !(self.condition_threshold > 0.0) {
            return fail("condition_threshold must be positive".into());
        }
        self.estimator.solver.validate()
    }

    pub fn state_dim(&self) -> Result<usize> {
        match self.system.kind {
            SystemKind::Random => Ok(self.system.n),
            SystemKind::DoubleIntegrator => Ok(2),
            SystemKind::Continuous | SystemKind::Discrete => Ok(self.explicit_matrices()?.0.nrows()),
        }
    }

    fn explicit_matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let get = |m: &Option<Vec<Vec<f64>>>, name: &str| {
            m.as_deref()
                .ok_or_else(|| Error::Invalid(format!("system.{name} is missing")))
                .and_then(|r| from_rows(r).map_err(Error::Invalid))
        };
        Ok((get(&self.system.a, "a")?, get(&self.system.b, "b")?))
    }

    /// The system for one seed. Only random systems depend on the seed.
    pub fn build_system(&self, seed: u64) -> Result<SystemDynamics> {
        let s = &self.system;
        match s.kind {
            SystemKind::Random => Ok(sample_system(s.n, s.m, s.dt, seed)?.dynamics),
            SystemKind::DoubleIntegrator => Ok(double_integrator(s.dt)?.dynamics),
            SystemKind::Continuous => {
                let (a, b) = self.explicit_matrices()?;
                Ok(SampledSystem::new(a, b, s.dt)?.dynamics)
            }
            SystemKind::Discrete => {
                let (a, b) = self.explicit_matrices()?;
                SystemDynamics::new(a, b)
            }
        }
    }

    pub fn build_cost(&self, n: usize, seed: u64) -> Result<CostMatrix> {
        match &self.cost.q {
            Some(q) => {
                let q = from_rows(q).map_err(Error::Invalid)?;
                if q.shape() != (n, n) {
                    return Err(Error::Dimension(format!("cost.q must be {n}×{n}")));
                }
                CostMatrix::new(q)
            }
            None => sample_cost(n, self.cost.phi, seed),
        }
    }

    pub fn state_box(&self, n: usize) -> StateBox {
        StateBox::uniform(n, self.bounds.lower, self.bounds.upper)
    }

    pub fn build_sigma(&self, n: usize, seed: u64) -> Result<Option<DMatrix<f64>>> {
        match self.noise.kind {
            NoiseKind::None => Ok(None),
            NoiseKind::Fixed => {
                let s = from_rows(self.noise.sigma.as_deref().unwrap_or_default()).map_err(Error::Invalid)?;
                if s.shape() != (n, n) {
                    return Err(Error::Dimension(format!("noise.sigma must be {n}×{n}")));
                }
                Ok(Some(s))
            }
            NoiseKind::Wishart => sample_wishart_covariance(n, self.noise.scale, self.noise.degrees.unwrap_or(n), seed).map(Some),
        }
    }

    pub fn ioc_options(&self) -> IocOptions {
        IocOptions { scale: self.estimator.scale, phi: self.estimator.phi, solver: self.estimator.solver.clone() }
    }
}

fn config_error(e: figment::Error) -> Error {
    Error::Invalid(format!("config: {e}"))
}
