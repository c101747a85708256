use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::cost::{ArrivalDecay, CostSpec};
use crate::estimators::{EstimatorKind, KalmanConfig, OptimizationConfig};
use crate::solver::SolverOptions;
use crate::stochastics::{GenerationOptions, InitialPrior, InstanceSet, NoiseSpec};
use crate::systems::{
    linear_example_certificate, linear_example_prior, make_linear_example,
    make_reactor_example_with, reactor_example_prior, reactor_ioss_certificate, IossCertificate,
    SystemModel,
};

/// Top-level JSON config shared by every CLI subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub stability: StabilityConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Linear3,
    Reactor {
        #[serde(default = "default_ts")]
        ts: f64,
        #[serde(default = "default_c0")]
        c0: f64,
        #[serde(default)]
        sde_scaling: bool,
    },
}

fn default_ts() -> f64 {
    0.1
}

fn default_c0() -> f64 {
    0.1
}

/// Reaction rate of the reactor example.
pub const REACTOR_K: f64 = 0.16;

impl ModelConfig {
    pub fn id(&self) -> &'static str {
        match self {
            ModelConfig::Linear3 => "linear3",
            ModelConfig::Reactor { .. } => "reactor",
        }
    }

    pub fn build(&self) -> Result<SystemModel, BenchError> {
        match *self {
            ModelConfig::Linear3 => Ok(make_linear_example()),
            ModelConfig::Reactor {
                ts,
                c0,
                sde_scaling,
            } => make_reactor_example_with(ts, c0, sde_scaling)
                .map_err(|e| BenchError::Config(e.to_string())),
        }
    }

    pub fn default_prior(&self) -> DVector<f64> {
        match self {
            ModelConfig::Linear3 => linear_example_prior(),
            ModelConfig::Reactor { .. } => reactor_example_prior(),
        }
    }

    /// The shipped i-IOSS certificate of the model.
    pub fn certificate(&self) -> Result<IossCertificate, BenchError> {
        match *self {
            ModelConfig::Linear3 => Ok(linear_example_certificate()),
            ModelConfig::Reactor { ts, c0, .. } => reactor_ioss_certificate(REACTOR_K, c0, ts)
                .map_err(|e| BenchError::Config(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub process: NoiseSpec,
    pub measurement: NoiseSpec,
    pub sigma0: f64,
    /// Prior mean `x̄₀`; the model's default when absent.
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    #[serde(default)]
    pub identical_disturbances: bool,
    #[serde(default)]
    pub quiet_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub n: usize,
    /// Instance count under `--full`.
    pub n_full: usize,
    pub t_f: usize,
    pub seed: u64,
    pub sweep: Vec<SweepAxis>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n: 20,
            n_full: 100,
            t_f: 60,
            seed: 2024,
            sweep: Vec::new(),
        }
    }
}

/// Parameter varied across all optimization-based estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    Horizon(Vec<usize>),
    B2(Vec<f64>),
    Lambda(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Horizon(_) => "horizon",
            SweepAxis::B2(_) => "b2",
            SweepAxis::Lambda(_) => "lambda",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Horizon(v) => v.iter().map(|&t| t as f64).collect(),
            SweepAxis::B2(v) | SweepAxis::Lambda(v) => v.clone(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            SweepAxis::Horizon(v) => v.is_empty(),
            SweepAxis::B2(v) | SweepAxis::Lambda(v) => v.is_empty(),
        }
    }

    /// The estimator with this axis set to `value`; `None` for estimators the
    /// axis does not apply to.
    pub fn apply(&self, spec: &EstimatorSpec, value: f64) -> Option<EstimatorSpec> {
        let mut out = spec.clone();
        match (self, &mut out) {
            (SweepAxis::Horizon(_), EstimatorSpec::Mhe { horizon, .. }) => {
                *horizon = value as usize;
            }
            (
                SweepAxis::B2(_),
                EstimatorSpec::Mhe { cost, .. } | EstimatorSpec::Fie { cost, .. },
            ) => match &mut cost.arrival.decay {
                ArrivalDecay::Exponential(b) | ArrivalDecay::Rational(b) => *b = value,
                ArrivalDecay::None => return None,
            },
            (
                SweepAxis::Lambda(_),
                EstimatorSpec::Mhe { cost, .. } | EstimatorSpec::Fie { cost, .. },
            ) => {
                cost.stage.lambda_w = value;
                cost.stage.lambda_v = value;
            }
            _ => return None,
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub name: String,
    #[serde(flatten)]
    pub spec: EstimatorSpec,
}

/// Filters take `Q`, `R`, `P₀` from the noise section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Kf {
        /// `Q = σ_w² 𝟙𝟙ᵀ` instead of `σ_w² I`.
        #[serde(default)]
        correlated_q: bool,
    },
    Ekf {
        #[serde(default)]
        correlated_q: bool,
    },
    Fie {
        cost: CostSpec,
        #[serde(default)]
        identical_disturbances: bool,
    },
    Mhe {
        horizon: usize,
        cost: CostSpec,
        #[serde(default)]
        identical_disturbances: bool,
    },
}

impl EstimatorSpec {
    pub fn is_optimization(&self) -> bool {
        matches!(self, EstimatorSpec::Fie { .. } | EstimatorSpec::Mhe { .. })
    }

    pub fn cost(&self) -> Option<&CostSpec> {
        match self {
            EstimatorSpec::Fie { cost, .. } | EstimatorSpec::Mhe { cost, .. } => Some(cost),
            _ => None,
        }
    }

    pub fn resolve(
        &self,
        model: &SystemModel,
        noise: &NoiseConfig,
        solver: &SolverOptions,
    ) -> Result<EstimatorKind, BenchError> {
        let (n, g, p) = (
            model.state_dim(),
            model.disturbance_dim(),
            model.output_dim(),
        );
        let kalman = |correlated: bool| {
            let make = if correlated {
                KalmanConfig::correlated
            } else {
                KalmanConfig::isotropic
            };
            make(
                g,
                p,
                n,
                noise.process.sigma(),
                noise.measurement.sigma(),
                noise.sigma0,
            )
        };
        let optimization = |cost: &CostSpec, identical: bool| -> Result<_, BenchError> {
            Ok(OptimizationConfig {
                cost: cost
                    .validated()
                    .map_err(|e| BenchError::Config(e.to_string()))?,
                identical_disturbances: identical,
                solver: *solver,
            })
        };
        Ok(match self {
            EstimatorSpec::Kf { correlated_q } => EstimatorKind::Kf(kalman(*correlated_q)),
            EstimatorSpec::Ekf { correlated_q } => EstimatorKind::Ekf(kalman(*correlated_q)),
            EstimatorSpec::Fie {
                cost,
                identical_disturbances,
            } => EstimatorKind::Fie(optimization(cost, *identical_disturbances)?),
            EstimatorSpec::Mhe {
                horizon,
                cost,
                identical_disturbances,
            } => {
                if *horizon == 0 {
                    return Err(BenchError::Config("MHE horizon must be at least 1".into()));
                }
                EstimatorKind::Mhe {
                    horizon: *horizon,
                    config: optimization(cost, *identical_disturbances)?,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub eta: f64,
    /// Rate of the rational loosening applied to exponential certificates when
    /// the arrival cost decays rationally; `−ln b₁` when absent.
    pub rational_rate: Option<f64>,
    /// Pairs and horizon of the empirical certificate check.
    pub pairs: usize,
    pub horizon: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            rational_rate: None,
            pairs: 100,
            horizon: 60,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        let model = self.model.build()?;
        if self.noise.process.dim != model.disturbance_dim() {
            return bad(format!(
                "process noise has dimension {}, model expects {}",
                self.noise.process.dim,
                model.disturbance_dim()
            ));
        }
        if self.noise.measurement.dim != model.output_dim() {
            return bad(format!(
                "measurement noise has dimension {}, model expects {}",
                self.noise.measurement.dim,
                model.output_dim()
            ));
        }
        self.noise
            .process
            .validated()
            .and(self.noise.measurement.validated())
            .map_err(|e| BenchError::Config(e.to_string()))?;
        if !(self.noise.sigma0 > 0.0 && self.noise.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive, got {}", self.noise.sigma0));
        }
        if let Some(prior) = &self.noise.prior {
            if prior.len() != model.state_dim() {
                return bad(format!(
                    "prior has {} entries, model has {} states",
                    prior.len(),
                    model.state_dim()
                ));
            }
        }
        let e = &self.experiment;
        if e.n == 0 || e.n_full == 0 {
            return bad("the instance count must be at least 1".into());
        }
        if e.t_f == 0 {
            return bad("t_f must be at least 1".into());
        }
        if let Some(axis) = e.sweep.iter().find(|a| a.is_empty()) {
            return bad(format!("sweep axis `{}` has no values", axis.name()));
        }
        let mut names = std::collections::BTreeSet::new();
        for est in &self.estimators {
            if !names.insert(est.name.as_str()) {
                return bad(format!("duplicate estimator name `{}`", est.name));
            }
            if matches!(est.spec, EstimatorSpec::Kf { .. }) && !model.is_affine() {
                return bad(format!("`{}`: the Kalman filter needs an affine model", est.name));
            }
            est.spec.resolve(&model, &self.noise, &self.solver)?;
        }
        if !(self.stability.eta > 0.0 && self.stability.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.stability.eta));
        }
        Ok(())
    }

    pub fn prior(&self) -> InitialPrior {
        InitialPrior {
            mean: match &self.noise.prior {
                Some(v) => DVector::from_vec(v.clone()),
                None => self.model.default_prior(),
            },
            sigma0: self.noise.sigma0,
        }
    }

    pub fn instance_set(&self, full: bool, seed: Option<u64>) -> InstanceSet {
        InstanceSet {
            n: if full {
                self.experiment.n_full
            } else {
                self.experiment.n
            },
            t_f: self.experiment.t_f,
            master_seed: seed.unwrap_or(self.experiment.seed),
        }
    }

    pub fn generation(&self) -> GenerationOptions {
        GenerationOptions {
            identical_disturbances: self.noise.identical_disturbances,
            quiet_after: self.noise.quiet_after,
        }
    }
}
