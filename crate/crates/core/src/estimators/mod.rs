//! Full-information and moving-horizon estimators, plus Kalman-filter baselines.

mod kalman;
mod optimization;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kalman::{run_ekf, run_kf, KalmanConfig};
pub use optimization::{run_fie, run_mhe, OptimizationConfig};

use crate::solver::WindowError;
use crate::systems::{SystemModel, TrajectoryInstance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("moving horizon must be at least 1")]
    ZeroHorizon,
    #[error("the Kalman filter requires an affine model, got `{0}`")]
    NotAffine(String),
    #[error("{name} must be symmetric positive {kind}")]
    BadCovariance {
        name: &'static str,
        kind: &'static str,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Window(#[from] WindowError),
}

/// Per-time solver diagnostics. Filters report converged steps with zero cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub solve_ms: f64,
}

impl StepDiagnostics {
    fn filter_step() -> Self {
        Self {
            converged: true,
            iterations: 0,
            objective: 0.0,
            kkt_residual: 0.0,
            solve_ms: 0.0,
        }
    }
}

/// Estimates `x̂_t` for `t = 0..t_f` of one instance, with errors `x_t − x̂_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTrace {
    pub estimates: Vec<DVector<f64>>,
    pub errors: Vec<DVector<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Prior used for the first state of each window (or the filter's initial mean).
    pub priors: Vec<DVector<f64>>,
    /// First time index of each window.
    pub window_starts: Vec<usize>,
}

impl EstimateTrace {
    fn new(capacity: usize) -> Self {
        Self {
            estimates: Vec::with_capacity(capacity),
            errors: Vec::with_capacity(capacity),
            diagnostics: Vec::with_capacity(capacity),
            priors: Vec::with_capacity(capacity),
            window_starts: Vec::with_capacity(capacity),
        }
    }

    fn push(
        &mut self,
        truth: &DVector<f64>,
        estimate: DVector<f64>,
        diag: StepDiagnostics,
        prior: DVector<f64>,
        start: usize,
    ) {
        self.errors.push(truth - &estimate);
        self.estimates.push(estimate);
        self.diagnostics.push(diag);
        self.priors.push(prior);
        self.window_starts.push(start);
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn unconverged(&self) -> usize {
        self.diagnostics.iter().filter(|d| !d.converged).count()
    }

    /// Largest coordinate of the estimate difference between two traces.
    pub fn max_deviation(&self, other: &EstimateTrace) -> f64 {
        self.estimates
            .iter()
            .zip(&other.estimates)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    Fie(OptimizationConfig),
    Mhe {
        horizon: usize,
        #[serde(flatten)]
        config: OptimizationConfig,
    },
    Kf(KalmanConfig),
    Ekf(KalmanConfig),
}

impl EstimatorKind {
    pub fn run(
        &self,
        model: &SystemModel,
        instance: &TrajectoryInstance,
    ) -> Result<EstimateTrace, EstimatorError> {
        match self {
            EstimatorKind::Fie(cfg) => run_fie(model, cfg, instance),
            EstimatorKind::Mhe { horizon, config } => run_mhe(model, config, *horizon, instance),
            EstimatorKind::Kf(cfg) => run_kf(model, cfg, instance),
            EstimatorKind::Ekf(cfg) => run_ekf(model, cfg, instance),
        }
    }
}
