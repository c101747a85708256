//! Monte-Carlo experiments: paired instances, every estimator on every
//! instance, MAE and per-time error statistics, CSV artifacts.

pub mod certify;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    EstimatorConfig, EstimatorSpec, ExperimentConfig, ExperimentSection, ModelConfig,
    NoiseConfig, StabilityConfig, SweepAxis,
};

use crate::estimators::{EstimateTrace, EstimatorError, EstimatorKind};
use crate::stability::RgasBounds;
use crate::stochastics::{generate_instances_with, StochasticsError};
use crate::systems::{SystemModel, TrajectoryInstance};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("traces disagree: {0}")]
    LengthMismatch(String),
    #[error("estimator `{name}` failed on instance {instance}: {source}")]
    Estimator {
        name: String,
        instance: usize,
        source: EstimatorError,
    },
    #[error(transparent)]
    Stochastics(#[from] StochasticsError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BenchError {
    pub fn is_config(&self) -> bool {
        matches!(self, BenchError::Config(_))
    }
}

/// `(1 / N(t_f+1)) Σᵢ Σ_t Σ_j |x − x̂|`. The coordinate sum is not averaged.
pub fn mae(traces: &[EstimateTrace]) -> Result<f64, BenchError> {
    let first = traces
        .first()
        .ok_or_else(|| BenchError::LengthMismatch("no traces".into()))?;
    let len = first.len();
    if len == 0 {
        return Err(BenchError::LengthMismatch("empty trace".into()));
    }
    let mut total = 0.0;
    for (i, tr) in traces.iter().enumerate() {
        if tr.len() != len {
            return Err(BenchError::LengthMismatch(format!(
                "trace {i} has {} steps, trace 0 has {len}",
                tr.len()
            )));
        }
        total += tr.errors.iter().map(|e| e.lp_norm(1)).sum::<f64>();
    }
    Ok(total / (traces.len() * len) as f64)
}

/// Mean and standard deviation across instances of each error coordinate,
/// one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub mean: DMatrix<f64>,
    pub std: DMatrix<f64>,
}

pub fn error_stats(traces: &[EstimateTrace]) -> Result<ErrorStats, BenchError> {
    mae(traces)?;
    let steps = traces[0].len();
    let n = traces[0].errors[0].len();
    let count = traces.len() as f64;
    let mut mean = DMatrix::zeros(steps, n);
    let mut std = DMatrix::zeros(steps, n);
    for t in 0..steps {
        for j in 0..n {
            let m = traces.iter().map(|tr| tr.errors[t][j]).sum::<f64>() / count;
            let var = if traces.len() > 1 {
                traces
                    .iter()
                    .map(|tr| (tr.errors[t][j] - m).powi(2))
                    .sum::<f64>()
                    / (count - 1.0)
            } else {
                0.0
            };
            mean[(t, j)] = m;
            std[(t, j)] = var.sqrt();
        }
    }
    Ok(ErrorStats { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub mae: f64,
    pub unconverged: usize,
    pub steps: usize,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub estimator: String,
    pub mae: f64,
    pub unconverged: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub estimators: Vec<EstimatorSummary>,
    pub error_stats: Vec<ErrorStats>,
    pub sweep: Vec<SweepRow>,
}

impl MetricsTable {
    pub fn get(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn total_unconverged(&self) -> usize {
        self.estimators.iter().map(|e| e.unconverged).sum::<usize>()
            + self.sweep.iter().map(|r| r.unconverged).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: SystemModel,
    pub instances: Vec<TrajectoryInstance>,
    pub names: Vec<String>,
    /// `traces[k][i]`: estimator `k` on instance `i`.
    pub traces: Vec<Vec<EstimateTrace>>,
    pub metrics: MetricsTable,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub full: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn generate(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(SystemModel, Vec<TrajectoryInstance>), BenchError> {
    let model = cfg.model.build()?;
    let instances = generate_instances_with(
        &model,
        &cfg.noise.process,
        &cfg.noise.measurement,
        &cfg.prior(),
        &cfg.instance_set(opts.full, opts.seed),
        &cfg.generation(),
    )?;
    Ok((model, instances))
}

/// Runs one estimator on every instance; results are ordered by instance.
pub fn run_estimator(
    name: &str,
    kind: &EstimatorKind,
    model: &SystemModel,
    instances: &[TrajectoryInstance],
) -> Result<Vec<EstimateTrace>, BenchError> {
    instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            kind.run(model, inst).map_err(|source| BenchError::Estimator {
                name: name.to_string(),
                instance: i,
                source,
            })
        })
        .collect()
}

fn summarize(name: &str, traces: &[EstimateTrace], wall_ms: f64) -> Result<EstimatorSummary, BenchError> {
    let solve: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.diagnostics.iter().map(|d| d.solve_ms))
        .collect();
    Ok(EstimatorSummary {
        name: name.to_string(),
        mae: mae(traces)?,
        unconverged: traces.iter().map(|t| t.unconverged()).sum(),
        steps: solve.len(),
        mean_solve_ms: solve.iter().sum::<f64>() / solve.len().max(1) as f64,
        max_solve_ms: solve.iter().cloned().fold(0.0, f64::max),
        wall_ms,
    })
}

/// Generates the instance set once, runs every estimator on it, performs the
/// configured sweeps and, when `opts.out` is set, writes the CSV artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult, BenchError> {
    cfg.validate()?;
    let (model, instances) = generate(cfg, opts)?;
    let result = run_on_instances(cfg, model, instances)?;
    if let Some(dir) = &opts.out {
        output::write_all(dir, &result)?;
    }
    Ok(result)
}

pub fn run_on_instances(
    cfg: &ExperimentConfig,
    model: SystemModel,
    instances: Vec<TrajectoryInstance>,
) -> Result<ExperimentResult, BenchError> {
    let mut names = Vec::new();
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    let mut stats = Vec::new();
    for est in &cfg.estimators {
        let kind = est.spec.resolve(&model, &cfg.noise, &cfg.solver)?;
        let clock = Instant::now();
        let tr = run_estimator(&est.name, &kind, &model, &instances)?;
        let wall = clock.elapsed().as_secs_f64() * 1e3;
        summaries.push(summarize(&est.name, &tr, wall)?);
        stats.push(error_stats(&tr)?);
        names.push(est.name.clone());
        traces.push(tr);
    }

    let mut sweep = Vec::new();
    for axis in &cfg.experiment.sweep {
        for value in axis.values() {
            for (k, est) in cfg.estimators.iter().enumerate() {
                let row = match axis.apply(&est.spec, value) {
                    Some(spec) => {
                        let kind = spec.resolve(&model, &cfg.noise, &cfg.solver)?;
                        let tr = run_estimator(&est.name, &kind, &model, &instances)?;
                        SweepRow {
                            axis: axis.name().into(),
                            value,
                            estimator: est.name.clone(),
                            mae: mae(&tr)?,
                            unconverged: tr.iter().map(|t| t.unconverged()).sum(),
                        }
                    }
                    // estimators without the swept parameter are constant lines
                    None => SweepRow {
                        axis: axis.name().into(),
                        value,
                        estimator: est.name.clone(),
                        mae: summaries[k].mae,
                        unconverged: 0,
                    },
                };
                sweep.push(row);
            }
        }
    }

    Ok(ExperimentResult {
        model,
        instances,
        names,
        traces,
        metrics: MetricsTable {
            estimators: summaries,
            error_stats: stats,
            sweep,
        },
    })
}

/// Pointwise check of `|x_t − x̂_t| ≤ β_x(|x₀ − x̄₀|, t) + α_w(‖w_{0:t−1}‖) + α_v(‖v_{0:t}‖)`
/// with sequence norms taken as the largest Euclidean norm over the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgasReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `|error| / bound` seen.
    pub worst_ratio: f64,
}

pub fn rgas_check(
    bounds: &RgasBounds,
    instances: &[TrajectoryInstance],
    traces: &[EstimateTrace],
) -> RgasReport {
    let mut report = RgasReport {
        checked: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for (inst, tr) in instances.iter().zip(traces) {
        let dx0 = (&inst.x[0] - &inst.x0_prior).norm();
        let mut w_sup: f64 = 0.0;
        let mut v_sup: f64 = 0.0;
        for (t, err) in tr.errors.iter().enumerate() {
            if t > 0 {
                w_sup = w_sup.max(inst.w[t - 1].norm());
            }
            v_sup = v_sup.max(inst.v[t].norm());
            let bound = bounds.error_bound(dx0, w_sup, v_sup, t);
            let e = err.norm();
            report.checked += 1;
            if e > bound {
                report.violations += 1;
            }
            let ratio = if bound > 0.0 {
                e / bound
            } else if e > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            report.worst_ratio = report.worst_ratio.max(ratio);
        }
    }
    report
}

/// Euclidean norm of the final-time error for each instance.
pub fn final_errors(traces: &[EstimateTrace], t: usize) -> Vec<f64> {
    traces.iter().map(|tr| tr.errors[t].norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::StepDiagnostics;
    use nalgebra::DVector;

    fn zero_vector(n: usize) -> DVector<f64> {
        DVector::zeros(n)
    }

    fn trace(errors: &[&[f64]]) -> EstimateTrace {
        let steps = errors.len();
        EstimateTrace {
            estimates: vec![zero_vector(errors[0].len()); steps],
            errors: errors.iter().map(|e| DVector::from_row_slice(e)).collect(),
            diagnostics: vec![
                StepDiagnostics {
                    converged: true,
                    iterations: 0,
                    objective: 0.0,
                    kkt_residual: 0.0,
                    solve_ms: 0.0,
                };
                steps
            ],
            priors: vec![zero_vector(errors[0].len()); steps],
            window_starts: vec![0; steps],
        }
    }

    #[test]
    fn mae_examples() {
        let one = trace(&[&[0.2], &[-0.4]]);
        assert!((mae(&[one]).unwrap() - 0.3).abs() < 1e-15);
        let exact = trace(&[&[0.0, 0.0]]);
        assert_eq!(mae(&[exact]).unwrap(), 0.0);
        let a = trace(&[&[0.1, 0.3]]);
        let b = trace(&[&[-0.2, 0.4]]);
        assert!((mae(&[a, b]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mae_rejects_mismatch() {
        let a = trace(&[&[0.1], &[0.1]]);
        let b = trace(&[&[0.1]]);
        assert!(matches!(mae(&[a, b]), Err(BenchError::LengthMismatch(_))));
        assert!(mae(&[]).is_err());
    }

    #[test]
    fn stats_are_per_time_and_coordinate() {
        let a = trace(&[&[1.0, 0.0], &[2.0, 2.0]]);
        let b = trace(&[&[3.0, 0.0], &[2.0, -2.0]]);
        let s = error_stats(&[a, b]).unwrap();
        assert_eq!(s.mean[(0, 0)], 2.0);
        assert_eq!(s.mean[(1, 1)], 0.0);
        assert!((s.std[(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.std[(1, 0)], 0.0);
    }
}
