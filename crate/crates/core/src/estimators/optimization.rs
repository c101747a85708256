use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{EstimateTrace, EstimatorError, StepDiagnostics};
use crate::cost::CostSpec;
use crate::solver::{solve_window, SolverOptions, WindowError, WindowProblem, WindowSolution};
use crate::systems::{SystemModel, TrajectoryInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub cost: CostSpec,
    #[serde(default)]
    pub identical_disturbances: bool,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// Full-information estimation: the window always starts at 0 with prior `x̄₀`.
pub fn run_fie(
    model: &SystemModel,
    cfg: &OptimizationConfig,
    instance: &TrajectoryInstance,
) -> Result<EstimateTrace, EstimatorError> {
    run_windows(model, cfg, None, instance)
}

/// Moving-horizon estimation. Up to `t = T` the windows coincide with FIE;
/// afterwards the window `[t−T, t]` uses the earlier estimate `x̂⋆_{t−T}` as prior.
pub fn run_mhe(
    model: &SystemModel,
    cfg: &OptimizationConfig,
    horizon: usize,
    instance: &TrajectoryInstance,
) -> Result<EstimateTrace, EstimatorError> {
    if horizon == 0 {
        return Err(EstimatorError::ZeroHorizon);
    }
    run_windows(model, cfg, Some(horizon), instance)
}

fn run_windows(
    model: &SystemModel,
    cfg: &OptimizationConfig,
    horizon: Option<usize>,
    instance: &TrajectoryInstance,
) -> Result<EstimateTrace, EstimatorError> {
    let n = model.state_dim();
    let g = model.disturbance_dim();
    let t_f = instance.final_time();
    let mut trace = EstimateTrace::new(t_f + 1);
    let mut previous: Option<(usize, WindowSolution)> = None;

    for t in 0..=t_f {
        let start = match horizon {
            Some(h) if t > h => t - h,
            _ => 0,
        };
        let prior = if start == 0 {
            instance.x0_prior.clone()
        } else {
            trace.estimates[start].clone()
        };
        let warm = previous.as_ref().map(|(prev_start, sol)| {
            let shift = start - prev_start;
            let mut z = DVector::zeros(n + (t - start) * g);
            z.rows_mut(0, n).copy_from(&sol.states[shift]);
            for (k, w) in sol.omega.iter().skip(shift).enumerate() {
                z.rows_mut(n + k * g, g).copy_from(w);
            }
            z
        });
        let problem = WindowProblem {
            model,
            cost: &cfg.cost,
            prior: prior.clone(),
            measurements: &instance.y[start..=t],
            identical_disturbances: cfg.identical_disturbances,
        };
        let mut opts = cfg.solver;
        opts.seed = cfg
            .solver
            .seed
            .wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let clock = Instant::now();
        let result = solve_window(&problem, warm.as_ref(), &opts);
        let solve_ms = clock.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(sol) => {
                let diag = StepDiagnostics {
                    converged: sol.report.converged,
                    iterations: sol.report.iterations,
                    objective: sol.report.objective,
                    kkt_residual: sol.report.kkt_residual,
                    solve_ms,
                };
                trace.push(&instance.x[t], sol.last_state().clone(), diag, prior, start);
                previous = Some((start, sol));
            }
            Err(WindowError::Infeasible(_) | WindowError::Qp(_)) => {
                // keep going from a propagated estimate; the step is flagged
                let fallback = match trace.estimates.last() {
                    Some(x) => model.f(x, &DVector::zeros(g)),
                    None => prior.clone(),
                };
                let diag = StepDiagnostics {
                    converged: false,
                    iterations: 0,
                    objective: f64::NAN,
                    kkt_residual: f64::INFINITY,
                    solve_ms,
                };
                trace.push(&instance.x[t], fallback, diag, prior, start);
                previous = None;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{ArrivalCostSpec, ArrivalDecay, StageCostSpec, StageLoss, StateBound};
    use crate::stochastics::{generate_instances, InitialPrior, InstanceSet, NoiseSpec};
    use crate::systems::{linear_example_prior, make_linear_example};

    fn mhe_config(lambda: f64) -> OptimizationConfig {
        OptimizationConfig {
            cost: CostSpec {
                arrival: ArrivalCostSpec::new(1.0, 2.0, ArrivalDecay::Exponential(0.81)).unwrap(),
                stage: StageCostSpec::weighted(
                    lambda,
                    lambda,
                    StageLoss::Quadratic(25.0),
                    StageLoss::Quadratic(100.0),
                )
                .unwrap(),
                x_bound: Some(StateBound::Box(3.0)),
                w_bound: Some(0.6),
                v_bound: Some(0.3),
            },
            identical_disturbances: false,
            solver: SolverOptions::default(),
        }
    }

    fn noisy_instance(t_f: usize) -> TrajectoryInstance {
        let m = make_linear_example();
        generate_instances(
            &m,
            &NoiseSpec::trunc_gauss(3, 0.2).unwrap(),
            &NoiseSpec::trunc_gauss(1, 0.1).unwrap(),
            &InitialPrior {
                mean: linear_example_prior(),
                sigma0: 1.0,
            },
            &InstanceSet {
                n: 1,
                t_f,
                master_seed: 4,
            },
            false,
        )
        .unwrap()
        .remove(0)
    }

    #[test]
    fn long_horizon_matches_fie() {
        let m = make_linear_example();
        let inst = noisy_instance(8);
        let cfg = mhe_config(0.99);
        let fie = run_fie(&m, &cfg, &inst).unwrap();
        let mhe = run_mhe(&m, &cfg, 8, &inst).unwrap();
        assert_eq!(fie.estimates, mhe.estimates);
    }

    #[test]
    fn warm_up_and_prior_chain() {
        let m = make_linear_example();
        let inst = noisy_instance(12);
        let cfg = mhe_config(0.99);
        let fie = run_fie(&m, &cfg, &inst).unwrap();
        let mhe = run_mhe(&m, &cfg, 4, &inst).unwrap();
        assert_eq!(&fie.estimates[..=4], &mhe.estimates[..=4]);
        for t in 5..=12 {
            assert_eq!(mhe.window_starts[t], t - 4);
            assert_eq!(mhe.priors[t], mhe.estimates[t - 4]);
        }
        assert_eq!(mhe.unconverged(), 0);
    }

    #[test]
    fn zero_horizon_rejected() {
        let m = make_linear_example();
        let inst = noisy_instance(2);
        assert!(matches!(
            run_mhe(&m, &mhe_config(0.5), 0, &inst),
            Err(EstimatorError::ZeroHorizon)
        ));
    }
}
