use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EstimateTrace, EstimatorError, StepDiagnostics};
use crate::systems::{SystemModel, TrajectoryInstance};

/// Covariances of the disturbance `Q`, the measurement noise `R`, and the
/// initial state `P₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p0: DMatrix<f64>,
}

impl KalmanConfig {
    /// `Q = σ_w² I`, `R = σ_v² I`, `P₀ = σ₀² I`.
    pub fn isotropic(g: usize, p: usize, n: usize, sigma_w: f64, sigma_v: f64, sigma0: f64) -> Self {
        Self {
            q: DMatrix::identity(g, g) * sigma_w.powi(2),
            r: DMatrix::identity(p, p) * sigma_v.powi(2),
            p0: DMatrix::identity(n, n) * sigma0.powi(2),
        }
    }

    /// `Q = σ_w² 𝟙𝟙ᵀ` for disturbances shared by all channels.
    pub fn correlated(g: usize, p: usize, n: usize, sigma_w: f64, sigma_v: f64, sigma0: f64) -> Self {
        Self {
            q: DMatrix::from_element(g, g, sigma_w.powi(2)),
            ..Self::isotropic(g, p, n, sigma_w, sigma_v, sigma0)
        }
    }

    fn validate(&self, model: &SystemModel) -> Result<(), EstimatorError> {
        let dims = [
            ("Q", &self.q, model.disturbance_dim()),
            ("R", &self.r, model.output_dim()),
            ("P0", &self.p0, model.state_dim()),
        ];
        for (name, m, d) in dims {
            if m.nrows() != d || m.ncols() != d {
                return Err(EstimatorError::Dimension(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 * (1.0 + m.amax()) || m.iter().any(|v| !v.is_finite()) {
                return Err(EstimatorError::BadCovariance {
                    name,
                    kind: "semidefinite",
                });
            }
        }
        for (name, m) in [("R", &self.r), ("P0", &self.p0)] {
            if m.clone().cholesky().is_none() {
                return Err(EstimatorError::BadCovariance {
                    name,
                    kind: "definite",
                });
            }
        }
        let min_eig = self.q.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * (1.0 + self.q.amax()) {
            return Err(EstimatorError::BadCovariance {
                name: "Q",
                kind: "semidefinite",
            });
        }
        Ok(())
    }
}

/// Time-varying Kalman filter for affine models.
pub fn run_kf(
    model: &SystemModel,
    cfg: &KalmanConfig,
    instance: &TrajectoryInstance,
) -> Result<EstimateTrace, EstimatorError> {
    if !model.is_affine() {
        return Err(EstimatorError::NotAffine(model.name().to_string()));
    }
    run_filter(model, cfg, instance)
}

/// Extended Kalman filter: `f` linearized at the filtered estimate, `h` at the
/// prediction. On affine models this is the Kalman filter.
pub fn run_ekf(
    model: &SystemModel,
    cfg: &KalmanConfig,
    instance: &TrajectoryInstance,
) -> Result<EstimateTrace, EstimatorError> {
    run_filter(model, cfg, instance)
}

fn run_filter(
    model: &SystemModel,
    cfg: &KalmanConfig,
    instance: &TrajectoryInstance,
) -> Result<EstimateTrace, EstimatorError> {
    cfg.validate(model)?;
    let n = model.state_dim();
    let zero_w = DVector::zeros(model.disturbance_dim());
    let identity = DMatrix::<f64>::identity(n, n);
    let t_f = instance.final_time();
    let mut trace = EstimateTrace::new(t_f + 1);

    let mut x_pred = instance.x0_prior.clone();
    let mut p_pred = cfg.p0.clone();
    for t in 0..=t_f {
        let h = model.hx(&x_pred);
        let innovation = &instance.y[t] - model.h(&x_pred);
        let s = &h * &p_pred * h.transpose() + &cfg.r;
        let s_inv = s
            .cholesky()
            .ok_or(EstimatorError::BadCovariance {
                name: "innovation covariance",
                kind: "definite",
            })?
            .inverse();
        let gain = &p_pred * h.transpose() * s_inv;
        let x_filt = &x_pred + &gain * innovation;
        let ikh = &identity - &gain * &h;
        let p_filt = &ikh * &p_pred * ikh.transpose() + &gain * &cfg.r * gain.transpose();

        trace.push(
            &instance.x[t],
            x_filt.clone(),
            StepDiagnostics::filter_step(),
            instance.x0_prior.clone(),
            0,
        );

        let fx = model.fx(&x_filt, &zero_w);
        let fw = model.fw(&x_filt, &zero_w);
        x_pred = model.f(&x_filt, &zero_w);
        p_pred = &fx * &p_filt * fx.transpose() + &fw * &cfg.q * fw.transpose();
        p_pred = (&p_pred + p_pred.transpose()) * 0.5;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar() -> SystemModel {
        SystemModel::linear(
            "scalar",
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn single_step(y0: f64) -> TrajectoryInstance {
        TrajectoryInstance {
            x: vec![DVector::from_element(1, 0.0)],
            y: vec![DVector::from_element(1, y0)],
            w: vec![],
            v: vec![DVector::from_element(1, y0)],
            x0_prior: DVector::zeros(1),
            seed: 0,
            stream: 0,
        }
    }

    #[test]
    fn scalar_update_halves() {
        let cfg = KalmanConfig::isotropic(1, 1, 1, 1.0, 1.0, 1.0);
        let trace = run_kf(&scalar(), &cfg, &single_step(1.0)).unwrap();
        assert_relative_eq!(trace.estimates[0][0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn huge_noise_means_pure_prediction() {
        let mut cfg = KalmanConfig::isotropic(1, 1, 1, 0.0, 1.0, 1.0);
        cfg.r[(0, 0)] = 1e12;
        let m = scalar();
        let inst = TrajectoryInstance {
            x: vec![DVector::from_element(1, 1.0); 4],
            y: vec![DVector::from_element(1, 5.0); 4],
            w: vec![DVector::zeros(1); 3],
            v: vec![DVector::zeros(1); 4],
            x0_prior: DVector::from_element(1, 2.0),
            seed: 0,
            stream: 0,
        };
        let trace = run_kf(&m, &cfg, &inst).unwrap();
        for (t, x) in trace.estimates.iter().enumerate() {
            assert_relative_eq!(x[0], 2.0 * 0.5f64.powi(t as i32), epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_bad_covariances() {
        let mut cfg = KalmanConfig::isotropic(1, 1, 1, 1.0, 1.0, 1.0);
        cfg.r[(0, 0)] = 0.0;
        assert!(matches!(
            run_kf(&scalar(), &cfg, &single_step(1.0)),
            Err(EstimatorError::BadCovariance { name: "R", .. })
        ));
        let cfg = KalmanConfig::isotropic(2, 1, 1, 1.0, 1.0, 1.0);
        assert!(matches!(
            run_kf(&scalar(), &cfg, &single_step(1.0)),
            Err(EstimatorError::Dimension(_))
        ));
    }

    #[test]
    fn correlated_q_is_rank_one() {
        let cfg = KalmanConfig::correlated(3, 1, 3, 0.02, 0.1, 1.0);
        assert_eq!(cfg.q, DMatrix::from_element(3, 3, 0.0004));
    }
}
