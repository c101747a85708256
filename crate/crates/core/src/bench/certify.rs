use serde::Serialize;

use super::{BenchError, EstimatorConfig, ExperimentConfig};
use crate::cost::{sandwich_bounds, ArrivalDecay, CostSpec};
use crate::funcalc::DecayL;
use crate::stability::{
    admissible_b2_range, check_arrival_admissible, compose_rgas_bounds, compute_s_bar,
    min_horizon, Admissibility, B2Range, HorizonAssumptions, HorizonCertificate, RgasBounds,
};
use crate::systems::IossCertificate;

/// Everything the stability analysis says about one optimization-based estimator.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorStability {
    pub estimator: String,
    pub certificate: String,
    pub admissibility: Admissibility,
    pub b2_range: B2Range,
    pub bounds: RgasBounds,
    pub horizon: HorizonCertificate,
}

/// The model certificate in the decay family of `cost`'s arrival term.
pub fn certificate_for(
    cfg: &ExperimentConfig,
    cost: &CostSpec,
) -> Result<(IossCertificate, String), BenchError> {
    let cert = cfg.model.certificate()?;
    let id = cfg.model.id();
    match (cert.beta.l, cost.arrival.decay) {
        (DecayL::Exponential(b1), ArrivalDecay::Rational(_)) => {
            let rate = cfg.stability.rational_rate.unwrap_or(-b1.ln());
            let beta = cert
                .beta
                .exp_to_rational(rate)
                .map_err(|e| BenchError::Config(e.to_string()))?;
            Ok((IossCertificate { beta, ..cert }, format!("{id}/rational({rate})")))
        }
        _ => Ok((cert, format!("{id}/published"))),
    }
}

/// `M₀ = 3σ₀√n`; `M_w`, `M_v` are the box radii of the noise times `√dim`.
pub fn magnitudes(cfg: &ExperimentConfig) -> Result<(f64, f64, f64), BenchError> {
    let model = cfg.model.build()?;
    let root = |d: usize| (d as f64).sqrt();
    Ok((
        3.0 * cfg.noise.sigma0 * root(model.state_dim()),
        cfg.noise.process.max_abs() * root(model.disturbance_dim()),
        cfg.noise.measurement.max_abs() * root(model.output_dim()),
    ))
}

pub fn analyze(
    cfg: &ExperimentConfig,
    est: &EstimatorConfig,
) -> Result<EstimatorStability, BenchError> {
    let cost = est.spec.cost().ok_or_else(|| {
        BenchError::Config(format!("`{}` is not an optimization-based estimator", est.name))
    })?;
    let model = cfg.model.build()?;
    let (cert, cert_id) = certificate_for(cfg, cost)?;
    let stability = |e: crate::stability::StabilityError| {
        BenchError::Config(format!("`{}`: {e}", est.name))
    };
    let admissibility = check_arrival_admissible(&cert, &cost.arrival).map_err(stability)?;
    let b2_range = admissible_b2_range(&cert, cost.arrival.a2);
    let env = sandwich_bounds(&cost.stage, model.disturbance_dim(), model.output_dim())
        .map_err(|e| BenchError::Config(format!("`{}`: {e}", est.name)))?;
    let bounds = compose_rgas_bounds(&cert, &cost.arrival, &env).map_err(stability)?;
    let (m0, mw, mv) = magnitudes(cfg)?;
    let eta = cfg.stability.eta;
    let s_bar = compute_s_bar(&bounds, m0, mw, mv, eta).map_err(stability)?;
    let horizon = min_horizon(&bounds, s_bar, eta)
        .map_err(stability)?
        .with_assumptions(HorizonAssumptions {
            m0,
            mw,
            mv,
            certificate: cert_id.clone(),
            cost: est.name.clone(),
        });
    Ok(EstimatorStability {
        estimator: est.name.clone(),
        certificate: cert_id,
        admissibility,
        b2_range,
        bounds,
        horizon,
    })
}
