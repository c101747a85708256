//! System models `x⁺ = f(x, w)`, `y = h(x) + v`, the two shipped examples,
//! and i-IOSS certificates for them.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcalc::{DecayL, FuncalcError, PowerK, ProductKL};

/// Reaction rate constant of the batch reactor.
pub const REACTOR_RATE: f64 = 0.16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("sampling period must be positive, got {0}")]
    BadSamplingPeriod(f64),
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("matrix dimensions do not agree: {0}")]
    Dimensions(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("matrix is not diagonalizable (eigenvector condition number {condition:e})")]
    NotDiagonalizable { condition: f64 },
    #[error("spectral radius {spectral_radius} is not below one")]
    Unstable { spectral_radius: f64 },
    #[error("matrix must be square")]
    NotSquare,
    #[error(transparent)]
    Parameter(#[from] ModelError),
    #[error(transparent)]
    Funcalc(#[from] FuncalcError),
}

#[derive(Debug, Clone, PartialEq)]
enum Dynamics {
    Linear {
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
    },
    Reactor {
        rate: f64,
        ts: f64,
        disturbance_gain: f64,
    },
}

/// A discrete-time model with hand-coded Jacobians and an admissible state box.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    name: String,
    n: usize,
    g: usize,
    p: usize,
    dynamics: Dynamics,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl SystemModel {
    /// `x⁺ = A x + G w`, `y = C x + v`.
    pub fn linear(
        name: impl Into<String>,
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        if a.ncols() != n || g.nrows() != n || c.ncols() != n {
            return Err(ModelError::Dimensions(format!(
                "A {}x{}, G {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                g.nrows(),
                g.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Self {
            name: name.into(),
            n,
            g: g.ncols(),
            p: c.nrows(),
            dynamics: Dynamics::Linear { a, g, c },
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn disturbance_dim(&self) -> usize {
        self.g
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.dynamics, Dynamics::Linear { .. })
    }

    /// The state matrix of an affine model.
    pub fn state_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.dynamics {
            Dynamics::Linear { a, .. } => Some(a),
            Dynamics::Reactor { .. } => None,
        }
    }

    pub fn lower_bounds(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn admissible(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(&xi, (&lo, &hi))| xi.is_finite() && xi >= lo && xi <= hi)
    }

    pub fn f(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match &self.dynamics {
            Dynamics::Linear { a, g, .. } => a * x + g * w,
            Dynamics::Reactor {
                rate,
                ts,
                disturbance_gain,
            } => {
                let r = rate * x[0] * x[0];
                DVector::from_vec(vec![
                    x[0] - ts * 2.0 * r + disturbance_gain * w[0],
                    x[1] + ts * r,
                ])
            }
        }
    }

    pub fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.dynamics {
            Dynamics::Linear { c, .. } => c * x,
            Dynamics::Reactor { .. } => DVector::from_element(1, x[0] + x[1]),
        }
    }

    pub fn fx(&self, x: &DVector<f64>, _w: &DVector<f64>) -> DMatrix<f64> {
        match &self.dynamics {
            Dynamics::Linear { a, .. } => a.clone(),
            Dynamics::Reactor { rate, ts, .. } => DMatrix::from_row_slice(
                2,
                2,
                &[
                    1.0 - 4.0 * rate * ts * x[0],
                    0.0,
                    2.0 * rate * ts * x[0],
                    1.0,
                ],
            ),
        }
    }

    pub fn fw(&self, _x: &DVector<f64>, _w: &DVector<f64>) -> DMatrix<f64> {
        match &self.dynamics {
            Dynamics::Linear { g, .. } => g.clone(),
            Dynamics::Reactor {
                disturbance_gain, ..
            } => DMatrix::from_column_slice(2, 1, &[*disturbance_gain, 0.0]),
        }
    }

    pub fn hx(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        match &self.dynamics {
            Dynamics::Linear { c, .. } => c.clone(),
            Dynamics::Reactor { .. } => DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        }
    }

    /// Forward simulation from `x0` under the disturbance sequence `w`.
    pub fn simulate(&self, x0: &DVector<f64>, w: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut xs = Vec::with_capacity(w.len() + 1);
        xs.push(x0.clone());
        for wt in w {
            let next = self.f(xs.last().unwrap(), wt);
            xs.push(next);
        }
        xs
    }
}

/// The three-state linear example with an additive disturbance on every state.
pub fn make_linear_example() -> SystemModel {
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[0.74, 0.21, -0.25, 0.09, 0.86, -0.19, -0.09, 0.18, 0.50],
    );
    let c = DMatrix::from_row_slice(1, 3, &[0.1, 2.0, 1.0]);
    SystemModel::linear("linear3", a, DMatrix::identity(3, 3), c).expect("static dimensions")
}

/// Prior mean of the initial state for the linear example.
pub fn linear_example_prior() -> DVector<f64> {
    DVector::from_vec(vec![1.0, 1.0, -1.0])
}

/// Prior mean of the initial state for the reactor example.
pub fn reactor_example_prior() -> DVector<f64> {
    DVector::from_vec(vec![0.1, 4.5])
}

/// Euler discretization of the batch reactor `ẋ₁ = −2k x₁² + w`, `ẋ₂ = k x₁²`,
/// `y = x₁ + x₂ + v`, with the disturbance entering as `Ts·w`.
pub fn make_reactor_example(ts: f64, c0: f64) -> Result<SystemModel, ModelError> {
    make_reactor_example_with(ts, c0, false)
}

/// As [`make_reactor_example`]; with `sde_scaling` the disturbance enters as `√Ts·w`.
pub fn make_reactor_example_with(
    ts: f64,
    c0: f64,
    sde_scaling: bool,
) -> Result<SystemModel, ModelError> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(ModelError::BadSamplingPeriod(ts));
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(ModelError::NonPositive {
            name: "c0",
            value: c0,
        });
    }
    Ok(SystemModel {
        name: "reactor".into(),
        n: 2,
        g: 1,
        p: 1,
        dynamics: Dynamics::Reactor {
            rate: REACTOR_RATE,
            ts,
            disturbance_gain: if sde_scaling { ts.sqrt() } else { ts },
        },
        lower: DVector::from_vec(vec![0.0, c0]),
        upper: DVector::from_element(2, f64::INFINITY),
    })
}

/// `(β, α₁, α₂)` with `|x¹_t − x²_t| ≤ β(|δx₀|, t) + α₁(‖δw‖) + α₂(‖δh(x)‖)`.
/// A missing `alpha` is the zero function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IossCertificate {
    pub beta: ProductKL,
    pub alpha1: Option<PowerK>,
    pub alpha2: Option<PowerK>,
}

impl IossCertificate {
    pub fn alpha1_eval(&self, s: f64) -> f64 {
        self.alpha1.map_or(0.0, |a| a.eval(s))
    }

    pub fn alpha2_eval(&self, s: f64) -> f64 {
        self.alpha2.map_or(0.0, |a| a.eval(s))
    }

    pub fn bound(&self, dx0: f64, dw: f64, dh: f64, t: usize) -> f64 {
        self.beta.eval(dx0, t) + self.alpha1_eval(dw) + self.alpha2_eval(dh)
    }

    /// Certificate of a perturbed linear system from its eigen-data:
    /// `β = κ s ρ^t`, `α₁ = κ/(1−ρ) s`, `α₂ = Lκ/(1−ρ) s`.
    pub fn from_linear_parts(
        parts: LinearCertificateParts,
        lipschitz: f64,
    ) -> Result<Self, CertificateError> {
        let LinearCertificateParts {
            condition,
            spectral_radius,
        } = parts;
        if spectral_radius >= 1.0 {
            return Err(CertificateError::Unstable { spectral_radius });
        }
        if lipschitz < 0.0 {
            return Err(ModelError::NonPositive {
                name: "lipschitz",
                value: lipschitz,
            }
            .into());
        }
        let gain = condition / (1.0 - spectral_radius);
        // ρ(A) = 0 (nilpotent) still admits any base in (0,1); use a tiny one
        let base = spectral_radius.max(f64::MIN_POSITIVE);
        Ok(Self {
            beta: ProductKL::new(PowerK::linear(condition)?, DecayL::exponential(base)?),
            alpha1: Some(PowerK::linear(gain)?),
            alpha2: if lipschitz > 0.0 {
                Some(PowerK::linear(lipschitz * gain)?)
            } else {
                None
            },
        })
    }
}

/// Eigenvector condition number `|P⁻¹||P|` and spectral radius of a state matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCertificateParts {
    pub condition: f64,
    pub spectral_radius: f64,
}

impl LinearCertificateParts {
    /// Rounds both quantities up to `decimals` places, which keeps the
    /// resulting certificate valid.
    pub fn rounded_up(&self, decimals: i32) -> Self {
        let scale = 10f64.powi(decimals);
        let up = |v: f64| (v * scale - 1e-9).ceil() / scale;
        Self {
            condition: up(self.condition),
            spectral_radius: up(self.spectral_radius),
        }
    }
}

const DIAGONALIZABLE_CONDITION_LIMIT: f64 = 1e12;

/// Computes `κ₂(P)` for unit-norm eigenvectors and `ρ(A)`.
pub fn linear_certificate_parts(
    a: &DMatrix<f64>,
) -> Result<LinearCertificateParts, CertificateError> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(CertificateError::NotSquare);
    }
    let eigenvalues = a.clone().complex_eigenvalues();
    let spectral_radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);

    let scale = a.norm().max(1.0);
    let cluster_tol = 1e-6 * scale;
    let null_tol = 1e-7 * scale;

    let mut remaining: Vec<Complex<f64>> = eigenvalues.iter().copied().collect();
    let ac = a.map(|v| Complex::new(v, 0.0));
    let mut columns: Vec<DVector<Complex<f64>>> = Vec::with_capacity(n);
    while let Some(seed) = remaining.pop() {
        let mut cluster = vec![seed];
        let mut i = 0;
        while i < remaining.len() {
            if cluster.iter().any(|c| (c - remaining[i]).norm() <= cluster_tol) {
                cluster.push(remaining.swap_remove(i));
                i = 0;
            } else {
                i += 1;
            }
        }
        let centre = cluster.iter().sum::<Complex<f64>>() / cluster.len() as f64;
        let shifted = &ac - DMatrix::<Complex<f64>>::identity(n, n) * centre;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let m = cluster.len();
        if svd.singular_values[order[m - 1]] > null_tol {
            // geometric multiplicity falls short of the algebraic one
            return Err(CertificateError::NotDiagonalizable {
                condition: f64::INFINITY,
            });
        }
        for &idx in &order[..m] {
            columns.push(v_t.row(idx).adjoint());
        }
    }
    let p = DMatrix::from_columns(&columns);
    let sv = p.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= DIAGONALIZABLE_CONDITION_LIMIT) {
        return Err(CertificateError::NotDiagonalizable { condition });
    }
    if spectral_radius >= 1.0 - 1e-9 {
        return Err(CertificateError::Unstable { spectral_radius });
    }
    Ok(LinearCertificateParts {
        condition,
        spectral_radius,
    })
}

/// Exponential i-IOSS certificate of `x⁺ = A x + g(x) + w` where `g` is
/// `lipschitz`-bounded by output differences. With `loosen = Some(b')` the
/// KL bound is replaced by its smallest dominating rational bound.
pub fn linear_ioss_certificate(
    a: &DMatrix<f64>,
    lipschitz: f64,
    loosen: Option<f64>,
) -> Result<IossCertificate, CertificateError> {
    let parts = linear_certificate_parts(a)?;
    let mut cert = IossCertificate::from_linear_parts(parts, lipschitz)?;
    if let Some(rate) = loosen {
        cert.beta = cert.beta.exp_to_rational(rate)?;
    }
    Ok(cert)
}

/// The linear example's certificate with `κ` and `ρ` rounded up to two
/// decimals: `β = 3.04 s 0.9^t`, `α₁ = 30.4 s`, `α₂ = 0`.
pub fn linear_example_certificate() -> IossCertificate {
    let model = make_linear_example();
    let parts = linear_certificate_parts(model.state_matrix().unwrap())
        .expect("example is stable and diagonalizable")
        .rounded_up(2);
    IossCertificate::from_linear_parts(parts, 0.0).expect("rounded parts remain stable")
}

/// Reactor certificate from the comparison-lemma bound mapped to discrete
/// steps: `β = 2s·(e^(−2k c₀ Ts))^t`, `α₁ = s/(k c₀)`, `α₂ = s`.
pub fn reactor_ioss_certificate(
    rate: f64,
    c0: f64,
    ts: f64,
) -> Result<IossCertificate, CertificateError> {
    for (name, value) in [("k", rate), ("c0", c0), ("Ts", ts)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ModelError::NonPositive { name, value }.into());
        }
    }
    Ok(IossCertificate {
        beta: ProductKL::new(
            PowerK::linear(2.0)?,
            DecayL::exponential((-2.0 * rate * c0 * ts).exp())?,
        ),
        alpha1: Some(PowerK::linear(1.0 / (rate * c0))?),
        alpha2: Some(PowerK::linear(1.0)?),
    })
}

/// Simulated data for one Monte-Carlo instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInstance {
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub x0_prior: DVector<f64>,
    /// Master seed and stream index of the generator that produced the instance.
    pub seed: u64,
    pub stream: u64,
}

impl TrajectoryInstance {
    pub fn final_time(&self) -> usize {
        self.x.len() - 1
    }

    /// Largest discrepancy between the stored data and a re-simulation.
    pub fn replay_error(&self, model: &SystemModel) -> f64 {
        let xs = model.simulate(&self.x[0], &self.w);
        let state_err = xs
            .iter()
            .zip(&self.x)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        let out_err = self
            .x
            .iter()
            .zip(self.y.iter().zip(&self.v))
            .map(|(x, (y, v))| (model.h(x) + v - y).amax())
            .fold(0.0, f64::max);
        state_err.max(out_err)
    }
}

/// Where initial-state pairs and disturbance sequences are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingRegion {
    pub x_lower: DVector<f64>,
    pub x_upper: DVector<f64>,
    pub w_bound: f64,
}

impl SamplingRegion {
    pub fn default_for(model: &SystemModel) -> Self {
        match &model.dynamics {
            Dynamics::Linear { .. } => Self {
                x_lower: DVector::from_element(model.n, -5.0),
                x_upper: DVector::from_element(model.n, 5.0),
                w_bound: 1.0,
            },
            Dynamics::Reactor { .. } => Self {
                x_lower: model.lower.clone(),
                x_upper: DVector::from_element(2, 10.0),
                w_bound: 0.01,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// Max over pairs and times of `lhs − rhs`.
    pub max_violation: f64,
    pub worst_pair: usize,
    pub worst_time: usize,
    pub pairs_checked: usize,
    pub passed: bool,
}

pub const CERTIFICATE_TOLERANCE: f64 = 1e-9;

pub fn verify_certificate_empirically(
    model: &SystemModel,
    cert: &IossCertificate,
    pairs: usize,
    horizon: usize,
    seed: u64,
) -> CertificateReport {
    verify_certificate_in_region(
        model,
        cert,
        &SamplingRegion::default_for(model),
        pairs,
        horizon,
        seed,
    )
}

/// Samples pairs of trajectories and checks the i-IOSS inequality pointwise.
/// Every other pair shares its disturbance sequence so that the KL term is
/// exercised in isolation. Pairs leaving the admissible box are redrawn.
pub fn verify_certificate_in_region(
    model: &SystemModel,
    cert: &IossCertificate,
    region: &SamplingRegion,
    pairs: usize,
    horizon: usize,
    seed: u64,
) -> CertificateReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CertificateReport {
        max_violation: f64::NEG_INFINITY,
        worst_pair: 0,
        worst_time: 0,
        pairs_checked: 0,
        passed: false,
    };
    let draw_x = |rng: &mut ChaCha8Rng| {
        DVector::from_fn(model.n, |i, _| {
            rng.random_range(region.x_lower[i]..=region.x_upper[i])
        })
    };
    let draw_w = |rng: &mut ChaCha8Rng| -> Vec<DVector<f64>> {
        (0..horizon)
            .map(|_| {
                DVector::from_fn(model.g, |_, _| {
                    rng.random_range(-region.w_bound..=region.w_bound)
                })
            })
            .collect()
    };
    let mut pair = 0;
    let mut attempts = 0;
    while pair < pairs && attempts < 1000 * pairs.max(1) {
        attempts += 1;
        let x1 = draw_x(&mut rng);
        let x2 = draw_x(&mut rng);
        let w1 = draw_w(&mut rng);
        let w2 = if pair % 2 == 0 { w1.clone() } else { draw_w(&mut rng) };
        let t1 = model.simulate(&x1, &w1);
        let t2 = model.simulate(&x2, &w2);
        if !t1.iter().chain(&t2).all(|x| model.admissible(x)) {
            continue;
        }
        let dx0 = (&x1 - &x2).norm();
        let mut dw = 0.0f64;
        let mut dh = 0.0f64;
        for t in 0..=horizon {
            if t > 0 {
                dw = dw.max((&w1[t - 1] - &w2[t - 1]).norm());
            }
            dh = dh.max((model.h(&t1[t]) - model.h(&t2[t])).norm());
            let lhs = (&t1[t] - &t2[t]).norm();
            let violation = lhs - cert.bound(dx0, dw, dh, t);
            if violation > report.max_violation {
                report.max_violation = violation;
                report.worst_pair = pair;
                report.worst_time = t;
            }
        }
        pair += 1;
    }
    report.pairs_checked = pair;
    report.passed = pair == pairs && report.max_violation <= CERTIFICATE_TOLERANCE;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn linear_example_maps() {
        let m = make_linear_example();
        let x = m.f(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 0.0, 0.0]));
        assert_relative_eq!(x, v(&[0.74, 0.09, -0.09]), epsilon = 1e-15);
        assert_relative_eq!(m.h(&linear_example_prior())[0], 1.1, epsilon = 1e-14);
        let x = m.f(&v(&[0.0, 0.0, 0.0]), &v(&[0.1, 0.1, 0.1]));
        assert_relative_eq!(x, v(&[0.1, 0.1, 0.1]), epsilon = 1e-15);
        assert!(m.is_affine());
    }

    #[test]
    fn reactor_step() {
        let m = make_reactor_example(0.1, 0.1).unwrap();
        let x = m.f(&reactor_example_prior(), &v(&[0.0]));
        assert_relative_eq!(x, v(&[0.09968, 4.50016]), epsilon = 1e-14);
        let fixed = m.f(&v(&[0.0, 3.3]), &v(&[0.0]));
        assert_eq!(fixed, v(&[0.0, 3.3]));
        let x0 = v(&[0.7, 2.0]);
        let w = 0.004;
        let x1 = m.f(&x0, &v(&[w]));
        let drift = (x1[0] + 2.0 * x1[1]) - (x0[0] + 2.0 * x0[1]);
        assert_relative_eq!(drift, 0.1 * w, epsilon = 1e-15);
        assert!(!m.is_affine());
    }

    #[test]
    fn reactor_rejects_bad_period() {
        assert!(matches!(
            make_reactor_example(0.0, 0.1),
            Err(ModelError::BadSamplingPeriod(_))
        ));
        assert!(make_reactor_example(-1.0, 0.1).is_err());
    }

    #[test]
    fn reactor_jacobian_by_hand() {
        let m = make_reactor_example(0.1, 0.1).unwrap();
        let fx = m.fx(&reactor_example_prior(), &v(&[0.0]));
        assert_relative_eq!(
            fx,
            DMatrix::from_row_slice(2, 2, &[0.9936, 0.0, 0.0032, 1.0]),
            epsilon = 1e-15
        );
        assert_eq!(m.hx(&reactor_example_prior()), DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
    }

    #[test]
    fn linear_example_certificate_values() {
        let m = make_linear_example();
        let parts = linear_certificate_parts(m.state_matrix().unwrap()).unwrap();
        assert_relative_eq!(parts.spectral_radius, 0.9, max_relative = 0.01);
        assert_relative_eq!(parts.condition, 3.04, max_relative = 0.01);
        let cert = linear_ioss_certificate(m.state_matrix().unwrap(), 0.0, None).unwrap();
        assert_relative_eq!(cert.alpha1.unwrap().coeff(), 30.3, max_relative = 0.01);
        assert!(cert.alpha2.is_none());

        let published = linear_example_certificate();
        assert_relative_eq!(published.beta.k.coeff(), 3.04, epsilon = 1e-12);
        assert_eq!(published.beta.l, DecayL::Exponential(0.9));
        assert_relative_eq!(published.alpha1.unwrap().coeff(), 30.4, max_relative = 1e-12);
    }

    #[test]
    fn scaled_identity_certificate() {
        let a = DMatrix::identity(2, 2) * 0.5;
        let cert = linear_ioss_certificate(&a, 0.0, None).unwrap();
        assert_relative_eq!(cert.beta.k.coeff(), 1.0, epsilon = 1e-12);
        assert_eq!(cert.beta.l, DecayL::Exponential(0.5));
        assert_relative_eq!(cert.alpha1.unwrap().coeff(), 2.0, epsilon = 1e-12);
        assert!(cert.alpha2.is_none());
    }

    #[test]
    fn certificate_errors() {
        let unstable = DMatrix::from_element(1, 1, 1.1);
        assert!(matches!(
            linear_ioss_certificate(&unstable, 0.0, None),
            Err(CertificateError::Unstable { .. })
        ));
        let jordan = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        assert!(matches!(
            linear_ioss_certificate(&jordan, 0.0, None),
            Err(CertificateError::NotDiagonalizable { .. })
        ));
        assert!(matches!(
            linear_ioss_certificate(&DMatrix::zeros(2, 3), 0.0, None),
            Err(CertificateError::NotSquare)
        ));
    }

    #[test]
    fn rotation_has_complex_eigenvectors() {
        let (c, s) = (0.8 * 0.6f64.cos(), 0.8 * 0.6f64.sin());
        let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let parts = linear_certificate_parts(&a).unwrap();
        assert_relative_eq!(parts.spectral_radius, 0.8, epsilon = 1e-12);
        assert_relative_eq!(parts.condition, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn loosened_certificate() {
        let m = make_linear_example();
        let cert =
            linear_ioss_certificate(m.state_matrix().unwrap(), 0.0, Some(1.0)).unwrap();
        assert_eq!(cert.beta.l, DecayL::Rational(1.0));
    }

    #[test]
    fn reactor_certificate_values() {
        let cert = reactor_ioss_certificate(0.16, 0.1, 0.1).unwrap();
        assert_relative_eq!(cert.beta.eval(1.0, 0), 2.0);
        assert_eq!(cert.beta.eval(0.0, 12), 0.0);
        match cert.beta.l {
            DecayL::Exponential(b) => assert_relative_eq!(b, (-0.0032f64).exp(), epsilon = 1e-15),
            _ => panic!("expected exponential decay"),
        }
        assert_relative_eq!(cert.alpha1.unwrap().coeff(), 62.5, epsilon = 1e-12);
        assert_relative_eq!(cert.alpha2.unwrap().coeff(), 1.0);
        assert!(reactor_ioss_certificate(0.16, 0.0, 0.1).is_err());
    }

    #[test]
    fn shipped_certificates_hold_empirically() {
        let lin = make_linear_example();
        let report = verify_certificate_empirically(&lin, &linear_example_certificate(), 100, 60, 1);
        assert!(report.passed, "{report:?}");
        let reactor = make_reactor_example(0.1, 0.1).unwrap();
        let cert = reactor_ioss_certificate(REACTOR_RATE, 0.1, 0.1).unwrap();
        let report = verify_certificate_empirically(&reactor, &cert, 100, 60, 2);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn sub_unit_beta_is_falsified() {
        let lin = make_linear_example();
        let mut cert = linear_example_certificate();
        cert.beta.k = cert.beta.k.scaled(0.3);
        let report = verify_certificate_empirically(&lin, &cert, 100, 60, 3);
        assert!(!report.passed);
        assert!(report.max_violation > 0.0);
    }

    #[test]
    fn reactor_free_trajectories_are_monotone_and_conserve() {
        let m = make_reactor_example(0.1, 0.1).unwrap();
        let xs = m.simulate(&v(&[3.0, 0.5]), &vec![v(&[0.0]); 60]);
        for pair in xs.windows(2) {
            assert!(pair[1][0] <= pair[0][0]);
            assert!(pair[1][1] >= pair[0][1]);
            let c0 = pair[0][0] + 2.0 * pair[0][1];
            let c1 = pair[1][0] + 2.0 * pair[1][1];
            assert!((c1 - c0).abs() <= 1e-14 * c0.abs().max(1.0));
        }
    }
}
