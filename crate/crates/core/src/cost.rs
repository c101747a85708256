//! Arrival and stage costs of the FIE/MHE problems.
//!
//! For a window of length `T` the stage cost is
//! `λ_w/T Σ l_w(ω_τ) + λ_v/(T+1) Σ l_v(ν_τ) + (1−λ_w) max l_w(ω_τ) + (1−λ_v) max l_v(ν_τ)`,
//! with all `ω` terms absent when `T = 0`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcalc::{DecayL, FuncalcError, PowerK, ProductKL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("expected {expected} {what}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("lower envelope degenerates for λ = 1 ({0})")]
    DegenerateLowerBound(&'static str),
    #[error("the classic cost preset carries no stability envelopes")]
    Uncertified,
    #[error("invalid cost parameter `{name}` = {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Funcalc(#[from] FuncalcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "b2", rename_all = "snake_case")]
pub enum ArrivalDecay {
    /// `b₂^T`
    Exponential(f64),
    /// `(T+1)^(−b₂)`
    Rational(f64),
    None,
}

/// `V_{T,1}(d) = c₂ |d|^{a₂} decay(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalCostSpec {
    pub c2: f64,
    pub a2: f64,
    pub decay: ArrivalDecay,
}

impl ArrivalCostSpec {
    pub fn new(c2: f64, a2: f64, decay: ArrivalDecay) -> Result<Self, CostError> {
        Self { c2, a2, decay }.validated()
    }

    pub fn validated(self) -> Result<Self, CostError> {
        positive("c2", self.c2)?;
        positive("a2", self.a2)?;
        match self.decay {
            ArrivalDecay::Exponential(b) if !(b > 0.0 && b < 1.0) => {
                Err(CostError::BadParameter { name: "b2", value: b })
            }
            ArrivalDecay::Rational(b) => positive("b2", b).map(|_| self),
            _ => Ok(self),
        }
    }

    pub fn decay_factor(&self, t: usize) -> f64 {
        match self.decay {
            ArrivalDecay::Exponential(b) => b.powi(t as i32),
            ArrivalDecay::Rational(b) => (t as f64 + 1.0).powf(-b),
            ArrivalDecay::None => 1.0,
        }
    }

    pub fn eval(&self, d_norm: f64, t: usize) -> f64 {
        self.c2 * d_norm.powf(self.a2) * self.decay_factor(t)
    }

    /// The arrival cost as a K·L function of `(|d|, T)`; `None` without decay.
    pub fn as_product_kl(&self) -> Result<Option<ProductKL>, CostError> {
        let k = PowerK::new(self.c2, self.a2)?;
        Ok(match self.decay {
            ArrivalDecay::Exponential(b) => Some(ProductKL::new(k, DecayL::exponential(b)?)),
            ArrivalDecay::Rational(b) => Some(ProductKL::new(k, DecayL::rational(b)?)),
            ArrivalDecay::None => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "weight", rename_all = "snake_case")]
pub enum StageLoss {
    /// `q |x|²`
    Quadratic(f64),
    /// `q |x|₁`
    OneNorm(f64),
}

impl StageLoss {
    pub fn weight(&self) -> f64 {
        match *self {
            StageLoss::Quadratic(q) | StageLoss::OneNorm(q) => q,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match *self {
            StageLoss::Quadratic(q) => q * x.norm_squared(),
            StageLoss::OneNorm(q) => q * x.lp_norm(1),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            StageLoss::Quadratic(q) => StageLoss::Quadratic(q * factor),
            StageLoss::OneNorm(q) => StageLoss::OneNorm(q * factor),
        }
    }

    /// Lower and upper `K∞` envelopes of the loss in the Euclidean norm of a
    /// `dim`-vector.
    fn envelopes(&self, dim: usize) -> Result<(PowerK, PowerK), CostError> {
        Ok(match *self {
            StageLoss::Quadratic(q) => (PowerK::new(q, 2.0)?, PowerK::new(q, 2.0)?),
            StageLoss::OneNorm(q) => (PowerK::linear(q)?, PowerK::linear(q * (dim as f64).sqrt())?),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageForm {
    /// λ-weighted averages plus max terms.
    #[default]
    Weighted,
    /// Plain sums of the losses, no averaging and no max terms. Matches the
    /// least-squares problem solved by a Kalman filter; carries no certificate.
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCostSpec {
    pub lambda_w: f64,
    pub lambda_v: f64,
    pub loss_w: StageLoss,
    pub loss_v: StageLoss,
    #[serde(default)]
    pub form: StageForm,
}

impl StageCostSpec {
    pub fn weighted(
        lambda_w: f64,
        lambda_v: f64,
        loss_w: StageLoss,
        loss_v: StageLoss,
    ) -> Result<Self, CostError> {
        Self {
            lambda_w,
            lambda_v,
            loss_w,
            loss_v,
            form: StageForm::Weighted,
        }
        .validated()
    }

    pub fn classic(loss_w: StageLoss, loss_v: StageLoss) -> Result<Self, CostError> {
        Self {
            lambda_w: 1.0,
            lambda_v: 1.0,
            loss_w,
            loss_v,
            form: StageForm::Classic,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, CostError> {
        for (name, l) in [("lambda_w", self.lambda_w), ("lambda_v", self.lambda_v)] {
            if !(0.0..=1.0).contains(&l) {
                return Err(CostError::BadParameter { name, value: l });
            }
        }
        positive("loss_w weight", self.loss_w.weight())?;
        positive("loss_v weight", self.loss_v.weight())?;
        Ok(self)
    }

    /// Whether λ = 1 or the classic form puts the cost outside the certified family.
    pub fn is_uncertified(&self) -> bool {
        self.form == StageForm::Classic || self.lambda_w >= 1.0 || self.lambda_v >= 1.0
    }

    pub fn eval(&self, omega: &[DVector<f64>], nu: &[DVector<f64>]) -> f64 {
        let lw: Vec<f64> = omega.iter().map(|w| self.loss_w.eval(w)).collect();
        let lv: Vec<f64> = nu.iter().map(|v| self.loss_v.eval(v)).collect();
        match self.form {
            StageForm::Classic => lw.iter().sum::<f64>() + lv.iter().sum::<f64>(),
            StageForm::Weighted => {
                weighted_part(&lw, self.lambda_w) + weighted_part(&lv, self.lambda_v)
            }
        }
    }
}

fn weighted_part(losses: &[f64], lambda: f64) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let max = losses.iter().cloned().fold(0.0, f64::max);
    lambda * mean + (1.0 - lambda) * max
}

/// The four envelopes bounding the stage cost from below and above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub lower_w: PowerK,
    pub lower_v: PowerK,
    pub upper_w: PowerK,
    pub upper_v: PowerK,
}

/// Envelopes for disturbance dimension `g` and output dimension `p`:
/// quadratic `q` gives `(1−λ)q s²` and `q s²`; 1-norm `q` gives `(1−λ)q s`
/// and `q √dim s`.
pub fn sandwich_bounds(spec: &StageCostSpec, g: usize, p: usize) -> Result<Sandwich, CostError> {
    if spec.form == StageForm::Classic {
        return Err(CostError::Uncertified);
    }
    if spec.lambda_w >= 1.0 {
        return Err(CostError::DegenerateLowerBound("lambda_w"));
    }
    if spec.lambda_v >= 1.0 {
        return Err(CostError::DegenerateLowerBound("lambda_v"));
    }
    let (lw, upper_w) = spec.loss_w.envelopes(g)?;
    let (lv, upper_v) = spec.loss_v.envelopes(p)?;
    Ok(Sandwich {
        lower_w: lw.scaled(1.0 - spec.lambda_w),
        lower_v: lv.scaled(1.0 - spec.lambda_v),
        upper_w,
        upper_v,
    })
}

/// Admissible set for the window's initial state, centred on the window prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "radius", rename_all = "snake_case")]
pub enum StateBound {
    /// `|χ − x̄|_∞ ≤ r`
    Box(f64),
    /// `|χ − x̄|₂ ≤ r`
    Ball(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub arrival: ArrivalCostSpec,
    pub stage: StageCostSpec,
    /// Bound on the window's initial state, intersected with the model box.
    pub x_bound: Option<StateBound>,
    /// Per-element bound `|ω_τ,j| ≤ w_bound`.
    pub w_bound: Option<f64>,
    /// Per-element bound `|ν_τ,j| ≤ v_bound`.
    pub v_bound: Option<f64>,
}

impl CostSpec {
    pub fn validated(self) -> Result<Self, CostError> {
        self.arrival.validated()?;
        self.stage.validated()?;
        if let Some(StateBound::Box(r) | StateBound::Ball(r)) = self.x_bound {
            positive("x_bound", r)?;
        }
        if let Some(b) = self.w_bound {
            positive("w_bound", b)?;
        }
        if let Some(b) = self.v_bound {
            positive("v_bound", b)?;
        }
        Ok(self)
    }

    /// Multiplies every weight by `factor`, leaving the minimizers unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        out.arrival.c2 *= factor;
        out.stage.loss_w = out.stage.loss_w.scaled(factor);
        out.stage.loss_v = out.stage.loss_v.scaled(factor);
        out
    }
}

/// `V_{T,1}(|d₀|) + V_{T,2}(ω, ν)` for a window of length `T`.
pub fn eval_cost(
    spec: &CostSpec,
    t: usize,
    d0: &DVector<f64>,
    omega: &[DVector<f64>],
    nu: &[DVector<f64>],
) -> Result<f64, CostError> {
    if omega.len() != t {
        return Err(CostError::Length {
            what: "disturbance terms",
            expected: t,
            got: omega.len(),
        });
    }
    if nu.len() != t + 1 {
        return Err(CostError::Length {
            what: "noise terms",
            expected: t + 1,
            got: nu.len(),
        });
    }
    Ok(spec.arrival.eval(d0.norm(), t) + spec.stage.eval(omega, nu))
}

fn positive(name: &'static str, value: f64) -> Result<(), CostError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CostError::BadParameter { name, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn mhe1(lambda: f64) -> CostSpec {
        CostSpec {
            arrival: ArrivalCostSpec::new(1.0, 2.0, ArrivalDecay::Exponential(0.81)).unwrap(),
            stage: StageCostSpec::weighted(
                lambda,
                lambda,
                StageLoss::Quadratic(1.0 / 0.04),
                StageLoss::Quadratic(1.0 / 0.01),
            )
            .unwrap(),
            x_bound: Some(StateBound::Box(3.0)),
            w_bound: Some(0.6),
            v_bound: Some(0.3),
        }
    }

    #[test]
    fn zero_at_zero() {
        let c = eval_cost(&mhe1(0.99), 2, &v(&[0.0; 3]), &vec![v(&[0.0; 3]); 2], &vec![v(&[0.0]); 3]);
        assert_eq!(c.unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluation_t0() {
        let c = eval_cost(&mhe1(0.99), 0, &v(&[1.0, 0.0, 0.0]), &[], &[v(&[0.1])]).unwrap();
        assert_relative_eq!(c, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_max_form() {
        let stage = StageCostSpec::weighted(
            0.0,
            0.0,
            StageLoss::Quadratic(1.0 / 0.04),
            StageLoss::Quadratic(1.0),
        )
        .unwrap();
        let part = stage.eval(&[v(&[0.1]), v(&[0.2])], &vec![v(&[0.0]); 3]);
        assert_relative_eq!(part, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            eval_cost(&mhe1(0.5), 2, &v(&[0.0; 3]), &[v(&[0.0; 3])], &vec![v(&[0.0]); 3]),
            Err(CostError::Length { .. })
        ));
        assert!(eval_cost(&mhe1(0.5), 1, &v(&[0.0; 3]), &[v(&[0.0; 3])], &vec![v(&[0.0]); 3]).is_err());
    }

    #[test]
    fn sandwich_values() {
        let s = sandwich_bounds(&mhe1(0.0).stage, 3, 1).unwrap();
        assert_relative_eq!(s.lower_w.coeff(), 25.0);
        assert_relative_eq!(s.upper_w.coeff(), 25.0);
        assert_eq!(s.lower_w.exponent(), 2.0);
        let s = sandwich_bounds(&mhe1(0.99).stage, 3, 1).unwrap();
        assert_relative_eq!(s.lower_v.coeff(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.upper_v.coeff(), 100.0);
        let mut degenerate = mhe1(0.5).stage;
        degenerate.lambda_v = 1.0;
        assert!(matches!(
            sandwich_bounds(&degenerate, 3, 1),
            Err(CostError::DegenerateLowerBound("lambda_v"))
        ));
    }

    #[test]
    fn one_norm_envelopes() {
        let stage =
            StageCostSpec::weighted(0.5, 0.5, StageLoss::Quadratic(1.0), StageLoss::OneNorm(10.0))
                .unwrap();
        let s = sandwich_bounds(&stage, 3, 1).unwrap();
        assert_relative_eq!(s.lower_v.coeff(), 5.0);
        assert_eq!(s.lower_v.exponent(), 1.0);
        assert_relative_eq!(s.upper_v.coeff(), 10.0);
        let s = sandwich_bounds(&stage, 3, 4).unwrap();
        assert_relative_eq!(s.upper_v.coeff(), 20.0);
    }

    #[test]
    fn classic_is_plain_sum() {
        let stage = StageCostSpec::classic(StageLoss::Quadratic(2.0), StageLoss::Quadratic(3.0))
            .unwrap();
        let c = stage.eval(&[v(&[1.0]), v(&[1.0])], &vec![v(&[1.0]); 3]);
        assert_relative_eq!(c, 4.0 + 9.0);
        assert!(stage.is_uncertified());
        assert!(matches!(sandwich_bounds(&stage, 1, 1), Err(CostError::Uncertified)));
    }

    #[test]
    fn decay_factors() {
        let a = ArrivalCostSpec::new(2.0, 2.0, ArrivalDecay::Rational(1.0)).unwrap();
        assert_relative_eq!(a.eval(1.0, 3), 0.5);
        let a = ArrivalCostSpec::new(1.0, 2.0, ArrivalDecay::Exponential(0.81)).unwrap();
        assert_relative_eq!(a.eval(2.0, 2), 4.0 * 0.81 * 0.81, epsilon = 1e-14);
        assert!(ArrivalCostSpec::new(1.0, 2.0, ArrivalDecay::Exponential(1.0)).is_err());
        assert!(ArrivalCostSpec::new(0.0, 2.0, ArrivalDecay::None).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let spec = mhe1(0.99);
        let json = serde_json::to_string(&spec).unwrap();
        let back: CostSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
