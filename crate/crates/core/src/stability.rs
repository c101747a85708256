//! Robust-stability bookkeeping for FIE and MHE.
//!
//! Given an i-IOSS certificate `(β, α₁, α₂)` with `β(s, t) = μ₁(s)φ₁(t)`, an
//! arrival cost `ρ_x(s, t) = c₂ s^{a₂} φ₂(t)` and the stage-cost envelopes
//! `𝛾̲_w ≤ γ_w`, `𝛾̲_v ≤ γ_v`, this module composes the explicit RGAS bounds
//! of the associated FIE
//!
//! ```text
//! β_x(s,t) = μ₁(3s + 3μ₂⁻¹(3μ₃(s)))φ₁(t) + α₁(3𝛾̲_w⁻¹(3ρ_x(s,t))) + α₂(3𝛾̲_v⁻¹(3ρ_x(s,t)))
//! α_w(s)   = ᾱ_w(s) + α₁(3s + 3𝛾̲_w⁻¹(3γ_w(s))) + α₂(3𝛾̲_v⁻¹(3γ_w(s)))
//! α_v(s)   = ᾱ_v(s) + α₁(3𝛾̲_w⁻¹(3γ_v(s))) + α₂(3s + 3𝛾̲_v⁻¹(3γ_v(s)))
//! ```
//!
//! with `ᾱ_{w,v}(s) = μ₁(3μ₂⁻¹(3γ_{w,v}(s)))`, and from them the smallest
//! moving horizon that makes the MHE contractive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{ArrivalCostSpec, ArrivalDecay, Sandwich};
use crate::funcalc::{DecayL, FuncalcError, KlSum, PowerK, PowerSum, ProductKL};
use crate::systems::IossCertificate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("certificate decay and arrival decay belong to different families; loosen the certificate first")]
    MixedFamilies,
    #[error("the arrival cost must decay with the horizon")]
    NoArrivalDecay,
    #[error("arrival cost is not admissible for the certificate (margin {0:e})")]
    Inadmissible(f64),
    #[error("the certificate exponent a₁ = {0} must be at least 1")]
    SublinearCertificate(f64),
    #[error("eta must lie in (0, 1), got {0}")]
    BadEta(f64),
    #[error("`{name}` must be nonnegative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error(transparent)]
    Funcalc(#[from] FuncalcError),
}

/// Outcome of an admissibility test; `margin ≥ 0` iff admissible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub margin: f64,
}

const ADMISSIBLE_SLACK: f64 = 1e-12;

fn decay_of(arrival: &ArrivalCostSpec) -> Result<DecayL, StabilityError> {
    Ok(match arrival.decay {
        ArrivalDecay::Exponential(b) => DecayL::exponential(b)?,
        ArrivalDecay::Rational(b) => DecayL::rational(b)?,
        ArrivalDecay::None => return Err(StabilityError::NoArrivalDecay),
    })
}

/// Exponential pair: `b₂^{1/a₂} ≥ b₁^{1/a₁}`. Rational pair: `a₂/b₂ ≥ a₁/b₁`.
pub fn check_arrival_admissible(
    cert: &IossCertificate,
    arrival: &ArrivalCostSpec,
) -> Result<Admissibility, StabilityError> {
    let a1 = cert.beta.k.exponent();
    let a2 = arrival.a2;
    let margin = match (cert.beta.l, decay_of(arrival)?) {
        (DecayL::Exponential(b1), DecayL::Exponential(b2)) => {
            b2.powf(1.0 / a2) - b1.powf(1.0 / a1)
        }
        (DecayL::Rational(b1), DecayL::Rational(b2)) => a2 / b2 - a1 / b1,
        _ => return Err(StabilityError::MixedFamilies),
    };
    let scale = 1.0 + margin.abs();
    Ok(Admissibility {
        admissible: margin >= -ADMISSIBLE_SLACK * scale,
        margin,
    })
}

/// Interval of admissible decay parameters `b₂` for a fixed `a₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B2Range {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
}

impl B2Range {
    pub fn contains(&self, b2: f64) -> bool {
        let above = if self.lower_closed { b2 >= self.lower } else { b2 > self.lower };
        let below = if self.upper_closed { b2 <= self.upper } else { b2 < self.upper };
        above && below
    }
}

/// `[b₁^{a₂/a₁}, 1)` for exponential certificates, `(0, a₂b₁/a₁]` for rational ones.
pub fn admissible_b2_range(cert: &IossCertificate, a2: f64) -> B2Range {
    let a1 = cert.beta.k.exponent();
    match cert.beta.l {
        DecayL::Exponential(b1) => B2Range {
            lower: b1.powf(a2 / a1),
            upper: 1.0,
            lower_closed: true,
            upper_closed: false,
        },
        DecayL::Rational(b1) => B2Range {
            lower: 0.0,
            upper: a2 * b1 / a1,
            lower_closed: false,
            upper_closed: true,
        },
    }
}

/// Composed RGAS bounds, kept term by term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgasBounds {
    pub beta_x: KlSum,
    pub alpha_w: PowerSum,
    pub alpha_v: PowerSum,
}

impl RgasBounds {
    pub fn beta_x(&self, s: f64, t: usize) -> f64 {
        self.beta_x.eval(s, t)
    }

    pub fn alpha_w(&self, s: f64) -> f64 {
        self.alpha_w.eval(s)
    }

    pub fn alpha_v(&self, s: f64) -> f64 {
        self.alpha_v.eval(s)
    }

    /// Right-hand side of the RGAS inequality for one time step.
    pub fn error_bound(&self, dx0: f64, w_norm: f64, v_norm: f64, t: usize) -> f64 {
        self.beta_x(dx0, t) + self.alpha_w(w_norm) + self.alpha_v(v_norm)
    }
}

/// `s ↦ 3·lower⁻¹(3·upper(s))`
fn inflated_inverse(lower: &PowerK, upper: &PowerK) -> PowerK {
    lower.inverse().compose(&upper.scaled(3.0)).scaled(3.0)
}

/// Merges terms with equal exponents so that a nonlinear outer function
/// sees as few summands as possible.
fn collect_like(mut terms: Vec<PowerK>) -> Result<PowerSum, FuncalcError> {
    terms.sort_by(|a, b| a.exponent().total_cmp(&b.exponent()));
    let mut out: Vec<PowerK> = Vec::with_capacity(terms.len());
    for t in terms {
        match out.last_mut() {
            Some(last) if last.exponent() == t.exponent() => {
                *last = PowerK::new(last.coeff() + t.coeff(), t.exponent())?;
            }
            _ => out.push(t),
        }
    }
    Ok(PowerSum { terms: out })
}

/// `outer(3s + 3·lower⁻¹(3·upper(s)))`
fn own_channel(outer: &PowerK, lower: &PowerK, upper: &PowerK) -> Result<PowerSum, FuncalcError> {
    let inner = collect_like(vec![PowerK::linear(3.0)?, inflated_inverse(lower, upper)])?;
    Ok(PowerSum::compose_into(outer, &inner))
}

pub fn compose_rgas_bounds(
    cert: &IossCertificate,
    arrival: &ArrivalCostSpec,
    env: &Sandwich,
) -> Result<RgasBounds, StabilityError> {
    let check = check_arrival_admissible(cert, arrival)?;
    if !check.admissible {
        return Err(StabilityError::Inadmissible(check.margin));
    }
    let mu1 = cert.beta.k;
    let phi1 = cert.beta.l;
    if mu1.exponent() < 1.0 {
        return Err(StabilityError::SublinearCertificate(mu1.exponent()));
    }
    let mu = PowerK::new(arrival.c2, arrival.a2)?;
    let phi2 = decay_of(arrival)?;

    let mut beta_x = KlSum::default();
    for k in own_channel(&mu1, &mu, &mu)?.terms {
        beta_x.push(ProductKL::new(k, phi1));
    }
    // αᵢ(3𝛾̲⁻¹(3 c₂ s^{a₂} φ₂(t))) factors as a power of s times φ₂^{aᵢ/e}
    let mut push_arrival = |alpha: &PowerK, lower: &PowerK| {
        let k = alpha.compose(&inflated_inverse(lower, &mu));
        let l = phi2.pow(alpha.exponent() / lower.exponent());
        beta_x.push(ProductKL::new(k, l));
    };
    if let Some(a1) = &cert.alpha1 {
        push_arrival(a1, &env.lower_w);
    }
    if let Some(a2) = &cert.alpha2 {
        push_arrival(a2, &env.lower_v);
    }

    // admissibility makes sup_t φ₁(t)/φ₂(t)^{a₁/a₂} = 1
    let bar = |upper: &PowerK| mu1.compose(&inflated_inverse(&mu, upper));
    let mut alpha_w = PowerSum::single(bar(&env.upper_w));
    let mut alpha_v = PowerSum::single(bar(&env.upper_v));
    if let Some(a1) = &cert.alpha1 {
        alpha_w.extend(own_channel(a1, &env.lower_w, &env.upper_w)?);
        alpha_v.push(a1.compose(&inflated_inverse(&env.lower_w, &env.upper_v)));
    }
    if let Some(a2) = &cert.alpha2 {
        alpha_w.push(a2.compose(&inflated_inverse(&env.lower_v, &env.upper_w)));
        alpha_v.extend(own_channel(a2, &env.lower_v, &env.upper_v)?);
    }
    Ok(RgasBounds {
        beta_x,
        alpha_w,
        alpha_v,
    })
}

fn check_eta(eta: f64) -> Result<(), StabilityError> {
    if eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(StabilityError::BadEta(eta))
    }
}

fn nonnegative(name: &'static str, value: f64) -> Result<(), StabilityError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(StabilityError::Negative { name, value })
    }
}

/// Box-to-norm uncertainty magnitudes `3σ√dim` for the initial state,
/// disturbances and measurement noise.
pub fn uncertainty_magnitudes(
    sigma0: f64,
    n: usize,
    sigma_w: f64,
    g: usize,
    sigma_v: f64,
    p: usize,
) -> (f64, f64, f64) {
    let m = |s: f64, d: usize| 3.0 * s * (d as f64).sqrt();
    (m(sigma0, n), m(sigma_w, g), m(sigma_v, p))
}

/// `s̄ = β_x(M₀, 0) + (α_w(M_w) + α_v(M_v)) / (1 − η)`
pub fn compute_s_bar(
    bounds: &RgasBounds,
    m0: f64,
    mw: f64,
    mv: f64,
    eta: f64,
) -> Result<f64, StabilityError> {
    check_eta(eta)?;
    nonnegative("M0", m0)?;
    nonnegative("Mw", mw)?;
    nonnegative("Mv", mv)?;
    Ok(bounds.beta_x(m0, 0) + (bounds.alpha_w(mw) + bounds.alpha_v(mv)) / (1.0 - eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Horizon {
    Finite(usize),
    /// No horizon satisfies the contraction condition.
    Infinite,
}

impl Horizon {
    pub fn finite(&self) -> Option<usize> {
        match *self {
            Horizon::Finite(t) => Some(t),
            Horizon::Infinite => None,
        }
    }
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Horizon::Finite(t) => write!(f, "{t}"),
            Horizon::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonAssumptions {
    pub m0: f64,
    pub mw: f64,
    pub mv: f64,
    pub certificate: String,
    pub cost: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCertificate {
    pub eta: f64,
    pub s_bar: f64,
    pub t_min: Horizon,
    /// `β_x,i(s̄, T_min)/s̄` for each composed term; their sum is at most `η`.
    /// Empty when `T_min` is infinite or `s̄ = 0`.
    pub term_shares: Vec<f64>,
    /// `η − Σ term_shares`.
    pub margin: f64,
    pub assumptions: Option<HorizonAssumptions>,
}

impl HorizonCertificate {
    pub fn with_assumptions(mut self, assumptions: HorizonAssumptions) -> Self {
        self.assumptions = Some(assumptions);
        self
    }
}

/// Largest horizon tried before declaring the condition unattainable.
pub const HORIZON_CAP: usize = 1_000_000;
const GRID_POINTS: usize = 200;
const GRID_DECADES: f64 = 8.0;

/// `s̄·10^{−8(1 − k/199)}` for `k = 0..199`; the last point is `s̄` itself.
pub fn s_grid(s_bar: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..GRID_POINTS)
        .map(|k| {
            let frac = k as f64 / (GRID_POINTS - 1) as f64;
            s_bar * 10f64.powf(-GRID_DECADES * (1.0 - frac))
        })
        .collect();
    grid[GRID_POINTS - 1] = s_bar;
    grid
}

/// Whether `β_x(s, T) ≤ η s` at every grid point.
pub fn contraction_holds_on_grid(bounds: &RgasBounds, s_bar: f64, eta: f64, t: usize) -> bool {
    s_grid(s_bar)
        .into_iter()
        .all(|s| bounds.beta_x(s, t) <= eta * s * (1.0 + 1e-12))
}

/// `Σᵢ cᵢ s̄^{aᵢ−1} lᵢ(T)`, the worst case of `β_x(s, T)/s` on `(0, s̄]`
/// when every exponent is at least one.
fn worst_ratio(bounds: &RgasBounds, s_bar: f64, t: usize) -> f64 {
    bounds
        .beta_x
        .terms
        .iter()
        .map(|b| b.k.coeff() * s_bar.powf(b.k.exponent() - 1.0) * b.l.eval(t as f64))
        .sum()
}

/// Smallest `T` with `β_x(s, T) ≤ η s` for all `s ∈ [0, s̄]`.
pub fn min_horizon(bounds: &RgasBounds, s_bar: f64, eta: f64) -> Result<HorizonCertificate, StabilityError> {
    check_eta(eta)?;
    nonnegative("s_bar", s_bar)?;
    let infinite = HorizonCertificate {
        eta,
        s_bar,
        t_min: Horizon::Infinite,
        term_shares: Vec::new(),
        margin: f64::NEG_INFINITY,
        assumptions: None,
    };
    if s_bar == 0.0 || bounds.beta_x.terms.is_empty() {
        return Ok(HorizonCertificate {
            t_min: Horizon::Finite(0),
            margin: eta,
            ..infinite
        });
    }
    // a term c s^a with a < 1 dominates η s near the origin for every T
    if bounds.beta_x.terms.iter().any(|b| b.k.exponent() < 1.0) {
        return Ok(infinite);
    }
    let holds = |t: usize| {
        worst_ratio(bounds, s_bar, t) <= eta && contraction_holds_on_grid(bounds, s_bar, eta, t)
    };
    if !holds(HORIZON_CAP) {
        return Ok(infinite);
    }
    // the left side is nonincreasing in T: bracket, then bisect
    let (mut lo, mut hi) = (0usize, 1usize);
    if holds(0) {
        hi = 0;
    } else {
        while !holds(hi) {
            lo = hi;
            hi = (hi * 2).min(HORIZON_CAP);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let term_shares: Vec<f64> = bounds
        .beta_x
        .terms
        .iter()
        .map(|b| b.eval(s_bar, hi) / s_bar)
        .collect();
    let margin = eta - term_shares.iter().sum::<f64>();
    Ok(HorizonCertificate {
        t_min: Horizon::Finite(hi),
        term_shares,
        margin,
        ..infinite
    })
}

/// Suboptimal solutions keep the MHE stable when `v_sub ≤ γ(v_opt)`.
pub fn check_suboptimality(v_sub: f64, v_opt: f64, gamma: &PowerK) -> bool {
    v_sub <= gamma.eval(v_opt.max(0.0))
}
