//! Parametric comparison functions.
//!
//! Everything the stability machinery needs is expressed in three families:
//! power functions `s ↦ c·s^a` (class K∞), exponential or rational decays
//! (class L), and their products (the factorable K·L class). Sums of these are
//! kept term-by-term in [`PowerSum`] and [`KlSum`] so compositions stay exact
//! wherever the algebra allows it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuncalcError {
    #[error("coefficient must be positive and finite, got {0}")]
    BadCoefficient(f64),
    #[error("exponent must be positive and finite, got {0}")]
    BadExponent(f64),
    #[error("exponential decay base must lie in (0, 1), got {0}")]
    BadExponentialBase(f64),
    #[error("rational decay rate must be positive, got {0}")]
    BadRationalRate(f64),
    #[error("expected an exponential decay")]
    NotExponential,
}

/// `s ↦ coeff · s^exponent`, a K∞ function for positive parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerK {
    coeff: f64,
    exponent: f64,
}

impl PowerK {
    pub fn new(coeff: f64, exponent: f64) -> Result<Self, FuncalcError> {
        if !(coeff > 0.0 && coeff.is_finite()) {
            return Err(FuncalcError::BadCoefficient(coeff));
        }
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(FuncalcError::BadExponent(exponent));
        }
        Ok(Self { coeff, exponent })
    }

    pub fn linear(coeff: f64) -> Result<Self, FuncalcError> {
        Self::new(coeff, 1.0)
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0, "K functions take nonnegative arguments");
        if s == 0.0 {
            0.0
        } else {
            self.coeff * s.powf(self.exponent)
        }
    }

    /// Inverse on `[0, ∞)`: `r ↦ (r / c)^(1/a)`.
    pub fn invert(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        if r == 0.0 {
            0.0
        } else {
            (r / self.coeff).powf(1.0 / self.exponent)
        }
    }

    /// The inverse as a power function in its own right.
    pub fn inverse(&self) -> PowerK {
        PowerK {
            coeff: self.coeff.powf(-1.0 / self.exponent),
            exponent: 1.0 / self.exponent,
        }
    }

    /// `s ↦ self(inner(s))`.
    pub fn compose(&self, inner: &PowerK) -> PowerK {
        PowerK {
            coeff: self.coeff * inner.coeff.powf(self.exponent),
            exponent: self.exponent * inner.exponent,
        }
    }

    /// `s ↦ factor · self(s)`.
    pub fn scaled(&self, factor: f64) -> PowerK {
        PowerK {
            coeff: self.coeff * factor,
            exponent: self.exponent,
        }
    }

    /// `s ↦ self(factor · s)`.
    pub fn with_scaled_argument(&self, factor: f64) -> PowerK {
        PowerK {
            coeff: self.coeff * factor.powf(self.exponent),
            exponent: self.exponent,
        }
    }
}

/// Class-L decay, equal to one at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rate", rename_all = "snake_case")]
pub enum DecayL {
    /// `t ↦ base^t` with `base ∈ (0, 1)`.
    Exponential(f64),
    /// `t ↦ (t + 1)^(−rate)` with `rate > 0`.
    Rational(f64),
}

impl DecayL {
    pub fn exponential(base: f64) -> Result<Self, FuncalcError> {
        if base > 0.0 && base < 1.0 {
            Ok(DecayL::Exponential(base))
        } else {
            Err(FuncalcError::BadExponentialBase(base))
        }
    }

    pub fn rational(rate: f64) -> Result<Self, FuncalcError> {
        if rate > 0.0 && rate.is_finite() {
            Ok(DecayL::Rational(rate))
        } else {
            Err(FuncalcError::BadRationalRate(rate))
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            DecayL::Exponential(b) => b.powf(t),
            DecayL::Rational(b) => (t + 1.0).powf(-b),
        }
    }

    /// `t ↦ self(t)^power`, which stays in the same family.
    pub fn pow(&self, power: f64) -> DecayL {
        match *self {
            DecayL::Exponential(b) => DecayL::Exponential(b.powf(power)),
            DecayL::Rational(b) => DecayL::Rational(b * power),
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, DecayL::Exponential(_))
    }

    pub fn same_family(&self, other: &DecayL) -> bool {
        self.is_exponential() == other.is_exponential()
    }
}

/// Factorable KL function `β(s, t) = k(s) · l(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductKL {
    pub k: PowerK,
    pub l: DecayL,
}

impl ProductKL {
    pub fn new(k: PowerK, l: DecayL) -> Self {
        Self { k, l }
    }

    pub fn eval(&self, s: f64, t: usize) -> f64 {
        self.eval_real(s, t as f64)
    }

    pub fn eval_real(&self, s: f64, t: f64) -> f64 {
        self.k.eval(s) * self.l.eval(t)
    }

    /// Replaces an exponential decay `c·s^a·b^t` by the looser rational bound
    /// `c'·s^a·(t+1)^(−b')` with the smallest `c'` that dominates on integer `t`.
    pub fn exp_to_rational(&self, rational_rate: f64) -> Result<ProductKL, FuncalcError> {
        let base = match self.l {
            DecayL::Exponential(b) => b,
            DecayL::Rational(_) => return Err(FuncalcError::NotExponential),
        };
        let l = DecayL::rational(rational_rate)?;
        // log of b^t (t+1)^b' peaks at t* = -b'/ln b - 1; the maximand is unimodal
        let stationary = (-rational_rate / base.ln() - 1.0).max(0.0);
        let cap = (10.0 * stationary).ceil() as usize + 100;
        let log_max = (0..=cap)
            .map(|t| t as f64 * base.ln() + rational_rate * ((t + 1) as f64).ln())
            .fold(f64::NEG_INFINITY, f64::max);
        let k = PowerK::new(self.k.coeff * log_max.exp(), self.k.exponent)?;
        Ok(ProductKL { k, l })
    }
}

/// `s ↦ Σ cᵢ·s^aᵢ`. The empty sum is the zero function.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerSum {
    pub terms: Vec<PowerK>,
}

impl PowerSum {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn single(term: PowerK) -> Self {
        Self { terms: vec![term] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, term: PowerK) {
        self.terms.push(term);
    }

    pub fn extend(&mut self, other: PowerSum) {
        self.terms.extend(other.terms);
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.terms.iter().map(|k| k.eval(s)).sum()
    }

    /// Upper bound (exact when possible) of `outer(Σ terms)` as a power sum.
    ///
    /// Linear `outer` distributes exactly. Otherwise the weak triangle
    /// inequality `α(Σᵢ aᵢ) ≤ Σᵢ α(n·aᵢ)` is used.
    pub fn compose_into(outer: &PowerK, inner: &PowerSum) -> PowerSum {
        let n = inner.terms.len();
        if n == 0 {
            return PowerSum::zero();
        }
        let spread = if n == 1 || outer.exponent == 1.0 {
            1.0
        } else {
            n as f64
        };
        PowerSum {
            terms: inner
                .terms
                .iter()
                .map(|t| outer.compose(&t.scaled(spread)))
                .collect(),
        }
    }
}

/// Sum of factorable KL terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KlSum {
    pub terms: Vec<ProductKL>,
}

impl KlSum {
    pub fn eval(&self, s: f64, t: usize) -> f64 {
        self.eval_real(s, t as f64)
    }

    pub fn eval_real(&self, s: f64, t: f64) -> f64 {
        self.terms.iter().map(|b| b.eval_real(s, t)).sum()
    }

    pub fn push(&mut self, term: ProductKL) {
        self.terms.push(term);
    }
}
