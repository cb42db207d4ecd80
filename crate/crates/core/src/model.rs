//! Drift and diffusion coefficients of a regime-switching diffusion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model needs at least one mode")]
    NoModes,
    #[error("mode {mode}: term {coef}*x^{power} needs a nonnegative integer power or `abs: true`")]
    InvalidPower { mode: usize, coef: f64, power: f64 },
    #[error("mode {mode}: non-finite coefficient")]
    NonFinite { mode: usize },
}

/// Coefficients `f(x, i, t)` and `g(x, i, t)` of `dx = f dt + g dB`.
///
/// `x` has length [`dim_x`](Self::dim_x); `g` is written row-major into a
/// buffer of length `dim_x * dim_w`. Modes are zero-based.
pub trait SwitchingModel: Sync {
    fn dim_x(&self) -> usize;
    fn dim_w(&self) -> usize;
    fn n_modes(&self) -> usize;
    fn drift(&self, x: &[f64], mode: usize, t: f64, out: &mut [f64]);
    fn diffusion(&self, x: &[f64], mode: usize, t: f64, out: &mut [f64]);
}

/// One monomial `coef·x^power`, or `coef·|x|^power` when `abs` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coef: f64,
    pub power: f64,
    #[serde(default)]
    pub abs: bool,
}

impl Term {
    pub fn pow(coef: f64, power: u32) -> Self {
        Self {
            coef,
            power: power as f64,
            abs: false,
        }
    }

    pub fn abs_pow(coef: f64, power: f64) -> Self {
        Self {
            coef,
            power,
            abs: true,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        if self.abs {
            self.coef * x.abs().powf(self.power)
        } else {
            self.coef * x.powi(self.power as i32)
        }
    }
}

/// Drift and diffusion polynomials of a single mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTerms {
    #[serde(default)]
    pub drift: Vec<Term>,
    #[serde(default)]
    pub diffusion: Vec<Term>,
}

/// Scalar model whose coefficients are sums of monomials in `x` and `|x|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModeTerms>", into = "Vec<ModeTerms>")]
pub struct PolynomialModel {
    modes: Vec<ModeTerms>,
}

impl PolynomialModel {
    pub fn new(modes: Vec<ModeTerms>) -> Result<Self, ModelError> {
        if modes.is_empty() {
            return Err(ModelError::NoModes);
        }
        for (mode, terms) in modes.iter().enumerate() {
            for t in terms.drift.iter().chain(&terms.diffusion) {
                if !t.coef.is_finite() || !t.power.is_finite() {
                    return Err(ModelError::NonFinite { mode });
                }
                let integral = t.power >= 0.0 && t.power.fract() == 0.0 && t.power <= 64.0;
                if !(integral || (t.abs && t.power >= 0.0)) {
                    return Err(ModelError::InvalidPower {
                        mode,
                        coef: t.coef,
                        power: t.power,
                    });
                }
            }
        }
        Ok(Self { modes })
    }

    /// Two-mode benchmark: `f(x,1) = x(1−3x²)`, `g(x,1) = |x|^{3/2}`,
    /// `f(x,2) = x(1−2x²)`, `g(x,2) = x`.
    pub fn two_mode_example() -> Self {
        Self::new(vec![
            ModeTerms {
                drift: vec![Term::pow(1.0, 1), Term::pow(-3.0, 3)],
                diffusion: vec![Term::abs_pow(1.0, 1.5)],
            },
            ModeTerms {
                drift: vec![Term::pow(1.0, 1), Term::pow(-2.0, 3)],
                diffusion: vec![Term::pow(1.0, 1)],
            },
        ])
        .expect("example model is valid")
    }

    /// Model with `f = g = 0` in every mode.
    pub fn zero(n_modes: usize) -> Self {
        Self::new(vec![ModeTerms::default(); n_modes.max(1)]).expect("zero model is valid")
    }

    pub fn modes(&self) -> &[ModeTerms] {
        &self.modes
    }
}

impl TryFrom<Vec<ModeTerms>> for PolynomialModel {
    type Error = ModelError;

    fn try_from(modes: Vec<ModeTerms>) -> Result<Self, Self::Error> {
        Self::new(modes)
    }
}

impl From<PolynomialModel> for Vec<ModeTerms> {
    fn from(m: PolynomialModel) -> Self {
        m.modes
    }
}

fn sum_terms(terms: &[Term], x: f64) -> f64 {
    terms.iter().map(|t| t.eval(x)).sum()
}

impl SwitchingModel for PolynomialModel {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_w(&self) -> usize {
        1
    }
    fn n_modes(&self) -> usize {
        self.modes.len()
    }
    fn drift(&self, x: &[f64], mode: usize, _t: f64, out: &mut [f64]) {
        out[0] = sum_terms(&self.modes[mode].drift, x[0]);
    }
    fn diffusion(&self, x: &[f64], mode: usize, _t: f64, out: &mut [f64]) {
        out[0] = sum_terms(&self.modes[mode].diffusion, x[0]);
    }
}

/// Scalar model built from closures `f(x, mode, t)` and `g(x, mode, t)`.
pub struct ScalarFnModel<F, G> {
    n_modes: usize,
    f: F,
    g: G,
}

impl<F, G> ScalarFnModel<F, G>
where
    F: Fn(f64, usize, f64) -> f64 + Sync,
    G: Fn(f64, usize, f64) -> f64 + Sync,
{
    pub fn new(n_modes: usize, f: F, g: G) -> Self {
        Self { n_modes, f, g }
    }
}

impl<F, G> SwitchingModel for ScalarFnModel<F, G>
where
    F: Fn(f64, usize, f64) -> f64 + Sync,
    G: Fn(f64, usize, f64) -> f64 + Sync,
{
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_w(&self) -> usize {
        1
    }
    fn n_modes(&self) -> usize {
        self.n_modes
    }
    fn drift(&self, x: &[f64], mode: usize, t: f64, out: &mut [f64]) {
        out[0] = (self.f)(x[0], mode, t);
    }
    fn diffusion(&self, x: &[f64], mode: usize, t: f64, out: &mut [f64]) {
        out[0] = (self.g)(x[0], mode, t);
    }
}
