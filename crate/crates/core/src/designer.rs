//! Admissible sampling intervals, lag bounds and predicted Lyapunov exponents
//! for the delayed sampled feedback `u = −α(r(ν(t)−τ0))·x(ν(t)−τ0)`.
//!
//! Every scenario reduces to a handful of monotone polynomial threshold
//! equations `β(y) = target` whose smallest root bounds `τ + τ0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, GeneratorMatrix, StationaryDistribution};
use crate::model::SwitchingModel;
use crate::spectral::{self, LambdaVariant, SpectralError, ZetaResult};
use crate::tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("hypothesis {failed} failed")]
    HypothesisViolated {
        failed: String,
        report: Box<DesignReport>,
    },
    #[error("sigma = {sigma} outside the admissible range (0, {upper})")]
    SigmaOutOfRange {
        sigma: f64,
        upper: f64,
        report: Box<DesignReport>,
    },
    #[error("moment order q = {q} outside [2, {p})")]
    QOutOfRange { q: f64, p: f64 },
    #[error("threshold equation has no positive root (target {target:e})")]
    DegenerateThreshold { target: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

impl DesignError {
    /// The partially filled report carried by hypothesis and range failures.
    pub fn report(&self) -> Option<&DesignReport> {
        match self {
            DesignError::HypothesisViolated { report, .. }
            | DesignError::SigmaOutOfRange { report, .. } => Some(report),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scenario {
    /// Mean-square boundedness of the controlled quasi-linear system.
    QlBounded,
    /// Unbounded second moment despite the control.
    QlUnbounded,
    /// Exponential stability of a quasi-linear system.
    QlStable,
    /// Exponential instability lower bound.
    QlUnstable,
    /// Moment and almost-sure stability of a nonlinear system.
    NlStable,
    /// Variant of [`Scenario::NlStable`] for `p ≥ θ`.
    NlStablePGeTheta,
}

/// Linear-growth constants for quasi-linear systems.
///
/// `|f| ∨ |g| ≤ K̄(1+|x|)`; upper bound `xᵀf + |g|²/2 ≤ E_i + D_i|x|²`;
/// lower bound `xᵀf + |g|²/2 ≥ d_i|x|² + e_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiLinearBounds {
    pub k_bar: f64,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub upper_d: Option<Vec<f64>>,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    pub upper_e: Option<Vec<f64>>,
    #[serde(rename = "d", default, skip_serializing_if = "Option::is_none")]
    pub lower_d: Option<Vec<f64>>,
    #[serde(rename = "e", default, skip_serializing_if = "Option::is_none")]
    pub lower_e: Option<Vec<f64>>,
}

/// Polynomial-growth constants for nonlinear systems.
///
/// `|f| ≤ K(|x| + |x|^{q1})`, `|g| ≤ K(|x| + |x|^{q2})` and
/// `xᵀf + (p−1)/2·|g|² ≤ C + A_i|x|² − B_i|x|^θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearBounds {
    pub k: f64,
    pub q1: f64,
    pub q2: f64,
    pub p: f64,
    pub theta: f64,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

impl NonlinearBounds {
    pub fn validate(&self, n_states: usize) -> Result<(), DesignError> {
        let q = self.q1.max(self.q2);
        let bad = |msg: String| Err(DesignError::InvalidInput(msg));
        if !(self.k > 0.0) {
            return bad(format!("K must be positive, got {}", self.k));
        }
        if !(self.q1 >= 1.0 && self.q2 >= 1.0) {
            return bad("q1 and q2 must be at least 1".into());
        }
        if !(self.theta > 2.0) || self.theta < q + 1.0 {
            return bad(format!(
                "theta must exceed 2 and be at least max(q1,q2)+1, got {}",
                self.theta
            ));
        }
        if self.p < 2.0 * q {
            return bad(format!("p must be at least 2*max(q1,q2), got {}", self.p));
        }
        if self.a.len() != n_states || self.b.len() != n_states {
            return bad(format!("A and B need {n_states} entries"));
        }
        if self.a.iter().chain(&self.b).any(|v| !(*v > 0.0)) {
            return bad("A and B entries must be positive".into());
        }
        if !(self.c >= 0.0) {
            return bad("C must be nonnegative".into());
        }
        Ok(())
    }

    /// `ρ = p ∧ θ`.
    pub fn rho(&self) -> f64 {
        self.p.min(self.theta)
    }

    /// `Ǎ = max A_i`.
    pub fn a_max(&self) -> f64 {
        self.a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `B̂ = min B_i`.
    pub fn b_min(&self) -> f64 {
        self.b.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bounds {
    QuasiLinear(QuasiLinearBounds),
    Nonlinear(NonlinearBounds),
}

/// Feedback gains `α_i ≥ 0`, not all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ControlGains {
    alpha: Vec<f64>,
}

impl ControlGains {
    pub fn new(alpha: Vec<f64>) -> Result<Self, DesignError> {
        if alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(DesignError::InvalidInput(
                "gains must be finite and nonnegative".into(),
            ));
        }
        if !alpha.iter().any(|&a| a > 0.0) {
            return Err(DesignError::InvalidInput(
                "at least one gain must be positive".into(),
            ));
        }
        Ok(Self { alpha })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    /// `α̌ = max α_i`.
    pub fn max(&self) -> f64 {
        self.alpha.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for ControlGains {
    type Error = DesignError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ControlGains> for Vec<f64> {
    fn from(g: ControlGains) -> Self {
        g.alpha
    }
}

/// The threshold polynomials. `Bar*` and `Tilde*` take `K̄`, the plain ones `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaFamily {
    /// `2y[2y(K̄²+α̌²)+K̄²]`
    BarOne,
    /// `2α̌y(4α̌y+1)`
    BarTwo,
    /// `y(8α̌²y+2α̌+3υ/2)`
    BarThree,
    /// `y²[3y(K̄²+α̌²)|x₀|²+2K̄²|x₀|²+K̄²(3y+2)]`
    BarFour,
    /// `y[3y(K̄²+α̌²)+K̄²]`
    TildeOne,
    /// `2α̌y(3α̌y+1)`
    TildeTwo,
    /// `2y(3α̌²y+α̌+σ)`
    TildeThree,
    /// `y²[2y(K̄²+α̌²)|x₀|²+K̄²|x₀|²]`
    TildeFour,
    /// `2y[3y(K²+α̌²)+2K²]`
    One,
    /// `K²y(3y+2)`
    Two,
    /// `2α̌y(1+6α̌y)`
    Three,
}

impl BetaFamily {
    pub const ALL: [BetaFamily; 11] = [
        BetaFamily::BarOne,
        BetaFamily::BarTwo,
        BetaFamily::BarThree,
        BetaFamily::BarFour,
        BetaFamily::TildeOne,
        BetaFamily::TildeTwo,
        BetaFamily::TildeThree,
        BetaFamily::TildeFour,
        BetaFamily::One,
        BetaFamily::Two,
        BetaFamily::Three,
    ];

    /// Coefficients `(c1, c2, c3)` of `c1·y + c2·y² + c3·y³`.
    fn coefficients(self, p: &BetaParams) -> [f64; 3] {
        let k2 = p.k * p.k;
        let a = p.alpha_max;
        let a2 = a * a;
        let x2 = p.x0_norm_sq;
        match self {
            BetaFamily::BarOne => [2.0 * k2, 4.0 * (k2 + a2), 0.0],
            BetaFamily::BarTwo => [2.0 * a, 8.0 * a2, 0.0],
            BetaFamily::BarThree => [2.0 * a + 1.5 * p.upsilon, 8.0 * a2, 0.0],
            BetaFamily::BarFour => [
                0.0,
                2.0 * k2 * x2 + 2.0 * k2,
                3.0 * (k2 + a2) * x2 + 3.0 * k2,
            ],
            BetaFamily::TildeOne => [k2, 3.0 * (k2 + a2), 0.0],
            BetaFamily::TildeTwo => [2.0 * a, 6.0 * a2, 0.0],
            BetaFamily::TildeThree => [2.0 * (a + p.sigma), 6.0 * a2, 0.0],
            BetaFamily::TildeFour => [0.0, k2 * x2, 2.0 * (k2 + a2) * x2],
            BetaFamily::One => [4.0 * k2, 6.0 * (k2 + a2), 0.0],
            BetaFamily::Two => [2.0 * k2, 3.0 * k2, 0.0],
            BetaFamily::Three => [2.0 * a, 12.0 * a2, 0.0],
        }
    }
}

/// Parameters shared by the threshold polynomials. `k` is `K̄` or `K`
/// depending on the family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BetaParams {
    pub k: f64,
    pub alpha_max: f64,
    pub upsilon: f64,
    pub sigma: f64,
    pub x0_norm_sq: f64,
}

pub fn beta_eval(family: BetaFamily, y: f64, params: &BetaParams) -> f64 {
    let [c1, c2, c3] = family.coefficients(params);
    y * (c1 + y * (c2 + y * c3))
}

/// Positive root of `β(y) = target`.
///
/// The polynomial has nonnegative coefficients, so it is increasing with
/// `β(0) = 0`; the root is bracketed by doubling or halving from `1e-8` and
/// refined by bisection in log scale.
pub fn solve_threshold(
    family: BetaFamily,
    target: f64,
    params: &BetaParams,
) -> Result<f64, DesignError> {
    let coeffs = family.coefficients(params);
    if !(target > 0.0) || !target.is_finite() || coeffs.iter().all(|&c| c <= 0.0) {
        return Err(DesignError::DegenerateThreshold { target });
    }
    if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(DesignError::InvalidInput(format!(
            "{family:?} has invalid coefficients {coeffs:?}"
        )));
    }
    let beta = |y: f64| beta_eval(family, y, params);
    let start = tolerances::THRESHOLD_BRACKET_START;
    let (mut lo, mut hi);
    if beta(start) < target {
        lo = start;
        hi = 2.0 * start;
        while beta(hi) < target {
            lo = hi;
            hi *= 2.0;
        }
    } else {
        hi = start;
        lo = 0.5 * start;
        while lo > 0.0 && beta(lo) >= target {
            hi = lo;
            lo *= 0.5;
        }
    }
    for _ in 0..tolerances::THRESHOLD_MAX_ITER {
        if hi - lo <= tolerances::THRESHOLD_REL * hi {
            break;
        }
        let mid = if lo > 0.0 {
            lo.sqrt() * hi.sqrt()
        } else {
            0.5 * hi
        };
        if !(mid > lo && mid < hi) {
            break;
        }
        if beta(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = if (beta(lo) - target).abs() < (beta(hi) - target).abs() && lo > 0.0 {
        lo
    } else {
        hi
    };
    Ok(root)
}

/// `ϑ = σ/2 + α̌²[(5ρ+4)σ + 8(ρ−2)Ǎ]/σ²`.
pub fn vartheta(sigma: f64, alpha_max: f64, rho: f64, a_max: f64) -> f64 {
    sigma / 2.0
        + alpha_max * alpha_max * ((5.0 * rho + 4.0) * sigma + 8.0 * (rho - 2.0) * a_max)
            / (sigma * sigma)
}

/// `ϑ₁ = σ/2 + α̌²[θB̂ + 2(θ−2)Ǎ]/(σB̂)`.
pub fn vartheta_one(sigma: f64, alpha_max: f64, theta: f64, a_max: f64, b_min: f64) -> f64 {
    sigma / 2.0
        + alpha_max * alpha_max * (theta * b_min + 2.0 * (theta - 2.0) * a_max) / (sigma * b_min)
}

/// Predicted `q`-th moment exponent `ξ_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRate {
    pub q: f64,
    pub rate: f64,
    /// The interpolation `−(q/ρ)(ζ−σ)` used for `q ∈ (2, ρ)` while `ρ < p`.
    #[serde(default)]
    pub extension: bool,
}

/// `ξ_q` for `q ∈ [2, p)` given the rate `ζ − σ` of the second moment.
pub fn moment_exponent_ladder(
    zeta: f64,
    sigma: f64,
    p: f64,
    rho: f64,
    q: f64,
) -> Result<MomentRate, DesignError> {
    if !(q >= 2.0 && q < p) {
        return Err(DesignError::QOutOfRange { q, p });
    }
    let gap = zeta - sigma;
    let (rate, extension) = if q == 2.0 {
        (-gap, false)
    } else if q <= rho {
        (-(q / rho) * gap, rho < p && q < rho)
    } else {
        (-((p - q) / (p - rho)) * gap, false)
    };
    Ok(MomentRate { q, rate, extension })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    #[serde(with = "crate::serde_inf")]
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRoot {
    pub name: String,
    pub family: BetaFamily,
    pub target: f64,
    pub root: f64,
    /// `|β(root) − target| / target`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral: Option<ZetaResult>,
    pub sampling_admissible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag_admissible: Option<bool>,
}

/// Almost-sure rate read off the moment ladder at `v = 2(q1 ∨ q2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiV {
    pub v: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralClaim {
    /// Moment order `ρ + θ − 2` whose time integral is finite.
    pub exponent: f64,
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub scenario: Scenario,
    pub variant: LambdaVariant,
    pub admissible: bool,
    pub hypotheses: Vec<HypothesisCheck>,
    pub pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub coefficients: BTreeMap<String, f64>,
    /// Spectral quantities at the largest admissible sampling interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral: Option<ZetaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_sampling_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_plus_lag_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    pub thresholds: Vec<ThresholdRoot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_point: Option<OperatingPoint>,
    pub ms_exponents: Vec<MomentRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_v: Option<XiV>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integral_claim: Option<IntegralClaim>,
    pub flags: Vec<String>,
}

impl DesignReport {
    fn new(scenario: Scenario, variant: LambdaVariant, pi: &StationaryDistribution) -> Self {
        Self {
            scenario,
            variant,
            admissible: false,
            hypotheses: Vec::new(),
            pi: pi.as_slice().to_vec(),
            sigma: None,
            coefficients: BTreeMap::new(),
            spectral: None,
            tau_sampling_max: None,
            tau_plus_lag_max: None,
            zeta: None,
            thresholds: Vec::new(),
            operating_point: None,
            ms_exponents: Vec::new(),
            as_exponent: None,
            xi_v: None,
            divergence_rate: None,
            integral_claim: None,
            flags: Vec::new(),
        }
    }

    pub fn threshold(&self, name: &str) -> Option<&ThresholdRoot> {
        self.thresholds.iter().find(|t| t.name == name)
    }

    pub fn ms_exponent(&self, q: f64) -> Option<f64> {
        self.ms_exponents.iter().find(|m| m.q == q).map(|m| m.rate)
    }

    fn check(&mut self, name: &str, lhs: f64, rhs: f64, holds: bool) -> Result<(), DesignError> {
        self.hypotheses.push(HypothesisCheck {
            name: name.to_string(),
            lhs,
            rhs,
            holds,
        });
        if holds {
            Ok(())
        } else {
            Err(DesignError::HypothesisViolated {
                failed: name.to_string(),
                report: Box::new(self.clone()),
            })
        }
    }

    fn sigma_range(&mut self, sigma: f64, upper: f64) -> Result<(), DesignError> {
        let holds = sigma > 0.0 && sigma < upper;
        self.hypotheses.push(HypothesisCheck {
            name: "0 < σ < σ_max".into(),
            lhs: sigma,
            rhs: upper,
            holds,
        });
        if holds {
            Ok(())
        } else {
            Err(DesignError::SigmaOutOfRange {
                sigma,
                upper,
                report: Box::new(self.clone()),
            })
        }
    }

    fn root(
        &mut self,
        name: &str,
        family: BetaFamily,
        target: f64,
        params: &BetaParams,
    ) -> Result<f64, DesignError> {
        let root = match solve_threshold(family, target, params) {
            Ok(y) => y,
            Err(DesignError::DegenerateThreshold { .. }) => {
                self.flags.push(format!("degenerate_threshold:{name}"));
                0.0
            }
            Err(e) => return Err(e),
        };
        let residual = if target > 0.0 {
            (beta_eval(family, root, params) - target).abs() / target
        } else {
            0.0
        };
        self.thresholds.push(ThresholdRoot {
            name: name.to_string(),
            family,
            target,
            root,
            residual,
        });
        Ok(root)
    }

    fn finish(mut self) -> Self {
        let positive = self.tau_plus_lag_max.is_none_or(|t| t > 0.0);
        self.admissible = self.hypotheses.iter().all(|h| h.holds) && positive;
        self
    }
}

/// User-chosen operating point and initial data shared by all scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DesignOptions {
    pub variant: LambdaVariant,
    /// Sampling interval to evaluate exponents at; defaults to the largest
    /// admissible one.
    pub tau: Option<f64>,
    pub tau0: Option<f64>,
    /// `|x₀|²`.
    pub x0_norm_sq: f64,
}

struct Setup {
    pi: StationaryDistribution,
    alpha: Vec<f64>,
    alpha_max: f64,
    pi_alpha: f64,
}

fn setup(generator: &GeneratorMatrix, gains: &ControlGains) -> Result<Setup, DesignError> {
    let n = generator.n_states();
    if gains.as_slice().len() != n {
        return Err(DesignError::InvalidInput(format!(
            "{} gains for {n} modes",
            gains.as_slice().len()
        )));
    }
    let pi = generator.stationary_distribution()?;
    let pi_alpha = pi.dot(gains.as_slice());
    Ok(Setup {
        pi,
        alpha: gains.as_slice().to_vec(),
        alpha_max: gains.max(),
        pi_alpha,
    })
}

fn require<'a>(v: &'a Option<Vec<f64>>, name: &str, n: usize) -> Result<&'a [f64], DesignError> {
    match v {
        Some(v) if v.len() == n => Ok(v),
        Some(v) => Err(DesignError::InvalidInput(format!(
            "bound {name} has {} entries, expected {n}",
            v.len()
        ))),
        None => Err(DesignError::InvalidInput(format!(
            "bound {name} is required"
        ))),
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Checks `πα > πh` and `κ_{α−h} > 2`, then evaluates `ζ` at `τ̄(2, α−h)/2`.
fn stable_core(
    report: &mut DesignReport,
    generator: &GeneratorMatrix,
    s: &Setup,
    h: &[f64],
    h_name: &str,
    variant: LambdaVariant,
) -> Result<ZetaResult, DesignError> {
    let pi_h = s.pi.dot(h);
    report.coefficients.insert(format!("pi_{h_name}"), pi_h);
    report.check(
        &format!("πα > π{h_name}"),
        s.pi_alpha,
        pi_h,
        s.pi_alpha > pi_h,
    )?;
    let mu: Vec<f64> = s.alpha.iter().zip(h).map(|(a, b)| a - b).collect();
    let kappa = spectral::kappa(generator, &mu)?;
    report.check(&format!("κ_(α−{h_name}) > 2"), kappa, 2.0, kappa > 2.0)?;
    let tau_bar = spectral::tau_bar(generator, &s.alpha, h, 2.0, variant)?;
    let z = spectral::zeta(generator, &s.alpha, h, 2.0, tau_bar / 2.0, variant)?;
    report.spectral = Some(z);
    report.tau_sampling_max = Some(z.tau);
    report.zeta = Some(z.zeta);
    Ok(z)
}

fn operating_zeta(
    report: &mut DesignReport,
    generator: &GeneratorMatrix,
    s: &Setup,
    h: &[f64],
    design: &ZetaResult,
    opts: &DesignOptions,
) -> Result<ZetaResult, DesignError> {
    let tau = opts.tau.unwrap_or(design.tau);
    let z = spectral::zeta(generator, &s.alpha, h, 2.0, tau, opts.variant)?;
    let sampling_admissible = tau > 0.0 && tau <= design.tau * (1.0 + 1e-12);
    let lag_admissible = match (opts.tau0, report.tau_plus_lag_max) {
        (Some(tau0), Some(max)) => Some(tau0 >= 0.0 && tau + tau0 < max),
        _ => None,
    };
    if !sampling_admissible {
        report.flags.push("sampling_interval_exceeds_bound".into());
    }
    if lag_admissible == Some(false) {
        report.flags.push("lag_exceeds_bound".into());
    }
    report.operating_point = Some(OperatingPoint {
        tau,
        tau0: opts.tau0,
        spectral: Some(z),
        sampling_admissible,
        lag_admissible,
    });
    Ok(z)
}

/// Gains keeping `sup_t 𝔼|x(t)|²` finite.
pub fn design_ql_bounded(
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &QuasiLinearBounds,
    opts: &DesignOptions,
) -> Result<DesignReport, DesignError> {
    let s = setup(generator, gains)?;
    let n = generator.n_states();
    let d = require(&bounds.upper_d, "D", n)?;
    let mut r = DesignReport::new(Scenario::QlBounded, opts.variant, &s.pi);
    r.coefficients.insert("pi_alpha".into(), s.pi_alpha);
    r.coefficients.insert("alpha_max".into(), s.alpha_max);
    let z = stable_core(&mut r, generator, &s, d, "D", opts.variant)?;
    let params = BetaParams {
        k: bounds.k_bar,
        alpha_max: s.alpha_max,
        ..Default::default()
    };
    let a2 = s.alpha_max * s.alpha_max;
    let z2 = z.zeta * z.zeta;
    let y1 = r.root(
        "y1",
        BetaFamily::BarOne,
        z2 / (2.0 * (8.0 * a2 + z2)),
        &params,
    )?;
    let y2 = r.root("y2", BetaFamily::BarTwo, z2 / (8.0 * a2 + z2), &params)?;
    r.tau_plus_lag_max = Some(y1.min(y2));
    if opts.tau.is_some() || opts.tau0.is_some() {
        operating_zeta(&mut r, generator, &s, d, &z, opts)?;
    }
    Ok(r.finish())
}

/// Lower bound on the growth of `𝔼|x(t)|²` when the gains are too weak.
pub fn design_ql_unbounded(
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &QuasiLinearBounds,
    opts: &DesignOptions,
) -> Result<DesignReport, DesignError> {
    let s = setup(generator, gains)?;
    let n = generator.n_states();
    let d = require(&bounds.lower_d, "d", n)?;
    let e = require(&bounds.lower_e, "e", n)?;
    let mut r = DesignReport::new(Scenario::QlUnbounded, opts.variant, &s.pi);
    let pi_d = s.pi.dot(d);
    let upsilon = pi_d - s.pi_alpha;
    r.coefficients.insert("pi_alpha".into(), s.pi_alpha);
    r.coefficients.insert("pi_d".into(), pi_d);
    r.coefficients.insert("upsilon".into(), upsilon);
    r.check("πd − πα > 0", pi_d, s.pi_alpha, upsilon > 0.0)?;
    let e_min = min_of(e);
    let d_max = max_of(d);
    let params = BetaParams {
        k: bounds.k_bar,
        alpha_max: s.alpha_max,
        upsilon,
        x0_norm_sq: opts.x0_norm_sq,
        ..Default::default()
    };
    let denom = 2.0 * s.alpha_max * s.alpha_max + upsilon * upsilon;
    let y3 = r.root(
        "y3",
        BetaFamily::BarOne,
        upsilon * e_min.min(upsilon / 2.0) / denom,
        &params,
    )?;
    let y4 = r.root(
        "y4",
        BetaFamily::BarThree,
        upsilon * upsilon / denom,
        &params,
    )?;
    let y5 = r.root(
        "y5",
        BetaFamily::BarFour,
        upsilon * (e_min / (2.0 * d_max) + opts.x0_norm_sq) / denom,
        &params,
    )?;
    r.tau_plus_lag_max = Some(y3.min(y4).min(y5));
    r.divergence_rate = Some(upsilon / 4.0);
    if let (Some(tau), Some(tau0)) = (opts.tau, opts.tau0) {
        let lag = tau + tau0 < y3.min(y4).min(y5);
        if !lag {
            r.flags.push("lag_exceeds_bound".into());
        }
        r.operating_point = Some(OperatingPoint {
            tau,
            tau0: Some(tau0),
            spectral: None,
            sampling_admissible: tau > 0.0,
            lag_admissible: Some(lag),
        });
    }
    Ok(r.finish())
}

/// Mean-square and almost-sure exponential stability for quasi-linear systems.
pub fn design_ql_stable(
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &QuasiLinearBounds,
    sigma: f64,
    opts: &DesignOptions,
) -> Result<DesignReport, DesignError> {
    let s = setup(generator, gains)?;
    let n = generator.n_states();
    let d = require(&bounds.upper_d, "D", n)?;
    let mut r = DesignReport::new(Scenario::QlStable, opts.variant, &s.pi);
    r.sigma = Some(sigma);
    r.coefficients.insert("pi_alpha".into(), s.pi_alpha);
    r.coefficients.insert("alpha_max".into(), s.alpha_max);
    let z = stable_core(&mut r, generator, &s, d, "D", opts.variant)?;
    r.sigma_range(sigma, z.zeta)?;
    let params = BetaParams {
        k: bounds.k_bar,
        alpha_max: s.alpha_max,
        sigma,
        ..Default::default()
    };
    let target = sigma * sigma / (8.0 * s.alpha_max * s.alpha_max + sigma * sigma);
    let y6 = r.root("y6", BetaFamily::TildeOne, target, &params)?;
    let y7 = r.root("y7", BetaFamily::TildeTwo, target, &params)?;
    r.tau_plus_lag_max = Some(y6.min(y7));
    let op = operating_zeta(&mut r, generator, &s, d, &z, opts)?;
    let ms = -(op.zeta - sigma);
    r.ms_exponents.push(MomentRate {
        q: 2.0,
        rate: ms,
        extension: false,
    });
    r.as_exponent = Some(ms / 2.0);
    Ok(r.finish())
}

/// Exponential growth lower bound for quasi-linear systems.
pub fn design_ql_unstable(
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &QuasiLinearBounds,
    sigma: f64,
    opts: &DesignOptions,
) -> Result<DesignReport, DesignError> {
    let s = setup(generator, gains)?;
    let n = generator.n_states();
    let d = require(&bounds.lower_d, "d", n)?;
    let mut r = DesignReport::new(Scenario::QlUnstable, opts.variant, &s.pi);
    r.sigma = Some(sigma);
    let pi_d = s.pi.dot(d);
    r.coefficients.insert("pi_alpha".into(), s.pi_alpha);
    r.coefficients.insert("pi_d".into(), pi_d);
    r.check("πα < πd", s.pi_alpha, pi_d, s.pi_alpha < pi_d)?;
    r.sigma_range(sigma, pi_d - s.pi_alpha)?;
    let params = BetaParams {
        k: bounds.k_bar,
        alpha_max: s.alpha_max,
        sigma,
        x0_norm_sq: opts.x0_norm_sq,
        ..Default::default()
    };
    let denom = 2.0 * s.alpha_max * s.alpha_max + sigma * sigma;
    let y8 = r.root("y8", BetaFamily::TildeOne, sigma * sigma / denom, &params)?;
    let y9 = r.root("y9", BetaFamily::TildeThree, sigma * sigma / denom, &params)?;
    let y10 = r.root(
        "y10",
        BetaFamily::TildeFour,
        sigma * opts.x0_norm_sq / denom,
        &params,
    )?;
    if opts.x0_norm_sq == 0.0 {
        r.flags.push("trivial_initial_state".into());
    }
    r.tau_plus_lag_max = Some(y8.min(y9).min(y10));
    r.divergence_rate = Some(2.0 * (pi_d - s.pi_alpha - sigma));
    Ok(r.finish())
}

struct NonlinearThresholds {
    targets: [f64; 3],
    rho: f64,
}

fn nonlinear_common(
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &NonlinearBounds,
    sigma: f64,
    opts: &DesignOptions,
    scenario: Scenario,
    thresholds: impl FnOnce(&mut DesignReport, f64) -> NonlinearThresholds,
) -> Result<DesignReport, DesignError> {
    let s = setup(generator, gains)?;
    bounds.validate(generator.n_states())?;
    let mut r = DesignReport::new(scenario, opts.variant, &s.pi);
    r.sigma = Some(sigma);
    r.coefficients.insert("pi_alpha".into(), s.pi_alpha);
    r.coefficients.insert("alpha_max".into(), s.alpha_max);
    r.coefficients.insert("A_max".into(), bounds.a_max());
    r.coefficients.insert("B_min".into(), bounds.b_min());
    if scenario == Scenario::NlStablePGeTheta {
        r.check("p ≥ θ", bounds.p, bounds.theta, bounds.p >= bounds.theta)?;
    }
    let z = stable_core(&mut r, generator, &s, &bounds.a, "A", opts.variant)?;
    r.sigma_range(sigma, z.zeta.min(2.0 * bounds.b_min()))?;

    let NonlinearThresholds { targets, rho } = thresholds(&mut r, s.alpha_max);
    r.coefficients.insert("rho".into(), rho);
    let params = BetaParams {
        k: bounds.k,
        alpha_max: s.alpha_max,
        sigma,
        ..Default::default()
    };
    let y1 = r.root("y1", BetaFamily::One, targets[0], &params)?;
    let y2 = r.root("y2", BetaFamily::Two, targets[1], &params)?;
    let y3 = r.root("y3", BetaFamily::Three, targets[2], &params)?;
    let tau_star = y1.min(y2).min(y3);
    r.tau_plus_lag_max = Some(tau_star);

    let op = operating_zeta(&mut r, generator, &s, &bounds.a, &z, opts)?;
    if op.nonpositive || op.zeta <= sigma {
        r.flags.push("operating_zeta_below_sigma".into());
    }
    let gap = op.zeta - sigma;
    r.ms_exponents.push(MomentRate {
        q: 2.0,
        rate: -gap,
        extension: false,
    });
    if rho != 2.0 {
        r.ms_exponents.push(MomentRate {
            q: rho,
            rate: -gap,
            extension: false,
        });
    }
    r.as_exponent = Some(-gap / 2.0);
    let p = bounds.p;
    let mut q = 3.0;
    while q < p {
        if q != rho {
            let entry = moment_exponent_ladder(op.zeta, sigma, p, rho, q)?;
            if entry.extension && !r.flags.iter().any(|f| f == "ladder_extension") {
                r.flags.push("ladder_extension".into());
            }
            r.ms_exponents.push(entry);
        }
        q += 1.0;
    }
    r.ms_exponents.sort_by(|a, b| a.q.total_cmp(&b.q));
    let v = 2.0 * bounds.q1.max(bounds.q2);
    if p > v {
        r.xi_v = Some(XiV {
            v,
            xi: moment_exponent_ladder(op.zeta, sigma, p, rho, v)?.rate,
        });
    }
    let lag_ok = r
        .operating_point
        .as_ref()
        .is_some_and(|o| o.sampling_admissible && o.lag_admissible != Some(false));
    r.integral_claim = Some(IntegralClaim {
        exponent: rho + bounds.theta - 2.0,
        finite: lag_ok && !op.nonpositive && op.zeta > sigma,
    });
    Ok(r.finish())
}

/// Moment and almost-sure stability for nonlinear systems.
pub fn design_nl_stable(
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &NonlinearBounds,
    sigma: f64,
    opts: &DesignOptions,
) -> Result<DesignReport, DesignError> {
    nonlinear_common(
        generator,
        gains,
        bounds,
        sigma,
        opts,
        Scenario::NlStable,
        |r, alpha_max| {
            let rho = bounds.rho();
            let a_max = bounds.a_max();
            let th = vartheta(sigma, alpha_max, rho, a_max);
            r.coefficients.insert("vartheta".into(), th);
            r.coefficients.insert(
                "lambda".into(),
                1.0 + rho + 2.0 * (rho - 2.0) * a_max / sigma,
            );
            NonlinearThresholds {
                targets: [
                    sigma / (2.0 * th),
                    rho * (2.0 * bounds.b_min() - sigma) / (2.0 * th),
                    sigma / (2.0 * th),
                ],
                rho,
            }
        },
    )
}

/// [`design_nl_stable`] with `ρ = θ` and the sharper coefficient `ϑ₁`, for `p ≥ θ`.
pub fn design_nl_stable_p_ge_theta(
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &NonlinearBounds,
    sigma: f64,
    opts: &DesignOptions,
) -> Result<DesignReport, DesignError> {
    nonlinear_common(
        generator,
        gains,
        bounds,
        sigma,
        opts,
        Scenario::NlStablePGeTheta,
        |r, alpha_max| {
            let theta = bounds.theta;
            let a_max = bounds.a_max();
            let b_min = bounds.b_min();
            let th = vartheta_one(sigma, alpha_max, theta, a_max, b_min);
            r.coefficients.insert("vartheta1".into(), th);
            NonlinearThresholds {
                targets: [
                    sigma * (theta - 2.0) * a_max / (4.0 * b_min * th),
                    theta * (2.0 * b_min - sigma) / (2.0 * th),
                    sigma / (2.0 * th),
                ],
                rho: theta,
            }
        },
    )
}

/// Dispatch on `scenario`. `sigma` is required except for the two
/// boundedness scenarios.
pub fn design(
    scenario: Scenario,
    generator: &GeneratorMatrix,
    gains: &ControlGains,
    bounds: &Bounds,
    sigma: Option<f64>,
    opts: &DesignOptions,
) -> Result<DesignReport, DesignError> {
    let need_sigma = || sigma.ok_or_else(|| DesignError::InvalidInput("sigma is required".into()));
    let wrong = |kind: &str| {
        Err(DesignError::InvalidInput(format!(
            "scenario {scenario:?} needs {kind} bounds"
        )))
    };
    match (scenario, bounds) {
        (Scenario::QlBounded, Bounds::QuasiLinear(b)) => {
            design_ql_bounded(generator, gains, b, opts)
        }
        (Scenario::QlUnbounded, Bounds::QuasiLinear(b)) => {
            design_ql_unbounded(generator, gains, b, opts)
        }
        (Scenario::QlStable, Bounds::QuasiLinear(b)) => {
            design_ql_stable(generator, gains, b, need_sigma()?, opts)
        }
        (Scenario::QlUnstable, Bounds::QuasiLinear(b)) => {
            design_ql_unstable(generator, gains, b, need_sigma()?, opts)
        }
        (Scenario::NlStable, Bounds::Nonlinear(b)) => {
            design_nl_stable(generator, gains, b, need_sigma()?, opts)
        }
        (Scenario::NlStablePGeTheta, Bounds::Nonlinear(b)) => {
            design_nl_stable_p_ge_theta(generator, gains, b, need_sigma()?, opts)
        }
        (Scenario::NlStable | Scenario::NlStablePGeTheta, _) => wrong("nonlinear"),
        _ => wrong("quasi_linear"),
    }
}

/// One inequality evaluated over the sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub mode: usize,
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` seen (negative when violated).
    pub worst_margin: f64,
    pub worst_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<InequalityCheck>,
    pub total_violations: usize,
}

/// Evenly spaced scalar states on `[lo, hi]`.
pub fn scalar_grid(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    let n = n.max(2);
    (0..n)
        .map(|k| vec![lo + (hi - lo) * k as f64 / (n - 1) as f64])
        .collect()
}

/// Spot-check the declared growth and one-sided bounds of `model` on every
/// `(x, mode, t)` sample.
pub fn verify_assumptions(
    model: &dyn SwitchingModel,
    bounds: &Bounds,
    xs: &[Vec<f64>],
    ts: &[f64],
) -> AssumptionReport {
    let n = model.dim_x();
    let m = model.dim_w();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * m];
    let mut checks = Vec::new();
    for mode in 0..model.n_modes() {
        // name, rhs − lhs for each sample
        let mut local: Vec<InequalityCheck> = Vec::new();
        let mut record = |name: &str, lhs: f64, rhs: f64, x: &[f64]| {
            let margin = rhs - lhs;
            let slack = tolerances::ASSUMPTION_SLACK * (1.0 + lhs.abs() + rhs.abs());
            let entry = match local.iter_mut().position(|c| c.name == name) {
                Some(i) => &mut local[i],
                None => {
                    local.push(InequalityCheck {
                        name: name.to_string(),
                        mode,
                        evaluated: 0,
                        violations: 0,
                        worst_margin: f64::INFINITY,
                        worst_x: x.to_vec(),
                    });
                    local.last_mut().expect("just pushed")
                }
            };
            entry.evaluated += 1;
            if !(margin >= -slack) {
                entry.violations += 1;
            }
            if margin < entry.worst_margin || margin.is_nan() {
                entry.worst_margin = margin;
                entry.worst_x = x.to_vec();
            }
        };
        for &t in ts {
            for x in xs {
                model.drift(x, mode, t, &mut f);
                model.diffusion(x, mode, t, &mut g);
                let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let fn_ = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                let g2 = g.iter().map(|v| v * v).sum::<f64>();
                let gn = g2.sqrt();
                let xf: f64 = x.iter().zip(&f).map(|(a, b)| a * b).sum();
                match bounds {
                    Bounds::QuasiLinear(b) => {
                        let cap = b.k_bar * (1.0 + xn);
                        record("|f| ≤ K̄(1+|x|)", fn_, cap, x);
                        record("|g| ≤ K̄(1+|x|)", gn, cap, x);
                        let lhs = xf + 0.5 * g2;
                        if let Some(d) = &b.upper_d {
                            let e = b.upper_e.as_ref().map_or(0.0, |e| e[mode]);
                            record("xᵀf + |g|²/2 ≤ E + D|x|²", lhs, e + d[mode] * xn * xn, x);
                        }
                        if let Some(d) = &b.lower_d {
                            let e = b.lower_e.as_ref().map_or(0.0, |e| e[mode]);
                            record("xᵀf + |g|²/2 ≥ d|x|² + e", d[mode] * xn * xn + e, lhs, x);
                        }
                    }
                    Bounds::Nonlinear(b) => {
                        record("|f| ≤ K(|x|+|x|^q1)", fn_, b.k * (xn + xn.powf(b.q1)), x);
                        record("|g| ≤ K(|x|+|x|^q2)", gn, b.k * (xn + xn.powf(b.q2)), x);
                        let lhs = xf + 0.5 * (b.p - 1.0) * g2;
                        let rhs = b.c + b.a[mode] * xn * xn - b.b[mode] * xn.powf(b.theta);
                        record("xᵀf + (p−1)|g|²/2 ≤ C + A|x|² − B|x|^θ", lhs, rhs, x);
                    }
                }
            }
        }
        checks.extend(local);
    }
    let total_violations = checks.iter().map(|c| c.violations).sum();
    AssumptionReport {
        checks,
        total_violations,
    }
}
