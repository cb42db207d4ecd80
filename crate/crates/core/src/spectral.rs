//! Spectral quantities of the weighted generator `Γ_{l,μ} = Γ − l·diag(μ)`:
//! the decay rate `η`, its critical parameter `κ`, the sampling penalty `Λ_τ`,
//! the admissible sampling interval `τ̄` and the guaranteed rate `ζ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, GeneratorMatrix};
use crate::{linalg, tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigenvalue computation did not converge")]
    EigenFailure,
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("no sign change of eta on the bracket ({lo:e}, {hi:e})")]
    BracketFailure { lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Exponent coefficient used inside `Λ_τ(l) = max_j{−γ_jj}(e^{cτ} − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LambdaVariant {
    /// `c = l·α̌·(1+ε)/ε`.
    FormulaA,
    /// `c = l·α̌·(1+ε)`.
    #[default]
    FormulaB,
}

impl LambdaVariant {
    pub fn coefficient(self, l: f64, alpha_max: f64, epsilon: f64) -> f64 {
        match self {
            LambdaVariant::FormulaA => l * alpha_max * (1.0 + epsilon) / epsilon,
            LambdaVariant::FormulaB => l * alpha_max * (1.0 + epsilon),
        }
    }
}

/// Everything computed on the way to `ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaResult {
    pub l: f64,
    pub tau: f64,
    /// `κ_{α−h}`; serialized as `null` when infinite.
    #[serde(with = "crate::serde_inf")]
    pub kappa: f64,
    pub epsilon: f64,
    /// `η_{l(1+ε), α−h}`.
    #[serde(rename = "eta")]
    pub eta_boosted: f64,
    pub lambda_tau: f64,
    #[serde(with = "crate::serde_inf")]
    pub tau_bar: f64,
    pub zeta: f64,
    /// Set when `τ ≥ τ̄`, i.e. the returned `ζ` is not a decay guarantee.
    pub nonpositive: bool,
    pub variant: LambdaVariant,
}

fn check_weight(generator: &GeneratorMatrix, mu: &[f64]) -> Result<(), SpectralError> {
    if mu.len() != generator.n_states() {
        return Err(SpectralError::InvalidArgument(format!(
            "weight has length {}, generator has {} states",
            mu.len(),
            generator.n_states()
        )));
    }
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(SpectralError::InvalidArgument(
            "weight must be finite".into(),
        ));
    }
    Ok(())
}

/// `η_{l,μ} = −max Re spec(Γ − l·diag(μ))`.
pub fn eta(generator: &GeneratorMatrix, mu: &[f64], l: f64) -> Result<f64, SpectralError> {
    check_weight(generator, mu)?;
    let mut m = generator.as_matrix().clone();
    for (i, &w) in mu.iter().enumerate() {
        m[(i, i)] -= l * w;
    }
    linalg::spectral_abscissa(&m)
        .map(|a| -a)
        .ok_or(SpectralError::EigenFailure)
}

/// Critical parameter `κ_μ`: `η_{l,μ} > 0` exactly for `l ∈ (0, κ_μ)`.
///
/// Infinite when `μ ≥ 0`. Otherwise the root lies below
/// `min_{μ_i<0} γ_ii/μ_i` and is found by bisection.
pub fn kappa(generator: &GeneratorMatrix, mu: &[f64]) -> Result<f64, SpectralError> {
    check_weight(generator, mu)?;
    let pi = generator.stationary_distribution()?;
    let pi_mu = pi.dot(mu);
    if !(pi_mu > 0.0) {
        return Err(SpectralError::HypothesisViolated(format!(
            "pi*mu > 0 required, got {pi_mu}"
        )));
    }
    if mu.iter().all(|&m| m >= 0.0) {
        return Ok(f64::INFINITY);
    }
    let upper = mu
        .iter()
        .enumerate()
        .filter(|(_, &m)| m < 0.0)
        .map(|(i, &m)| generator.rate(i, i) / m)
        .fold(f64::INFINITY, f64::min);
    let mut lo = tolerances::KAPPA_BRACKET_OFFSET;
    let mut hi = upper - tolerances::KAPPA_BRACKET_OFFSET;
    if !(hi > lo) || eta(generator, mu, hi)? >= 0.0 {
        return Err(SpectralError::BracketFailure { lo, hi });
    }
    for _ in 0..tolerances::KAPPA_MAX_ITER {
        if hi - lo <= tolerances::KAPPA_REL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eta(generator, mu, mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `ε = ((κ − l)/(2l)) ∧ 1`, and 1 when `κ = ∞`.
pub fn epsilon(kappa: f64, l: f64) -> f64 {
    if kappa.is_infinite() {
        1.0
    } else {
        ((kappa - l) / (2.0 * l)).min(1.0)
    }
}

/// `Λ_τ(l) = max_j{−γ_jj}·(e^{cτ} − 1)` with `c` chosen by `variant`.
pub fn lambda_tau(
    l: f64,
    tau: f64,
    alpha_max: f64,
    max_exit_rate: f64,
    epsilon: f64,
    variant: LambdaVariant,
) -> f64 {
    let c = variant.coefficient(l, alpha_max, epsilon);
    max_exit_rate * (c * tau).exp_m1()
}

struct Boosted {
    kappa: f64,
    epsilon: f64,
    eta_boosted: f64,
    alpha_max: f64,
    max_exit: f64,
}

fn boosted(
    generator: &GeneratorMatrix,
    alpha: &[f64],
    h: &[f64],
    l: f64,
) -> Result<Boosted, SpectralError> {
    if alpha.len() != h.len() {
        return Err(SpectralError::InvalidArgument(format!(
            "gain length {} differs from offset length {}",
            alpha.len(),
            h.len()
        )));
    }
    if !(l > 0.0) || !l.is_finite() {
        return Err(SpectralError::InvalidArgument(format!(
            "l must be positive, got {l}"
        )));
    }
    let mu: Vec<f64> = alpha.iter().zip(h).map(|(a, b)| a - b).collect();
    let kappa = kappa(generator, &mu)?;
    if l >= kappa {
        return Err(SpectralError::HypothesisViolated(format!(
            "l < kappa required, got l = {l}, kappa = {kappa}"
        )));
    }
    let epsilon = epsilon(kappa, l);
    let eta_boosted = eta(generator, &mu, l * (1.0 + epsilon))?;
    if !(eta_boosted > 0.0) {
        return Err(SpectralError::HypothesisViolated(format!(
            "eta at l(1+eps) must be positive, got {eta_boosted:e}"
        )));
    }
    Ok(Boosted {
        kappa,
        epsilon,
        eta_boosted,
        alpha_max: alpha.iter().copied().fold(0.0, f64::max),
        max_exit: generator.max_exit_rate(),
    })
}

fn tau_bar_of(b: &Boosted, l: f64, variant: LambdaVariant) -> f64 {
    let c = variant.coefficient(l, b.alpha_max, b.epsilon);
    if b.max_exit == 0.0 || c == 0.0 {
        return f64::INFINITY;
    }
    (b.eta_boosted / (b.epsilon * b.max_exit)).ln_1p() / c
}

/// Largest sampling interval `τ̄(l, α−h)` for which `ζ > 0`.
pub fn tau_bar(
    generator: &GeneratorMatrix,
    alpha: &[f64],
    h: &[f64],
    l: f64,
    variant: LambdaVariant,
) -> Result<f64, SpectralError> {
    let b = boosted(generator, alpha, h, l)?;
    Ok(tau_bar_of(&b, l, variant))
}

/// `ζ = (η_{l(1+ε),α−h} − εΛ_τ(l)) / (1+ε)` at sampling interval `tau`.
pub fn zeta(
    generator: &GeneratorMatrix,
    alpha: &[f64],
    h: &[f64],
    l: f64,
    tau: f64,
    variant: LambdaVariant,
) -> Result<ZetaResult, SpectralError> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(SpectralError::InvalidArgument(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    let b = boosted(generator, alpha, h, l)?;
    let lambda_tau = lambda_tau(l, tau, b.alpha_max, b.max_exit, b.epsilon, variant);
    let zeta = (b.eta_boosted - b.epsilon * lambda_tau) / (1.0 + b.epsilon);
    let tau_bar = tau_bar_of(&b, l, variant);
    Ok(ZetaResult {
        l,
        tau,
        kappa: b.kappa,
        epsilon: b.epsilon,
        eta_boosted: b.eta_boosted,
        lambda_tau,
        tau_bar,
        zeta,
        nonpositive: tau >= tau_bar || zeta <= 0.0,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sec5() -> GeneratorMatrix {
        GeneratorMatrix::new(&[vec![-10.0, 10.0], vec![20.0, -20.0]]).unwrap()
    }

    // Rightmost root of the 2x2 characteristic polynomial, computed from the
    // real and imaginary parts separately.
    fn eta_quadratic(g: &GeneratorMatrix, mu: &[f64], l: f64) -> f64 {
        let a = g.rate(0, 0) - l * mu[0];
        let d = g.rate(1, 1) - l * mu[1];
        let bc = g.rate(0, 1) * g.rate(1, 0);
        let half = 0.5 * (a + d);
        let disc = 0.25 * (a - d) * (a - d) + bc;
        -(half + disc.max(0.0).sqrt())
    }

    #[test]
    fn eta_of_zero_weight_vanishes() {
        assert_eq!(eta(&sec5(), &[0.0, 0.0], 3.0).unwrap(), 0.0);
    }

    #[test]
    fn eta_case_one_weight() {
        let g = sec5();
        let v = eta(&g, &[3.5, 2.0], 4.0).unwrap();
        assert_relative_eq!(v, eta_quadratic(&g, &[3.5, 2.0], 4.0), max_relative = 1e-12);
        assert!((v - 11.7171).abs() < 1e-4);
    }

    #[test]
    fn eta_vanishes_at_known_root() {
        let v = eta(&sec5(), &[6.5, -4.0], 90.0 / 26.0).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn kappa_cases() {
        let g = sec5();
        assert!(kappa(&g, &[3.5, 2.0]).unwrap().is_infinite());
        assert!(kappa(&g, &[1.0, 1.0]).unwrap().is_infinite());
        let k = kappa(&g, &[6.5, -4.0]).unwrap();
        assert_relative_eq!(k, 90.0 / 26.0, max_relative = 1e-9);
        assert!((k - 3.4615).abs() < 1e-3);
    }

    #[test]
    fn kappa_requires_positive_mean_weight() {
        let err = kappa(&sec5(), &[-1.0, 1.0]).unwrap_err();
        assert!(matches!(err, SpectralError::HypothesisViolated(_)));
    }

    #[test]
    fn lambda_values() {
        assert_eq!(
            lambda_tau(2.0, 0.0, 6.0, 20.0, 1.0, LambdaVariant::FormulaA),
            0.0
        );
        let direct = 20.0 * (0.0024f64.exp() - 1.0);
        for v in [LambdaVariant::FormulaA, LambdaVariant::FormulaB] {
            let l = lambda_tau(2.0, 1e-4, 6.0, 20.0, 1.0, v);
            assert_relative_eq!(l, direct, max_relative = 1e-12);
            assert!((l - 0.048058).abs() < 1e-6);
        }
        let eps = 0.365385;
        let l = lambda_tau(2.0, 3e-6, 9.0, 20.0, eps, LambdaVariant::FormulaB);
        let direct = 20.0 * (3e-6f64 * 2.0 * 9.0 * (1.0 + eps)).exp_m1();
        assert_relative_eq!(l, direct, max_relative = 1e-12);
        assert!((l - 1.4747e-3).abs() < 1e-7);
    }

    #[test]
    fn tau_bar_example_cases() {
        let g = sec5();
        let a = [2.5, 4.0];
        let t1 = tau_bar(&g, &[6.0, 6.0], &a, 2.0, LambdaVariant::FormulaB).unwrap();
        assert!((t1 - 0.019214).abs() < 1e-6, "{t1}");
        assert!((t1 / 2.0 - 9.6e-3).abs() / 9.6e-3 < 0.01);
        let t2 = tau_bar(&g, &[9.0, 0.0], &a, 2.0, LambdaVariant::FormulaB).unwrap();
        assert!((t2 - 7.445e-3).abs() < 1e-6, "{t2}");
        assert!((t2 / 2.0 - 3.73e-3).abs() / 3.73e-3 < 0.01);
    }

    #[test]
    fn tau_bar_near_kappa() {
        let g = sec5();
        let alpha = [9.0, 0.0];
        let h = [2.5, 4.0];
        let k = 90.0 / 26.0;
        let mut prev = f64::INFINITY;
        for frac in [0.5, 0.9, 0.99, 0.999, 0.9999] {
            let t = tau_bar(&g, &alpha, &h, frac * k, LambdaVariant::FormulaA).unwrap();
            assert!(t > 0.0 && t < prev);
            prev = t;
        }
        assert!(prev < 1e-6, "{prev}");
        // η/ε stays bounded as l → κ, so without the 1/ε factor τ̄ does not vanish.
        let t = tau_bar(&g, &alpha, &h, 0.9999 * k, LambdaVariant::FormulaB).unwrap();
        assert!(t > 1e-2, "{t}");
    }

    #[test]
    fn zeta_example_values() {
        let g = sec5();
        let a = [2.5, 4.0];
        let b = LambdaVariant::FormulaB;
        let t1 = tau_bar(&g, &[6.0, 6.0], &a, 2.0, b).unwrap() / 2.0;
        let z = zeta(&g, &[6.0, 6.0], &a, 2.0, t1, b).unwrap();
        assert!((z.zeta - 3.265).abs() / 3.265 < 5e-3);
        assert!(!z.nonpositive);
        let z = zeta(&g, &[6.0, 6.0], &a, 2.0, 1e-4, b).unwrap();
        assert!((z.zeta - 5.8345).abs() / 5.8345 < 1e-3);
        let z = zeta(&g, &[9.0, 0.0], &a, 2.0, 3e-6, b).unwrap();
        assert!((z.zeta - 1.0747).abs() / 1.0747 < 1e-3);
    }

    #[test]
    fn zeta_past_tau_bar_is_flagged() {
        let g = sec5();
        let b = LambdaVariant::FormulaB;
        let tb = tau_bar(&g, &[6.0, 6.0], &[2.5, 4.0], 2.0, b).unwrap();
        let z = zeta(&g, &[6.0, 6.0], &[2.5, 4.0], 2.0, tb, b).unwrap();
        assert!(z.zeta.abs() < 1e-9);
        let z = zeta(&g, &[6.0, 6.0], &[2.5, 4.0], 2.0, 2.0 * tb, b).unwrap();
        assert!(z.nonpositive && z.zeta < 0.0);
    }

    #[test]
    fn variants_differ_only_below_unit_epsilon() {
        let g = sec5();
        let h = [2.5, 4.0];
        let a = tau_bar(&g, &[6.0, 6.0], &h, 2.0, LambdaVariant::FormulaA).unwrap();
        let b = tau_bar(&g, &[6.0, 6.0], &h, 2.0, LambdaVariant::FormulaB).unwrap();
        assert_eq!(a, b);
        let a = tau_bar(&g, &[9.0, 0.0], &h, 2.0, LambdaVariant::FormulaA).unwrap();
        let b = tau_bar(&g, &[9.0, 0.0], &h, 2.0, LambdaVariant::FormulaB).unwrap();
        assert!(a < b);
    }

    #[test]
    fn l_beyond_kappa_is_rejected() {
        let err = zeta(
            &sec5(),
            &[9.0, 0.0],
            &[2.5, 4.0],
            4.0,
            1e-6,
            LambdaVariant::FormulaB,
        )
        .unwrap_err();
        assert!(matches!(err, SpectralError::HypothesisViolated(_)));
    }
}
