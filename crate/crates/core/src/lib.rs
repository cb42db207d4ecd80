//! Design and Monte Carlo verification of delayed sampled-data feedback for
//! regime-switching diffusions.
//!
//! The controlled system is
//!
//! ```text
//! dx(t) = [f(x, r(t), t) - α(r(ν(t) - τ0)) x(ν(t) - τ0)] dt + g(x, r(t), t) dB(t)
//! ```
//!
//! where `r` is a finite continuous-time Markov chain, `ν(t) = ⌊t/τ⌋τ` is the
//! last sampling instant and `τ0` the response lag.
//!
//! * [`chain`] validates generators and simulates exact mode paths.
//! * [`spectral`] holds the spectral abscissa machinery (`η`, `κ`, `τ̄`, `ζ`).
//! * [`designer`] evaluates the admissible `(τ, τ0)` bounds and predicted exponents.
//! * [`simulator`] runs Euler–Maruyama on the uncontrolled and controlled systems.
//! * [`estimator`] turns ensembles of paths into moment curves and exponent estimates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod chain;
pub mod designer;
pub mod estimator;
mod linalg;
pub mod model;
pub mod rng;
mod serde_inf;
pub mod simulator;
pub mod spectral;
pub mod tolerances;

pub use chain::{GeneratorMatrix, ModePath, StationaryDistribution};
pub use designer::{DesignReport, NonlinearBounds, QuasiLinearBounds, Scenario};
pub use estimator::{EnsembleStats, ExponentEstimate};
pub use model::{PolynomialModel, SwitchingModel};
pub use simulator::{ControlLaw, SimConfig, Trajectory};
pub use spectral::{LambdaVariant, ZetaResult};
