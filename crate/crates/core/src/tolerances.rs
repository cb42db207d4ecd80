//! Numerical tolerances shared by validation, solvers and tests.

/// Maximum absolute row sum accepted for a conservative generator.
pub const GENERATOR_ROW_SUM: f64 = 1e-12;

/// Maximum `‖πΓ‖∞` accepted for a stationary distribution.
pub const STATIONARY_RESIDUAL: f64 = 1e-10;

/// Maximum deviation of `Σπ_i` from one.
pub const STATIONARY_MASS: f64 = 1e-12;

/// Maximum deviation of a skeleton transition row sum from one.
pub const SKELETON_ROW_SUM: f64 = 1e-10;

/// Relative pivot threshold below which an LU factorisation is declared singular.
pub const LU_PIVOT: f64 = 1e-13;

/// Relative tolerance of the `κ` bisection.
pub const KAPPA_REL: f64 = 1e-10;

/// Iteration cap of the `κ` bisection.
pub const KAPPA_MAX_ITER: usize = 200;

/// Offset used to open the `κ` bracket at both ends.
pub const KAPPA_BRACKET_OFFSET: f64 = 1e-12;

/// Relative tolerance of the threshold root solver.
pub const THRESHOLD_REL: f64 = 1e-12;

/// Iteration cap of the threshold bisection.
pub const THRESHOLD_MAX_ITER: usize = 500;

/// Starting point of the threshold bracket search.
pub const THRESHOLD_BRACKET_START: f64 = 1e-8;

/// Accepted relative residual `|β(y) - target| / target` of a reported root.
pub const THRESHOLD_RESIDUAL: f64 = 1e-10;

/// Relative tolerance for `τ/Δ` and `τ0/Δ` to count as integers.
pub const GRID_ALIGNMENT_REL: f64 = 1e-9;

/// `|x|∞` above which a simulated path is declared blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Relative slack used when spot-checking assumption inequalities.
pub const ASSUMPTION_SLACK: f64 = 1e-9;
