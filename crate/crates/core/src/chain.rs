//! Finite continuous-time Markov chains: generator validation, stationary
//! distribution, skeleton transition matrices and exact path sampling.
//!
//! Modes are indexed from zero inside the library. Files written for users
//! (CSV, JSON) shift them to `1..=N`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::{linalg, tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("generator must be a non-empty square matrix, got {rows} rows with lengths {cols:?}")]
    Shape { rows: usize, cols: Vec<usize> },
    #[error("generator entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} sums to {sum:e}; conservative generators need zero row sums")]
    NonConservative { row: usize, sum: f64 },
    #[error("off-diagonal rate ({row}, {col}) = {value} is negative")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("generator is reducible: state {unreachable} is not mutually reachable from state 0")]
    Reducible { unreachable: usize },
    #[error("stationary system is numerically singular")]
    SingularSystem,
    #[error("time {t} is outside the path horizon [0, {horizon})")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A validated conservative, irreducible generator `Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    rates: DMatrix<f64>,
}

/// Validate a raw rate table given row by row.
pub fn validate_generator(raw: &[Vec<f64>]) -> Result<GeneratorMatrix, ChainError> {
    let n = raw.len();
    if n == 0 || raw.iter().any(|row| row.len() != n) {
        return Err(ChainError::Shape {
            rows: n,
            cols: raw.iter().map(Vec::len).collect(),
        });
    }
    let rates = DMatrix::from_fn(n, n, |i, j| raw[i][j]);
    GeneratorMatrix::from_matrix(rates)
}

impl GeneratorMatrix {
    pub fn new(raw: &[Vec<f64>]) -> Result<Self, ChainError> {
        validate_generator(raw)
    }

    pub fn from_matrix(rates: DMatrix<f64>) -> Result<Self, ChainError> {
        let n = rates.nrows();
        if n == 0 || rates.ncols() != n {
            return Err(ChainError::Shape {
                rows: n,
                cols: vec![rates.ncols(); n],
            });
        }
        for i in 0..n {
            for j in 0..n {
                if !rates[(i, j)].is_finite() {
                    return Err(ChainError::NonFinite { row: i, col: j });
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && rates[(i, j)] < 0.0 {
                    return Err(ChainError::NegativeOffDiagonal {
                        row: i,
                        col: j,
                        value: rates[(i, j)],
                    });
                }
            }
            let sum: f64 = rates.row(i).iter().sum();
            if sum.abs() > tolerances::GENERATOR_ROW_SUM {
                return Err(ChainError::NonConservative { row: i, sum });
            }
        }
        if let Some(unreachable) = first_unreachable(&rates) {
            return Err(ChainError::Reducible { unreachable });
        }
        Ok(Self { rates })
    }

    pub fn n_states(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[(from, to)]
    }

    /// Total jump intensity `-γ_ii` out of `state`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.rates[(state, state)]
    }

    /// `max_j {-γ_jj}`.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n_states())
            .map(|j| self.exit_rate(j))
            .fold(0.0, f64::max)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|i| self.rates.row(i).iter().copied().collect())
            .collect()
    }

    /// Unique probability vector with `πΓ = 0`.
    ///
    /// Solves `Γᵀπᵀ = 0` with the last equation replaced by `Σπ_i = 1`, then
    /// applies one step of iterative refinement.
    pub fn stationary_distribution(&self) -> Result<StationaryDistribution, ChainError> {
        let n = self.n_states();
        if n == 1 {
            return Ok(StationaryDistribution { pi: vec![1.0] });
        }
        let mut system = self.rates.transpose();
        for j in 0..n {
            system[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let mut pi = linalg::lu_solve(&system, &rhs).ok_or(ChainError::SingularSystem)?;
        let residual = &rhs - &system * &pi;
        if let Some(correction) = linalg::lu_solve(&system, &residual) {
            pi += correction;
        }
        let total: f64 = pi.iter().sum();
        let pi: Vec<f64> = pi.iter().map(|p| p / total).collect();

        let dist = StationaryDistribution { pi };
        if dist.pi.iter().any(|&p| !(p > 0.0))
            || (dist.pi.iter().sum::<f64>() - 1.0).abs() > tolerances::STATIONARY_MASS
            || dist.residual(self) > tolerances::STATIONARY_RESIDUAL
        {
            return Err(ChainError::SingularSystem);
        }
        Ok(dist)
    }

    /// Transition matrix `exp(τΓ)` of the skeleton chain `r(nτ)`.
    pub fn skeleton_transition_matrix(&self, tau: f64) -> Result<DMatrix<f64>, ChainError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(ChainError::InvalidArgument(format!(
                "sampling interval must be positive, got {tau}"
            )));
        }
        let mut p = linalg::expm(&(&self.rates * tau));
        // Round-off can leave entries of order -1e-17.
        p.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
        Ok(p)
    }

    /// Exact path of the chain on `[0, horizon)` started in `initial`.
    ///
    /// Holding times in state `j` are Exponential(`-γ_jj`); the next state is
    /// `k ≠ j` with probability `γ_jk / (-γ_jj)`.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        initial: usize,
        horizon: f64,
        rng: &mut R,
    ) -> Result<ModePath, ChainError> {
        if initial >= self.n_states() {
            return Err(ChainError::InvalidArgument(format!(
                "initial mode {initial} out of range for {} states",
                self.n_states()
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ChainError::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut jump_times = vec![0.0];
        let mut modes = vec![initial];
        let mut t = 0.0;
        let mut state = initial;
        loop {
            let rate = self.exit_rate(state);
            if rate <= 0.0 {
                break;
            }
            let hold: f64 = Exp1.sample(rng);
            t += hold / rate;
            if t >= horizon {
                break;
            }
            state = self.draw_target(state, rate, rng);
            jump_times.push(t);
            modes.push(state);
        }
        Ok(ModePath {
            jump_times,
            modes,
            horizon,
        })
    }

    fn draw_target<R: Rng + ?Sized>(&self, from: usize, rate: f64, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut last = from;
        for to in (0..self.n_states()).filter(|&to| to != from) {
            let r = self.rates[(from, to)];
            if r <= 0.0 {
                continue;
            }
            acc += r;
            last = to;
            if u < acc {
                return to;
            }
        }
        last
    }
}

/// Returns a state that is not strongly connected with state 0, if any.
fn first_unreachable(rates: &DMatrix<f64>) -> Option<usize> {
    let n = rates.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if forward {
                    rates[(u, v)]
                } else {
                    rates[(v, u)]
                };
                if v != u && w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    (0..n).find(|&i| !(fwd[i] && bwd[i]))
}

/// Stationary probability vector `π` of an irreducible generator.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pi: Vec<f64>,
}

impl StationaryDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    /// `πc = Σ π_i c_i`.
    pub fn dot(&self, c: &[f64]) -> f64 {
        self.pi.iter().zip(c).map(|(p, v)| p * v).sum()
    }

    /// `‖πΓ‖∞`.
    pub fn residual(&self, generator: &GeneratorMatrix) -> f64 {
        let n = generator.n_states();
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|i| self.pi[i] * generator.rate(i, j))
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Piecewise-constant sample path of the mode process.
#[derive(Debug, Clone, PartialEq)]
pub struct ModePath {
    jump_times: Vec<f64>,
    modes: Vec<usize>,
    horizon: f64,
}

impl ModePath {
    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len() - 1
    }

    /// Right-continuous lookup of `r(t)`.
    pub fn mode_at(&self, t: f64) -> Result<usize, ChainError> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(ChainError::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.modes[self.segment_index(t)])
    }

    fn segment_index(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t) - 1
    }

    /// Fraction of `[0, horizon)` spent in each of `n_states` modes.
    pub fn occupation_fractions(&self, n_states: usize) -> Vec<f64> {
        let mut time = vec![0.0; n_states];
        for (k, &mode) in self.modes.iter().enumerate() {
            let end = self.jump_times.get(k + 1).copied().unwrap_or(self.horizon);
            time[mode] += end - self.jump_times[k];
        }
        time.iter().map(|s| s / self.horizon).collect()
    }

    /// CSV with header `t_jump,mode`; modes are written 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_jump,mode")?;
        for (t, m) in self.jump_times.iter().zip(&self.modes) {
            writeln!(out, "{t:.16e},{}", m + 1)?;
        }
        Ok(())
    }
}

/// Sequential right-continuous lookup for monotone query times.
///
/// Queries at or past the horizon return the last mode.
#[derive(Debug)]
pub(crate) struct ModeCursor<'a> {
    path: &'a ModePath,
    segment: usize,
}

impl<'a> ModeCursor<'a> {
    pub(crate) fn new(path: &'a ModePath) -> Self {
        Self { path, segment: 0 }
    }

    pub(crate) fn advance_to(&mut self, t: f64) -> usize {
        let times = &self.path.jump_times;
        while self.segment + 1 < times.len() && times[self.segment + 1] <= t {
            self.segment += 1;
        }
        self.path.modes[self.segment]
    }
}
