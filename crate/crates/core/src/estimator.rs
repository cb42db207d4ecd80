//! Monte Carlo ensembles: empirical moment curves, exponent fits and
//! ergodicity checks.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::GeneratorMatrix;
use crate::model::SwitchingModel;
use crate::rng::{self, StreamRole};
use crate::simulator::{simulate_with, ControlLaw, SimConfig, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("all {n_paths} paths blew up")]
    AllPathsBlewUp { n_paths: usize },
    #[error(
        "moment curve q = {q} is not positive; it first reaches zero at t = {first_zero_time}"
    )]
    NonpositiveCurve { q: f64, first_zero_time: f64 },
    #[error("no path has a finite nonzero terminal state")]
    NoUsablePaths,
    #[error("moment order q = {0} was not recorded")]
    MissingMoment(f64),
    #[error("window ({0}, {1}) holds fewer than two grid points")]
    InvalidWindow(f64, f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Empirical moments `𝔼̂|x(t)|^q` over the surviving paths of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub q_list: Vec<f64>,
    /// One curve per entry of `q_list`, each as long as `times`.
    pub moment_curves: Vec<Vec<f64>>,
    /// Paths still finite at each recorded time.
    pub alive: Vec<usize>,
    /// `(1/T)·log|x(T)|` for every path that stayed finite and nonzero.
    pub per_path_terminal_rates: Vec<f64>,
    pub blowup_times: Vec<f64>,
    pub horizon: f64,
    pub n_paths: usize,
    pub n_blowups: usize,
}

impl EnsembleStats {
    pub fn curve(&self, q: f64) -> Option<&[f64]> {
        self.q_list
            .iter()
            .position(|&p| p == q)
            .map(|i| self.moment_curves[i].as_slice())
    }

    /// CSV with header `t,q=2,q=4,...`.
    pub fn write_moments_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "t")?;
        for q in &self.q_list {
            write!(out, ",q={q}")?;
        }
        writeln!(out)?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t:.16e}")?;
            for c in &self.moment_curves {
                write!(out, ",{:.16e}", c[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    /// Moment order; 1 for the pathwise estimate.
    pub q: f64,
    pub slope: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub n_paths: usize,
    pub n_blowups: usize,
}

struct PathSummary {
    norms: Vec<f64>,
    blowup_time: Option<f64>,
    terminal_rate: Option<f64>,
}

/// Sum in a fixed binary tree over the index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Simulate `n_paths` independent paths and average `|x|^q` at the recorded
/// grid points.
///
/// `threads = 0` uses rayon's default pool size. Results do not depend on
/// the thread count: each path owns its random streams and sums run in a
/// fixed order.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble<M: SwitchingModel + ?Sized>(
    model: &M,
    generator: &GeneratorMatrix,
    law: Option<&ControlLaw>,
    cfg: &SimConfig,
    n_paths: usize,
    q_list: &[f64],
    threads: usize,
) -> Result<EnsembleStats, EstimatorError> {
    if n_paths == 0 {
        return Err(EstimatorError::InvalidArgument(
            "n_paths must be at least 1".into(),
        ));
    }
    if q_list.is_empty() || q_list.iter().any(|q| !(*q >= 1.0) || !q.is_finite()) {
        return Err(EstimatorError::InvalidArgument(
            "q_list must be nonempty with entries at least 1".into(),
        ));
    }
    let stride = cfg.record_stride.max(1);
    let n_steps = cfg.n_steps();
    if !n_steps.is_multiple_of(stride) {
        return Err(EstimatorError::InvalidArgument(format!(
            "record_stride {stride} does not divide the {n_steps} steps"
        )));
    }
    let horizon = n_steps as f64 * cfg.dt;

    let run = |path: usize| -> Result<PathSummary, SimError> {
        let mut norms = Vec::with_capacity(n_steps / stride + 1);
        let mut last = f64::NAN;
        let outcome = simulate_with(model, generator, law, cfg, path as u64, |s| {
            if s.k % stride == 0 {
                let r = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
                norms.push(r);
                last = r;
            }
        })?;
        let terminal_rate = match outcome.blowup_time {
            None if last > 0.0 => Some(last.ln() / horizon),
            _ => None,
        };
        Ok(PathSummary {
            norms,
            blowup_time: outcome.blowup_time,
            terminal_rate,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EstimatorError::InvalidArgument(e.to_string()))?;
    let paths: Vec<PathSummary> = pool.install(|| {
        (0..n_paths)
            .into_par_iter()
            .map(run)
            .collect::<Result<Vec<_>, _>>()
    })?;

    let n_blowups = paths.iter().filter(|p| p.blowup_time.is_some()).count();
    if n_blowups == n_paths {
        return Err(EstimatorError::AllPathsBlewUp { n_paths });
    }
    let n_points = n_steps / stride + 1;
    let times: Vec<f64> = (0..n_points)
        .map(|k| (k * stride) as f64 * cfg.dt)
        .collect();
    let alive: Vec<usize> = (0..n_points)
        .map(|k| paths.iter().filter(|p| p.norms.len() > k).count())
        .collect();

    let mut buf = Vec::with_capacity(n_paths);
    let moment_curves = q_list
        .iter()
        .map(|&q| {
            (0..n_points)
                .map(|k| {
                    buf.clear();
                    buf.extend(
                        paths
                            .iter()
                            .filter_map(|p| p.norms.get(k))
                            .map(|r| r.powf(q)),
                    );
                    pairwise_sum(&buf) / buf.len() as f64
                })
                .collect()
        })
        .collect();

    Ok(EnsembleStats {
        times,
        q_list: q_list.to_vec(),
        moment_curves,
        alive,
        per_path_terminal_rates: paths.iter().filter_map(|p| p.terminal_rate).collect(),
        blowup_times: paths.iter().filter_map(|p| p.blowup_time).collect(),
        horizon,
        n_paths,
        n_blowups,
    })
}

/// Ordinary least squares `y = a + b·t`; returns `(b, stderr(b))`.
fn ols(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|v| (v - tm) * (v - tm)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sxy / sxx;
    if t.len() < 3 {
        return (slope, 0.0);
    }
    let ssr: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - ym - slope * (a - tm);
            r * r
        })
        .sum();
    (slope, (ssr / (n - 2.0) / sxx).sqrt())
}

/// Slope of `log 𝔼̂|x(t)|^q` over `window`, default `[T/4, T]`.
pub fn estimate_ms_exponent(
    stats: &EnsembleStats,
    q: f64,
    window: Option<(f64, f64)>,
) -> Result<ExponentEstimate, EstimatorError> {
    let curve = stats.curve(q).ok_or(EstimatorError::MissingMoment(q))?;
    let (lo, hi) = window.unwrap_or((stats.horizon / 4.0, stats.horizon));
    let slack = 1e-9 * stats.horizon.max(1.0);
    let idx: Vec<usize> = (0..stats.times.len())
        .filter(|&k| stats.times[k] >= lo - slack && stats.times[k] <= hi + slack)
        .collect();
    if idx.len() < 2 {
        return Err(EstimatorError::InvalidWindow(lo, hi));
    }
    if let Some(&k) = idx.iter().find(|&&k| !(curve[k] > 0.0)) {
        let first = (0..curve.len()).find(|&j| !(curve[j] > 0.0)).unwrap_or(k);
        return Err(EstimatorError::NonpositiveCurve {
            q,
            first_zero_time: stats.times[first],
        });
    }
    let t: Vec<f64> = idx.iter().map(|&k| stats.times[k]).collect();
    let y: Vec<f64> = idx.iter().map(|&k| curve[k].ln()).collect();
    let (slope, stderr) = ols(&t, &y);
    Ok(ExponentEstimate {
        q,
        slope,
        stderr,
        window: (lo, hi),
        n_paths: stats.n_paths,
        n_blowups: stats.n_blowups,
    })
}

/// Mean of `(1/T)·log|x(T)|` over the usable paths.
pub fn estimate_as_exponent(stats: &EnsembleStats) -> Result<ExponentEstimate, EstimatorError> {
    let rates = &stats.per_path_terminal_rates;
    if rates.is_empty() {
        return Err(EstimatorError::NoUsablePaths);
    }
    let n = rates.len() as f64;
    let mean = pairwise_sum(rates) / n;
    let stderr = if rates.len() > 1 {
        let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(ExponentEstimate {
        q: 1.0,
        slope: mean,
        stderr,
        window: (0.0, stats.horizon),
        n_paths: stats.n_paths,
        n_blowups: stats.n_blowups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralMoment {
    pub exponent: f64,
    pub value: f64,
    /// Log-slope of the curve over the last tenth of the horizon.
    pub tail_slope: f64,
    pub tail_convergent: bool,
}

/// Trapezoidal `∫₀ᵀ 𝔼̂|x(t)|^q dt` with a tail-decay diagnostic.
pub fn integral_moment(
    stats: &EnsembleStats,
    exponent: f64,
) -> Result<IntegralMoment, EstimatorError> {
    if !(exponent >= 1.0) {
        return Err(EstimatorError::InvalidArgument(format!(
            "exponent must be at least 1, got {exponent}"
        )));
    }
    let curve = stats
        .curve(exponent)
        .ok_or(EstimatorError::MissingMoment(exponent))?;
    let value = stats
        .times
        .windows(2)
        .zip(curve.windows(2))
        .map(|(t, c)| 0.5 * (t[1] - t[0]) * (c[0] + c[1]))
        .sum();
    let start = 0.9 * stats.horizon;
    let tail: Vec<usize> = (0..stats.times.len())
        .filter(|&k| stats.times[k] >= start)
        .collect();
    let (tail_slope, tail_convergent) = if tail.iter().any(|&k| !(curve[k] > 0.0)) {
        (f64::NEG_INFINITY, true)
    } else if tail.len() >= 2 {
        let t: Vec<f64> = tail.iter().map(|&k| stats.times[k]).collect();
        let y: Vec<f64> = tail.iter().map(|&k| curve[k].ln()).collect();
        let (s, _) = ols(&t, &y);
        (s, s < 0.0)
    } else {
        (0.0, false)
    };
    Ok(IntegralMoment {
        exponent,
        value,
        tail_slope,
        tail_convergent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOccupation {
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub pi: Vec<f64>,
    pub horizon: f64,
    pub per_seed: Vec<SeedOccupation>,
    pub max_deviation: f64,
}

/// Time-average occupation of each mode against `π`, one chain path per seed.
pub fn occupation_check(
    generator: &GeneratorMatrix,
    horizon: f64,
    seeds: &[u64],
) -> Result<OccupationReport, EstimatorError> {
    let pi = generator
        .stationary_distribution()
        .map_err(|e| EstimatorError::InvalidArgument(e.to_string()))?;
    let n = generator.n_states();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = rng::stream(seed, 0, StreamRole::Chain);
        let path = generator
            .sample_path(0, horizon, &mut rng)
            .map_err(|e| EstimatorError::InvalidArgument(e.to_string()))?;
        let fractions = path.occupation_fractions(n);
        let max_deviation = fractions
            .iter()
            .zip(pi.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        per_seed.push(SeedOccupation {
            seed,
            fractions,
            max_deviation,
        });
    }
    let max_deviation = per_seed.iter().map(|s| s.max_deviation).fold(0.0, f64::max);
    Ok(OccupationReport {
        pi: pi.as_slice().to_vec(),
        horizon,
        per_seed,
        max_deviation,
    })
}
