//! Euler–Maruyama integration of the switching diffusion, with or without the
//! delayed sampled feedback `u = −α(r(ν(t)−τ0))·x(ν(t)−τ0)`.
//!
//! The mode process is sampled exactly (exponential holding times) and read
//! right-continuously at the left end of every step. Before time zero the
//! state and mode are held at `(x0, i0)`.

use std::io::{self, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, GeneratorMatrix, ModeCursor, ModePath};
use crate::model::SwitchingModel;
use crate::rng::{self, StreamRole};
use crate::tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{name} = {value} is not an integer multiple of dt = {dt}")]
    GridMisaligned {
        name: &'static str,
        value: f64,
        dt: f64,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Last sampling instant `ν(t) = ⌊t/τ⌋τ`.
///
/// Times within `1e-9·τ` of a multiple of `τ` are treated as that multiple.
pub fn nu(t: f64, tau: f64) -> f64 {
    let ratio = t / tau;
    let nearest = ratio.round();
    let k = if (t - nearest * tau).abs() <= tolerances::GRID_ALIGNMENT_REL * tau {
        nearest
    } else {
        ratio.floor()
    };
    k * tau
}

/// Number of `dt` steps in `value`, if it is an integer within tolerance.
fn grid_steps(value: f64, dt: f64) -> Option<usize> {
    let ratio = value / dt;
    let n = ratio.round();
    ((ratio - n).abs() <= tolerances::GRID_ALIGNMENT_REL * ratio.max(1.0)).then_some(n as usize)
}

/// Delayed sampled feedback with gains `α`, sampling interval `τ` and lag `τ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    pub alpha: Vec<f64>,
    pub tau: f64,
    pub tau0: f64,
}

impl ControlLaw {
    pub fn new(alpha: Vec<f64>, tau: f64, tau0: f64) -> Result<Self, SimError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "tau must be positive, got {tau}"
            )));
        }
        if !(tau0 >= 0.0) || !tau0.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "tau0 must be nonnegative, got {tau0}"
            )));
        }
        if alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(SimError::InvalidConfig(
                "gains must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { alpha, tau, tau0 })
    }

    /// `n0 = ⌊τ0/τ⌋`.
    pub fn n0(&self) -> u64 {
        (nu(self.tau0, self.tau) / self.tau).round() as u64
    }

    /// `δ = (n0+1)τ − τ0`, in `(0, τ]`.
    pub fn delta(&self) -> f64 {
        (self.n0() + 1) as f64 * self.tau - self.tau0
    }

    /// Copy with `τ0` rounded down to the `dt` grid. The flag reports whether
    /// anything changed.
    pub fn snapped_to_grid(&self, dt: f64) -> (Self, bool) {
        if grid_steps(self.tau0, dt).is_some() {
            return (self.clone(), false);
        }
        let steps = (self.tau0 / dt).floor();
        let snapped = Self {
            tau0: steps * dt,
            ..self.clone()
        };
        (snapped, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Initial mode, zero-based.
    pub i0: usize,
    pub seed: u64,
    pub record_stride: usize,
}

impl SimConfig {
    /// Number of Euler steps covering the horizon.
    pub fn n_steps(&self) -> usize {
        let ratio = self.horizon / self.dt;
        match grid_steps(self.horizon, self.dt) {
            Some(n) => n,
            None => ratio.ceil() as usize,
        }
    }

    fn validate<M: SwitchingModel + ?Sized>(
        &self,
        model: &M,
        generator: &GeneratorMatrix,
    ) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be positive".into());
        }
        if self.x0.len() != model.dim_x() || self.x0.iter().any(|v| !v.is_finite()) {
            return bad(format!("x0 must hold {} finite values", model.dim_x()));
        }
        if model.n_modes() != generator.n_states() {
            return bad(format!(
                "model has {} modes, generator has {}",
                model.n_modes(),
                generator.n_states()
            ));
        }
        if self.i0 >= generator.n_states() {
            return bad(format!("initial mode {} out of range", self.i0 + 1));
        }
        Ok(())
    }
}

/// What the integrator exposes at grid index `k`.
#[derive(Debug)]
pub struct StepView<'a> {
    pub k: usize,
    pub t: f64,
    pub x: &'a [f64],
    pub mode: usize,
    /// Control applied over `[t_k, t_{k+1})`.
    pub u: &'a [f64],
    /// Grid index of the observation behind `u`; `None` for the initial
    /// segment or an uncontrolled run.
    pub obs_index: Option<usize>,
    pub x_obs: &'a [f64],
    pub mode_obs: usize,
    /// Brownian increment used for the step out of `t_k`; empty at the last point.
    pub dw: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    /// Last grid index reached with a finite state.
    pub last_index: usize,
    /// Time at which the state left the finite range.
    pub blowup_time: Option<f64>,
    pub mode_path: ModePath,
}

struct Delay {
    steps_tau: usize,
    steps_tau0: usize,
    depth: usize,
}

fn delay_for(law: &ControlLaw, cfg: &SimConfig, n_modes: usize) -> Result<Delay, SimError> {
    if law.alpha.len() != n_modes {
        return Err(SimError::InvalidConfig(format!(
            "{} gains for {n_modes} modes",
            law.alpha.len()
        )));
    }
    let steps_tau =
        grid_steps(law.tau, cfg.dt)
            .filter(|&s| s > 0)
            .ok_or(SimError::GridMisaligned {
                name: "tau",
                value: law.tau,
                dt: cfg.dt,
            })?;
    let steps_tau0 = grid_steps(law.tau0, cfg.dt).ok_or(SimError::GridMisaligned {
        name: "tau0",
        value: law.tau0,
        dt: cfg.dt,
    })?;
    Ok(Delay {
        steps_tau,
        steps_tau0,
        depth: steps_tau + steps_tau0 + 1,
    })
}

/// Run one path, calling `on_step` at every grid index `0..=n_steps`.
///
/// Streams are keyed by `(cfg.seed, path_index)`, so the result does not
/// depend on which thread runs it.
pub fn simulate_with<M, F>(
    model: &M,
    generator: &GeneratorMatrix,
    law: Option<&ControlLaw>,
    cfg: &SimConfig,
    path_index: u64,
    mut on_step: F,
) -> Result<PathOutcome, SimError>
where
    M: SwitchingModel + ?Sized,
    F: FnMut(&StepView),
{
    cfg.validate(model, generator)?;
    let delay = law
        .map(|l| delay_for(l, cfg, generator.n_states()))
        .transpose()?;
    let n = model.dim_x();
    let m = model.dim_w();
    let n_steps = cfg.n_steps();
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();

    let mut chain_rng = rng::stream(cfg.seed, path_index, StreamRole::Chain);
    let mut noise_rng = rng::stream(cfg.seed, path_index, StreamRole::Brownian);
    let horizon = n_steps as f64 * dt;
    let mode_path = generator.sample_path(cfg.i0, horizon, &mut chain_rng)?;
    let mut cursor = ModeCursor::new(&mode_path);

    let depth = delay.as_ref().map_or(1, |d| d.depth);
    let mut ring_x = vec![0.0; depth * n];
    let mut ring_mode = vec![0usize; depth];

    let mut x = cfg.x0.clone();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * m];
    let mut u = vec![0.0; n];
    let mut dw = vec![0.0; m];
    let mut x_obs = cfg.x0.clone();
    let mut blowup_time = None;
    let mut last_index = 0;

    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let mode = cursor.advance_to(t);
        let slot = k % depth;
        ring_x[slot * n..(slot + 1) * n].copy_from_slice(&x);
        ring_mode[slot] = mode;
        last_index = k;

        let mut obs_index = None;
        let mut mode_obs = cfg.i0;
        let mut gain = 0.0;
        if let (Some(law), Some(d)) = (law, delay.as_ref()) {
            let sampled = k - k % d.steps_tau;
            if sampled >= d.steps_tau0 {
                let j = sampled - d.steps_tau0;
                let s = j % depth;
                x_obs.copy_from_slice(&ring_x[s * n..(s + 1) * n]);
                mode_obs = ring_mode[s];
                obs_index = Some(j);
            } else {
                x_obs.copy_from_slice(&cfg.x0);
            }
            gain = law.alpha[mode_obs];
        }
        for (ui, xo) in u.iter_mut().zip(&x_obs) {
            *ui = if gain == 0.0 { 0.0 } else { -gain * xo };
        }

        if k == n_steps {
            on_step(&StepView {
                k,
                t,
                x: &x,
                mode,
                u: &u,
                obs_index,
                x_obs: &x_obs,
                mode_obs,
                dw: &[],
            });
            break;
        }

        model.drift(&x, mode, t, &mut f);
        model.diffusion(&x, mode, t, &mut g);
        for w in dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            *w = z * sqrt_dt;
        }
        on_step(&StepView {
            k,
            t,
            x: &x,
            mode,
            u: &u,
            obs_index,
            x_obs: &x_obs,
            mode_obs,
            dw: &dw,
        });

        let mut blown = false;
        for i in 0..n {
            let mut drift = f[i];
            if gain != 0.0 {
                drift += u[i];
            }
            let noise: f64 = (0..m).map(|j| g[i * m + j] * dw[j]).sum();
            x[i] += drift * dt + noise;
            if !x[i].is_finite() || x[i].abs() > tolerances::BLOWUP_THRESHOLD {
                blown = true;
            }
        }
        if blown {
            blowup_time = Some((k + 1) as f64 * dt);
            break;
        }
    }

    Ok(PathOutcome {
        last_index,
        blowup_time,
        mode_path,
    })
}

/// Recorded path of the state, mode and applied control.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major, `dim` values per recorded point.
    pub states: Vec<f64>,
    pub modes: Vec<usize>,
    pub controls: Vec<f64>,
    pub blowup_time: Option<f64>,
    pub mode_path: ModePath,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.dim..(k + 1) * self.dim]
    }

    pub fn blew_up(&self) -> bool {
        self.blowup_time.is_some()
    }

    /// CSV with header `t,mode,x1..xn,u1..un`; modes 1-based, floats with 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = String::from("t,mode");
        for i in 1..=self.dim {
            header.push_str(&format!(",x{i}"));
        }
        for i in 1..=self.dim {
            header.push_str(&format!(",u{i}"));
        }
        writeln!(out, "{header}")?;
        for k in 0..self.len() {
            write!(out, "{:.16e},{}", self.times[k], self.modes[k] + 1)?;
            for v in self.state(k).iter().chain(self.control(k)) {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Run one path and keep every `record_stride`-th grid point.
pub fn simulate_path<M: SwitchingModel + ?Sized>(
    model: &M,
    generator: &GeneratorMatrix,
    law: Option<&ControlLaw>,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Trajectory, SimError> {
    let n = model.dim_x();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut modes = Vec::new();
    let mut controls = Vec::new();
    let stride = cfg.record_stride.max(1);
    let outcome = simulate_with(model, generator, law, cfg, path_index, |s| {
        if s.k % stride == 0 {
            times.push(s.t);
            states.extend_from_slice(s.x);
            modes.push(s.mode);
            controls.extend_from_slice(s.u);
        }
    })?;
    Ok(Trajectory {
        dim: n,
        times,
        states,
        modes,
        controls,
        blowup_time: outcome.blowup_time,
        mode_path: outcome.mode_path,
    })
}

pub fn simulate_uncontrolled<M: SwitchingModel + ?Sized>(
    model: &M,
    generator: &GeneratorMatrix,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    simulate_path(model, generator, None, cfg, 0)
}

pub fn simulate_controlled<M: SwitchingModel + ?Sized>(
    model: &M,
    generator: &GeneratorMatrix,
    law: &ControlLaw,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    simulate_path(model, generator, Some(law), cfg, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PolynomialModel, ScalarFnModel};

    fn one_state() -> GeneratorMatrix {
        GeneratorMatrix::new(&[vec![0.0]]).unwrap()
    }

    fn cfg(dt: f64, horizon: f64, x0: f64) -> SimConfig {
        SimConfig {
            dt,
            horizon,
            x0: vec![x0],
            i0: 0,
            seed: 7,
            record_stride: 1,
        }
    }

    #[test]
    fn nu_floors_to_grid() {
        assert_eq!(nu(0.0, 0.3), 0.0);
        assert_eq!(nu(0.9, 0.25), 0.75);
        assert_eq!(nu(0.75, 0.25), 0.75);
        let tau = 0.1;
        assert_eq!(nu(3.0 * tau, tau), 3.0 * tau);
        assert_eq!(nu(nu(0.77, tau), tau), nu(0.77, tau));
    }

    #[test]
    fn law_offsets() {
        let law = ControlLaw::new(vec![1.0], 1e-4, 1.7e-4).unwrap();
        assert_eq!(law.n0(), 1);
        assert!((law.delta() - 0.3e-4).abs() < 1e-15);
        let law = ControlLaw::new(vec![1.0], 1e-4, 0.0).unwrap();
        assert_eq!(law.delta(), 1e-4);
        let (snap, changed) = ControlLaw::new(vec![1.0], 1e-4, 2.5e-6)
            .unwrap()
            .snapped_to_grid(1e-6);
        assert!(changed);
        assert!((snap.tau0 - 2e-6).abs() < 1e-18);
    }

    #[test]
    fn zero_model_is_constant() {
        let m = PolynomialModel::zero(1);
        let tr = simulate_uncontrolled(&m, &one_state(), &cfg(0.01, 1.0, 2.5)).unwrap();
        assert_eq!(tr.len(), 101);
        assert!(tr.states.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn pure_decay_matches_geometric_recursion() {
        let m = ScalarFnModel::new(1, |x, _, _| -x, |_, _, _| 0.0);
        let tr = simulate_uncontrolled(&m, &one_state(), &cfg(1e-3, 1.0, 1.0)).unwrap();
        let end = *tr.states.last().unwrap();
        assert!((end - 0.999f64.powi(1000)).abs() < 1e-12);
        assert!((end - (-1f64).exp()).abs() / (-1f64).exp() < 1e-3);
    }

    #[test]
    fn unit_lag_feedback_recursion() {
        let m = PolynomialModel::zero(1);
        let dt = 1e-3;
        let a = 2.0;
        let law = ControlLaw::new(vec![a], dt, 0.0).unwrap();
        let tr = simulate_controlled(&m, &one_state(), &law, &cfg(dt, 0.1, 1.0)).unwrap();
        for k in 0..tr.len() {
            let expected = (1.0 - a * dt).powi(k as i32);
            assert!((tr.state(k)[0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let m = PolynomialModel::zero(1);
        let law = ControlLaw::new(vec![1.0], 1e-3, 2.5e-4).unwrap();
        let err = simulate_controlled(&m, &one_state(), &law, &cfg(1e-3, 0.1, 1.0)).unwrap_err();
        assert!(matches!(err, SimError::GridMisaligned { name: "tau0", .. }));
        let law = ControlLaw::new(vec![1.0], 1.5e-3, 0.0).unwrap();
        let err = simulate_controlled(&m, &one_state(), &law, &cfg(1e-3, 0.1, 1.0)).unwrap_err();
        assert!(matches!(err, SimError::GridMisaligned { name: "tau", .. }));
    }

    #[test]
    fn blowup_truncates() {
        let m = ScalarFnModel::new(1, |x, _, _| x * x, |_, _, _| 0.0);
        let tr = simulate_uncontrolled(&m, &one_state(), &cfg(1e-2, 10.0, 1.0)).unwrap();
        assert!(tr.blew_up());
        assert!(tr.len() < 1001);
        assert!(tr.states.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn csv_layout() {
        let m = PolynomialModel::zero(1);
        let mut c = cfg(0.5, 1.0, 1.0);
        c.record_stride = 1;
        let tr = simulate_uncontrolled(&m, &one_state(), &c).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,mode,x1,u1"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[1], "1");
        assert_eq!(row[2].parse::<f64>().unwrap(), 1.0);
        assert_eq!(text.lines().count(), 4);
    }
}
