use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use switchstab::designer::{
    design_nl_stable, ControlGains, DesignError, DesignOptions, DesignReport, NonlinearBounds,
};
use switchstab::estimator::{
    estimate_as_exponent, estimate_ms_exponent, run_ensemble, EstimatorError,
};
use switchstab::simulator::{simulate_path, SimError};
use switchstab::{
    ControlLaw, ExponentEstimate, GeneratorMatrix, LambdaVariant, PolynomialModel, SimConfig,
};

use crate::config::RunConfig;
use crate::{Cli, CliError};

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    RunConfig::load(path)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::GridMisaligned { .. } => CliError::Grid(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

fn est_err(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::Sim(s) => sim_err(s),
        EstimatorError::AllPathsBlewUp { .. }
        | EstimatorError::NonpositiveCurve { .. }
        | EstimatorError::NoUsablePaths => CliError::Degenerate(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

/// Applies `--snap-to-grid`; the returned flag says whether `tau0` moved.
fn prepare_law(cli: &Cli, law: Option<ControlLaw>, dt: f64) -> (Option<ControlLaw>, bool) {
    match law {
        Some(l) if cli.snap_to_grid => {
            let (snapped, moved) = l.snapped_to_grid(dt);
            if moved {
                eprintln!(
                    "switchstab: tau0 snapped from {:e} to {:e}",
                    l.tau0, snapped.tau0
                );
            }
            (Some(snapped), moved)
        }
        other => (other, false),
    }
}

pub fn design(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let g = cfg.generator()?;
    let gains = cfg.gains()?;
    let opts = cfg.design_options(cli.variant.map(Into::into));
    let result =
        switchstab::designer::design(cfg.scenario()?, &g, &gains, cfg.bounds()?, cfg.sigma, &opts);
    let report = match &result {
        Ok(r) => r,
        Err(e) => match e.report() {
            Some(r) => r,
            None => return Err(CliError::Config(e.to_string())),
        },
    };
    print_json(report)?;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("design_report.json"), report)?;
    }
    match result {
        Ok(_) => Ok(()),
        Err(e) => Err(CliError::Hypothesis(e.to_string())),
    }
}

#[derive(Serialize)]
struct PathEntry {
    path_index: u64,
    file: String,
    blowup_time: Option<f64>,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    n_paths: usize,
    dt: f64,
    horizon: f64,
    x0: Vec<f64>,
    i0: usize,
    law: Option<ControlLaw>,
    tau0_snapped: bool,
    paths: Vec<PathEntry>,
    flags: Vec<String>,
}

pub fn simulate(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let g = cfg.generator()?;
    let model = cfg.model()?;
    let sim = cfg.sim_config(cli.seed)?;
    let n_paths = cfg.sim()?.n_paths;
    let (law, snapped) = prepare_law(cli, cfg.law()?, sim.dt);
    let dir = out_dir(cli)?;
    let mut paths = Vec::with_capacity(n_paths);
    let mut flags = Vec::new();
    for p in 0..n_paths as u64 {
        let tr = simulate_path(&model, &g, law.as_ref(), &sim, p).map_err(sim_err)?;
        let file = format!("path_{p:04}.csv");
        let mut w = BufWriter::new(File::create(dir.join(&file))?);
        tr.write_csv(&mut w)?;
        w.flush()?;
        if tr.blew_up() {
            flags.push(format!("blowup:path_{p:04}"));
        }
        paths.push(PathEntry {
            path_index: p,
            file,
            blowup_time: tr.blowup_time,
        });
    }
    if snapped {
        flags.push("tau0_snapped".into());
    }
    let manifest = Manifest {
        seed: sim.seed,
        n_paths,
        dt: sim.dt,
        horizon: sim.horizon,
        x0: sim.x0.clone(),
        i0: sim.i0 + 1,
        law,
        tau0_snapped: snapped,
        paths,
        flags,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    eprintln!("switchstab: wrote {n_paths} paths to {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct ExponentReport {
    ms: Vec<ExponentEstimate>,
    #[serde(rename = "as")]
    almost_sure: Option<ExponentEstimate>,
    seed: u64,
    n_paths: usize,
    n_blowups: usize,
    tau0_snapped: bool,
}

pub fn estimate(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let g = cfg.generator()?;
    let model = cfg.model()?;
    let sim = cfg.sim_config(cli.seed)?;
    let section = cfg.sim()?;
    let (law, snapped) = prepare_law(cli, cfg.law()?, sim.dt);
    let stats = run_ensemble(
        &model,
        &g,
        law.as_ref(),
        &sim,
        section.n_paths,
        &section.q_list,
        cli.threads,
    )
    .map_err(est_err)?;
    let dir = out_dir(cli)?;
    let mut w = BufWriter::new(File::create(dir.join("moments.csv"))?);
    stats.write_moments_csv(&mut w)?;
    w.flush()?;
    let ms = section
        .q_list
        .iter()
        .map(|&q| estimate_ms_exponent(&stats, q, section.window))
        .collect::<Result<Vec<_>, _>>()
        .map_err(est_err)?;
    let almost_sure = match estimate_as_exponent(&stats) {
        Ok(e) => Some(e),
        Err(EstimatorError::NoUsablePaths) => None,
        Err(e) => return Err(est_err(e)),
    };
    let report = ExponentReport {
        ms,
        almost_sure,
        seed: sim.seed,
        n_paths: stats.n_paths,
        n_blowups: stats.n_blowups,
        tau0_snapped: snapped,
    };
    write_json(&dir.join("exponents.json"), &report)?;
    print_json(&report)
}

struct Row {
    label: String,
    computed: f64,
    expected: Option<f64>,
    tol: Tol,
    pass: Option<bool>,
}

#[derive(Clone, Copy)]
enum Tol {
    Abs(f64),
    Rel(f64),
    AtMost(f64),
    Info,
}

impl Row {
    fn new(label: &str, computed: f64, expected: Option<f64>, tol: Tol) -> Self {
        let pass = match (tol, expected) {
            (Tol::Abs(t), Some(e)) => Some((computed - e).abs() <= t),
            (Tol::Rel(t), Some(e)) => Some((computed - e).abs() <= t * e.abs()),
            (Tol::AtMost(b), _) => Some(computed <= b),
            _ => None,
        };
        Self {
            label: label.into(),
            computed,
            expected,
            tol,
            pass,
        }
    }

    fn render(&self) -> String {
        let expected = self
            .expected
            .map(|e| format!("{e:.6e}"))
            .unwrap_or_else(|| "-".into());
        let deviation = match self.expected {
            Some(e) if e != 0.0 => format!("{:+.3e}", (self.computed - e) / e.abs()),
            _ => "-".into(),
        };
        let tol = match self.tol {
            Tol::Abs(t) => format!("abs {t:.0e}"),
            Tol::Rel(t) => format!("rel {t:.0e}"),
            Tol::AtMost(b) => format!("<= {b:e}"),
            Tol::Info => "info".into(),
        };
        let status = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        format!(
            "{:<34} {:>16.9e} {:>14} {:>11} {:>10}  {status}",
            self.label, self.computed, expected, deviation, tol
        )
    }
}

fn example_generator() -> GeneratorMatrix {
    GeneratorMatrix::new(&[vec![-10.0, 10.0], vec![20.0, -20.0]]).expect("valid generator")
}

fn example_bounds() -> NonlinearBounds {
    NonlinearBounds {
        k: 3.0,
        q1: 3.0,
        q2: 1.5,
        p: 7.0,
        theta: 4.0,
        a: vec![2.5, 4.0],
        b: vec![1.5, 2.0],
        c: 0.0,
    }
}

struct Case {
    name: &'static str,
    alpha: [f64; 2],
    sigma: f64,
    tau: f64,
    tau0: f64,
    tau_prime: (f64, f64),
    zeta_prime: (f64, f64),
    zeta_op: f64,
    ms: f64,
    almost_sure: f64,
    quoted_lag_bound: f64,
}

const CASES: [Case; 2] = [
    Case {
        name: "case 1",
        alpha: [6.0, 6.0],
        sigma: 2.0,
        tau: 1e-4,
        tau0: 1.7e-4,
        tau_prime: (9.6e-3, 0.01),
        zeta_prime: (3.265, 5e-3),
        zeta_op: 5.8345,
        ms: -3.8345,
        almost_sure: -1.9172,
        quoted_lag_bound: 2.78e-4,
    },
    Case {
        name: "case 2",
        alpha: [9.0, 0.0],
        sigma: 0.5,
        tau: 3e-6,
        tau0: 2.8e-6,
        tau_prime: (3.73e-3, 0.01),
        zeta_prime: (0.5626, 0.01),
        zeta_op: 1.0747,
        ms: -0.5747,
        almost_sure: -0.2874,
        quoted_lag_bound: 5.83e-6,
    },
];

fn case_design(case: &Case, variant: LambdaVariant) -> Result<DesignReport, DesignError> {
    let opts = DesignOptions {
        variant,
        tau: Some(case.tau),
        tau0: Some(case.tau0),
        x0_norm_sq: 1.0,
    };
    let gains = ControlGains::new(case.alpha.to_vec())?;
    design_nl_stable(
        &example_generator(),
        &gains,
        &example_bounds(),
        case.sigma,
        &opts,
    )
}

fn case_rows(case: &Case, variant: LambdaVariant, rows: &mut Vec<Row>) -> Option<DesignReport> {
    let r = match case_design(case, variant) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("switchstab: {} design failed: {e}", case.name);
            rows.push(Row::new(
                &format!("{} design", case.name),
                f64::NAN,
                None,
                Tol::AtMost(0.0),
            ));
            return e.report().cloned();
        }
    };
    let n = case.name;
    let nan = f64::NAN;
    rows.push(Row::new(
        &format!("{n} τ′"),
        r.tau_sampling_max.unwrap_or(nan),
        Some(case.tau_prime.0),
        Tol::Rel(case.tau_prime.1),
    ));
    rows.push(Row::new(
        &format!("{n} ζ(τ′)"),
        r.zeta.unwrap_or(nan),
        Some(case.zeta_prime.0),
        Tol::Rel(case.zeta_prime.1),
    ));
    let zeta_op = r
        .operating_point
        .as_ref()
        .and_then(|o| o.spectral)
        .map_or(nan, |z| z.zeta);
    rows.push(Row::new(
        &format!("{n} ζ(τ={:e})", case.tau),
        zeta_op,
        Some(case.zeta_op),
        Tol::Rel(1e-3),
    ));
    rows.push(Row::new(
        &format!("{n} mean-square exponent"),
        r.ms_exponent(2.0).unwrap_or(nan),
        Some(case.ms),
        Tol::Rel(1e-3),
    ));
    rows.push(Row::new(
        &format!("{n} almost-sure exponent"),
        r.as_exponent.unwrap_or(nan),
        Some(case.almost_sure),
        Tol::Rel(1e-3),
    ));
    let worst = r.thresholds.iter().fold(0.0f64, |a, t| a.max(t.residual));
    rows.push(Row::new(
        &format!("{n} threshold residual"),
        worst,
        None,
        Tol::AtMost(1e-10),
    ));
    rows.push(Row::new(
        &format!("{n} τ+τ0 bound"),
        r.tau_plus_lag_max.unwrap_or(nan),
        Some(case.quoted_lag_bound),
        Tol::Info,
    ));
    Some(r)
}

#[allow(clippy::too_many_arguments)]
fn ensemble_rows(
    label: &str,
    law: ControlLaw,
    cfg: SimConfig,
    n_paths: usize,
    window: (f64, f64),
    limits: (f64, f64),
    threads: usize,
    rows: &mut Vec<Row>,
) -> Result<(), CliError> {
    let start = Instant::now();
    let stats = run_ensemble(
        &PolynomialModel::two_mode_example(),
        &example_generator(),
        Some(&law),
        &cfg,
        n_paths,
        &[2.0],
        threads,
    )
    .map_err(est_err)?;
    let est = estimate_ms_exponent(&stats, 2.0, Some(window)).map_err(est_err)?;
    let end = *stats.curve(2.0).and_then(|c| c.last()).unwrap_or(&f64::NAN);
    rows.push(Row::new(
        &format!("{label} slope"),
        est.slope,
        None,
        Tol::AtMost(limits.0),
    ));
    rows.push(Row::new(
        &format!("{label} E|x(T)|²"),
        end,
        None,
        Tol::AtMost(limits.1),
    ));
    rows.push(Row::new(
        &format!("{label} blowups"),
        stats.n_blowups as f64,
        None,
        Tol::AtMost(0.0),
    ));
    eprintln!(
        "switchstab: {label} took {:.1}s",
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn reproduce_example(cli: &Cli) -> Result<(), CliError> {
    let variant: LambdaVariant = cli.variant.map(Into::into).unwrap_or_default();
    let g = example_generator();
    let pi = g
        .stationary_distribution()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let kappa = switchstab::spectral::kappa(&g, &[6.5, -4.0])
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut rows = vec![
        Row::new("π1", pi.as_slice()[0], Some(2.0 / 3.0), Tol::Abs(1e-12)),
        Row::new("π2", pi.as_slice()[1], Some(1.0 / 3.0), Tol::Abs(1e-12)),
        Row::new("‖πΓ‖∞", pi.residual(&g), None, Tol::AtMost(1e-12)),
        Row::new("κ for μ=(6.5,−4)", kappa, Some(3.4615), Tol::Abs(1e-3)),
        Row::new(
            "πA",
            pi.dot(&example_bounds().a),
            Some(3.0),
            Tol::Abs(1e-12),
        ),
    ];
    let mut reports = Vec::new();
    for case in &CASES {
        reports.push(case_rows(case, variant, &mut rows));
    }

    let seed = cli.seed.unwrap_or(1);
    let cfg = |dt: f64, stride: usize| SimConfig {
        dt,
        horizon: 4.0,
        x0: vec![1.0],
        i0: 1,
        seed,
        record_stride: stride,
    };
    let law1 = ControlLaw::new(vec![6.0, 6.0], 1e-4, 1.7e-4).map_err(sim_err)?;
    ensemble_rows(
        "case 1 ensemble",
        law1,
        cfg(1e-5, 1000),
        200,
        (1.0, 4.0),
        (-1.5, 1e-2),
        cli.threads,
        &mut rows,
    )?;
    if cli.full {
        eprintln!(
            "switchstab: --full runs case 2 at dt = 2e-7 (2e7 steps per path); expect a long run"
        );
        let law2 = ControlLaw::new(vec![9.0, 0.0], 3e-6, 2.8e-6).map_err(sim_err)?;
        ensemble_rows(
            "case 2 ensemble",
            law2,
            cfg(2e-7, 50_000),
            100,
            (1.0, 4.0),
            (0.0, 1.0),
            cli.threads,
            &mut rows,
        )?;
    } else {
        eprintln!("switchstab: case 2 ensemble skipped; pass --full to run it");
    }

    let mut out = io::stdout().lock();
    writeln!(out, "variant: {variant:?}")?;
    writeln!(
        out,
        "{:<34} {:>16} {:>14} {:>11} {:>10}  status",
        "quantity", "computed", "expected", "rel.dev", "tolerance"
    )?;
    for row in &rows {
        writeln!(out, "{}", row.render())?;
    }
    let failed = rows.iter().filter(|r| r.pass == Some(false)).count();
    let checked = rows.iter().filter(|r| r.pass.is_some()).count();
    writeln!(out, "{} of {checked} checks passed", checked - failed)?;
    drop(out);

    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        for (case, report) in CASES.iter().zip(&reports) {
            if let Some(r) = report {
                write_json(
                    &dir.join(format!("{}_report.json", case.name.replace(' ', "_"))),
                    r,
                )?;
            }
        }
    }
    Ok(())
}
