use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use switchstab::DesignReport;
use switchstab_cli::config::RunConfig;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_switchstab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn example_base() -> Value {
    json!({
        "generator": [[-10.0, 10.0], [20.0, -20.0]],
        "model": {"builtin": "two_mode"},
        "sim": {"dt": 1e-4, "horizon": 0.5, "x0": [1.0], "i0": 2, "seed": 7, "record_stride": 1, "n_paths": 2}
    })
}

#[test]
fn shipped_configs_parse() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "schema.json" {
            let schema: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
            let keys: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
            let full: Value = serde_json::from_str(
                &fs::read_to_string(configs().join("case1_design.json")).unwrap(),
            )
            .unwrap();
            for k in full.as_object().unwrap().keys() {
                assert!(keys.contains(&k), "schema lacks {k}");
            }
            continue;
        }
        RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn design_report_round_trips() {
    let cfg = configs().join("case1_design.json");
    let o = run(&["design", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: DesignReport = serde_json::from_slice(&o.stdout).unwrap();
    let again: DesignReport =
        serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(report, again);
    assert!((report.tau_sampling_max.unwrap() - 9.607e-3).abs() < 1e-5);
    let zeta = report
        .operating_point
        .as_ref()
        .unwrap()
        .spectral
        .unwrap()
        .zeta;
    assert!((zeta - 5.8345).abs() < 1e-3);
}

#[test]
fn variant_flag_overrides_config() {
    let cfg = configs().join("case2_design.json");
    let o = run(&[
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        "formula_a",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: DesignReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.variant, switchstab::LambdaVariant::FormulaA);
    assert!(report.tau_sampling_max.unwrap() < 2e-3);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut v = example_base();
    v["gainz"] = json!([1.0, 1.0]);
    let path = write_config(dir.path(), "bad.json", &v);
    let o = run(&["design", "--config", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gainz"), "{}", stderr(&o));

    fs::write(dir.path().join("broken.json"), "{ \"generator\": [").unwrap();
    let o = run(&[
        "simulate",
        "--config",
        dir.path().join("broken.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_hypothesis_prints_report_and_exits_2() {
    let dir = TempDir::new().unwrap();
    let mut v: Value =
        serde_json::from_str(&fs::read_to_string(configs().join("case1_design.json")).unwrap())
            .unwrap();
    v["gains"] = json!([2.0, 2.0]);
    let path = write_config(dir.path(), "weak.json", &v);
    let o = run(&["design", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("hypothesis πα > πA failed"),
        "{}",
        stderr(&o)
    );
    let report: DesignReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!report.admissible);
    assert!(!report.hypotheses[0].holds);
}

#[test]
fn zero_gain_law_matches_uncontrolled_bytes() {
    let dir = TempDir::new().unwrap();
    let plain = write_config(dir.path(), "plain.json", &example_base());
    let mut v = example_base();
    v["gains"] = json!([0.0, 0.0]);
    v["tau"] = json!(1e-3);
    v["tau0"] = json!(2e-4);
    let zero = write_config(dir.path(), "zero.json", &v);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        run(&["simulate", "--config", &plain, "--out", a.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run(&["simulate", "--config", &zero, "--out", b.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    for p in ["path_0000.csv", "path_0001.csv"] {
        assert_eq!(fs::read(a.join(p)).unwrap(), fs::read(b.join(p)).unwrap());
    }
}

#[test]
fn csv_matches_library_trajectory() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &example_base());
    let out = dir.path().join("o");
    assert_eq!(
        run(&[
            "simulate",
            "--config",
            &path,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "11"
        ])
        .status
        .code(),
        Some(0)
    );
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["paths"].as_array().unwrap().len(), 2);

    let cfg = RunConfig::load(Path::new(&path)).unwrap();
    let tr = switchstab::simulator::simulate_path(
        &cfg.model().unwrap(),
        &cfg.generator().unwrap(),
        None,
        &cfg.sim_config(Some(11)).unwrap(),
        1,
    )
    .unwrap();
    let text = fs::read_to_string(out.join("path_0001.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|s| s.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), tr.len());
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0], tr.times[k]);
        assert_eq!(row[1] as usize, tr.modes[k] + 1);
        assert_eq!(row[2], tr.state(k)[0]);
    }
}

#[test]
fn off_grid_lag_exits_3_unless_snapped() {
    let dir = TempDir::new().unwrap();
    let mut v = example_base();
    v["gains"] = json!([6.0, 6.0]);
    v["tau"] = json!(1e-3);
    v["tau0"] = json!(2.5e-4);
    let path = write_config(dir.path(), "off.json", &v);
    let out = dir.path().join("o");
    let o = run(&[
        "simulate",
        "--config",
        &path,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("tau0"));
    let o = run(&[
        "simulate",
        "--config",
        &path,
        "--out",
        out.to_str().unwrap(),
        "--snap-to-grid",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tau0_snapped"], true);
    assert!((manifest["law"]["tau0"].as_f64().unwrap() - 2e-4).abs() < 1e-15);
}

#[test]
fn flat_ensemble_has_zero_slope() {
    let dir = TempDir::new().unwrap();
    let v = json!({
        "generator": [[-1.0, 1.0], [1.0, -1.0]],
        "model": {"polynomial": [{}, {}]},
        "sim": {"dt": 1e-2, "horizon": 1.0, "x0": [2.0], "n_paths": 1, "q_list": [2.0, 4.0]}
    });
    let path = write_config(dir.path(), "flat.json", &v);
    let out = dir.path().join("o");
    let o = run(&[
        "estimate",
        "--config",
        &path,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("moments.csv")).unwrap();
    assert!(csv.starts_with("t,q=2,q=4\n"));
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!((v[1], v[2]), (4.0, 16.0));
    }
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("exponents.json")).unwrap()).unwrap();
    assert!(report["ms"][0]["slope"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn estimate_is_thread_invariant() {
    let dir = TempDir::new().unwrap();
    let mut v = example_base();
    v["gains"] = json!([6.0, 6.0]);
    v["tau"] = json!(1e-3);
    v["tau0"] = json!(2e-3);
    v["sim"]["n_paths"] = json!(24);
    v["sim"]["record_stride"] = json!(50);
    v["sim"]["q_list"] = json!([2.0, 4.0]);
    let path = write_config(dir.path(), "e.json", &v);
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = run(&[
            "estimate",
            "--config",
            &path,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push((
            fs::read(out.join("moments.csv")).unwrap(),
            fs::read(out.join("exponents.json")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn explosive_ensemble_exits_4() {
    let dir = TempDir::new().unwrap();
    let v = json!({
        "generator": [[-1.0, 1.0], [1.0, -1.0]],
        "model": {"polynomial": [
            {"drift": [{"coef": 1.0, "power": 3}]},
            {"drift": [{"coef": 1.0, "power": 3}]}
        ]},
        "sim": {"dt": 1e-3, "horizon": 2.0, "x0": [1.0], "n_paths": 4}
    });
    let path = write_config(dir.path(), "boom.json", &v);
    let o = run(&[
        "estimate",
        "--config",
        &path,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn unstable_synthetic_grows_or_degenerates() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("ql_unstable.json");
    let out = dir.path().join("o");
    let o = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    match o.status.code() {
        Some(4) => {}
        Some(0) => {
            let report: Value = serde_json::from_slice(&o.stdout).unwrap();
            assert!(report["ms"][0]["slope"].as_f64().unwrap() > 0.0);
        }
        other => panic!("exit {other:?}: {}", stderr(&o)),
    }
}

#[test]
fn reproduce_example_passes_by_default() {
    let dir = TempDir::new().unwrap();
    let o = run(&["reproduce-example", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(!table.contains("FAIL"), "{table}");
    assert!(table.contains("κ for μ=(6.5,−4)"));
    assert!(dir.path().join("case_1_report.json").exists());
}
