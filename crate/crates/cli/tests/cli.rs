use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_barrier-iqc");

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn load(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(example(name)).unwrap()).unwrap()
}

fn save(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a CSV written by the tool, split into fields.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn certify_exit_codes_follow_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(&["certify", "--config", s(&example("task1.json")), "--out", s(dir.path())]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("certify.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "certified");
    assert!(report["lambda"].as_f64().unwrap() > 0.0);
    assert!(report["multiplier_parameters"].as_array().unwrap().len() > 1);

    let mut cfg = load("task1.json");
    cfg["kappa"] = 5.0.into();
    let path = save(dir.path(), "k5.json", &cfg);
    assert_eq!(code(&run(&["certify", "--config", s(&path), "--out", s(dir.path())])), 1);
}

#[test]
fn malformed_configs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let mut unknown = load("task1.json");
    unknown["extra"] = 1.into();
    let mut schema = load("task1.json");
    schema["schema"] = "barrier-iqc/run-config/v0".into();
    let mut ragged = load("task1.json");
    ragged["plant"]["a"] = serde_json::json!([[0.7, 0.3], [0.8]]);
    let mut bounds = load("task1.json");
    bounds["bounds"]["lower"] = serde_json::json!([0.5]);
    let mut static_taps = load("task1.json");
    static_taps["task"]["cells"] = serde_json::json!([{ "controller": "barrier", "multiplier": { "class": "czf", "nzf": 1, "bogus": 0 } }]);
    for (name, v) in [("unknown", unknown), ("schema", schema), ("ragged", ragged), ("bounds", bounds), ("cell", static_taps)] {
        let path = save(dir.path(), &format!("{name}.json"), &v);
        let res = run(&["certify", "--config", s(&path), "--out", out]);
        assert_eq!(code(&res), 3, "{name}: {}", String::from_utf8_lossy(&res.stderr));
    }
    std::fs::write(dir.path().join("text.json"), "not json").unwrap();
    assert_eq!(code(&run(&["certify", "--config", s(&dir.path().join("text.json"))])), 3);
    assert_eq!(code(&run(&["certify", "--config", s(&dir.path().join("missing.json"))])), 3);
    assert_eq!(code(&run(&["sweep", "--config", s(&example("task1.json")), "--target", "gain"])), 3);
    assert!(!dir.path().join("certify.json").exists());
}

#[test]
fn single_cell_sweep_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["sweep", "--config", s(&example("task1.json")), "--out", s(dir.path()), "--multiplier", "general", "--workers", "1"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = dir.path().join("sweep-kappa.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# config-sha256: ") && l.len() == 17 + 64));
    assert!(text.contains("# unit "));
    let (header, data) = rows(&csv);
    assert_eq!(data.len(), 1);
    assert_eq!(&data[0][..4], ["barrier", "general", "0", "margin"]);
    let col = header.iter().position(|h| h == "kappa_margin").unwrap();
    let margin: f64 = data[0][col].parse().unwrap();
    assert!(margin > 1.0 && margin < 10.0);
    let svg = std::fs::read_to_string(dir.path().join("sweep-kappa.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn bracket_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("task1.json");
    cfg["task"]["bracket"] = serde_json::json!([1.0, 1.2]);
    let path = save(dir.path(), "narrow.json", &cfg);
    let res = run(&["sweep", "--config", s(&path), "--out", s(dir.path()), "--multiplier", "czf"]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("bracket"));
    let (_, data) = rows(&dir.path().join("sweep-kappa.csv"));
    assert_eq!(data[0][3], "certified-bracket");
}

#[test]
fn zero_initial_state_gives_zero_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("task1-simulate.json");
    cfg["simulation"]["x0"] = serde_json::json!([[0.0, 0.0]]);
    let path = save(dir.path(), "zero.json", &cfg);
    let res = run(&["simulate", "--config", s(&path), "--out", s(dir.path()), "--steps", "50"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let (header, data) = rows(&dir.path().join("simulate.csv"));
    assert_eq!(header, ["run", "k", "x1", "x2", "xhat1", "xhat2", "u1", "y1"]);
    assert_eq!(data.len(), 50);
    assert!(data.iter().all(|r| r[2..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0)));
}

fn tail_output_peak(dir: &Path) -> f64 {
    let (header, data) = rows(&dir.join("simulate.csv"));
    let y = header.iter().position(|h| h == "y1").unwrap();
    let k = header.iter().position(|h| h == "k").unwrap();
    data.iter().filter(|r| r[k].parse::<usize>().unwrap() >= 400).map(|r| r[y].parse::<f64>().unwrap().abs()).fold(0.0, f64::max)
}

#[test]
fn barrier_settles_where_nominal_keeps_oscillating() {
    let barrier = tempfile::tempdir().unwrap();
    let nominal = tempfile::tempdir().unwrap();
    let mut cfg = load("task1-simulate.json");
    cfg["simulation"]["count"] = 4.into();
    let path = save(barrier.path(), "barrier.json", &cfg);
    assert_eq!(code(&run(&["simulate", "--config", s(&path), "--out", s(barrier.path())])), 0);
    cfg["controller"] = "nominal".into();
    let path = save(nominal.path(), "nominal.json", &cfg);
    assert_eq!(code(&run(&["simulate", "--config", s(&path), "--out", s(nominal.path())])), 0);
    let (b, n) = (tail_output_peak(barrier.path()), tail_output_peak(nominal.path()));
    assert!(b < 1e-6, "barrier tail {b}");
    assert!(n > 1e-2, "nominal tail {n}");
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let res = run(&["simulate", "--config", s(&example("task2-simulate.json")), "--out", s(dir.path()), "--steps", "120", "--seed", "11"]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    for file in ["simulate.csv", "simulate.svg"] {
        let a = std::fs::read(runs[0].path().join(file)).unwrap();
        let b = std::fs::read(runs[1].path().join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
    let other = tempfile::tempdir().unwrap();
    run(&["simulate", "--config", s(&example("task2-simulate.json")), "--out", s(other.path()), "--steps", "120", "--seed", "12"]);
    assert_ne!(std::fs::read(runs[0].path().join("simulate.csv")).unwrap(), std::fs::read(other.path().join("simulate.csv")).unwrap());
}

#[test]
fn overrides_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = example("task1.json");
    let hash = |extra: &[&str]| {
        let mut args = vec!["certify", "--config", s(&config), "--out", s(dir.path())];
        args.extend_from_slice(extra);
        run(&args);
        let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("certify.json")).unwrap()).unwrap();
        report["config_sha256"].as_str().unwrap().to_string()
    };
    let base = hash(&[]);
    assert_eq!(base, hash(&[]));
    assert_ne!(base, hash(&["--nzf", "2"]));
}

#[test]
fn suite_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["suite", "--seed", "0", "--samples", "50", "--filter", "sector", "--out", s(dir.path())]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    let text = std::fs::read_to_string(dir.path().join("suite.txt")).unwrap();
    assert!(text.contains("PASS") && !text.contains("FAIL"));
    assert!(dir.path().join("suite.json").exists());
}
