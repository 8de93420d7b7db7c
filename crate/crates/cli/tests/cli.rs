use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lqr-ioc"));
    // Keep ambient overrides out of the tests.
    for (k, _) in std::env::vars() {
        if k.starts_with("LQR_IOC_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str], config: Option<&Path>) -> Output {
    let mut c = bin();
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn keys(v: &Value) -> String {
    let mut k: Vec<&String> = v.as_object().unwrap().keys().collect();
    k.sort();
    k.iter().map(|s| format!("{s}\n")).collect()
}

const SCALAR: &str = r#"
horizon = 5
agents = 3
[system]
kind = "discrete"
a = [[1.0]]
b = [[1.0]]
[cost]
q = [[1.0]]
"#;

#[test]
fn simulate_single_agent_two_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "horizon = 2\nagents = 1\n[system]\nkind = \"discrete\"\na = [[1.0]]\nb = [[1.0]]\n");
    let out = dir.path().join("d");
    let o = run(&["--out", out.to_str().unwrap(), "simulate"], Some(&cfg));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["permutations"]["perms"], serde_json::json!([[0], [0]]));
    assert_eq!(fs::read_dir(out.join("snapshots")).unwrap().count(), 2);
}

#[test]
fn simulate_default_shape_is_echoed_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&run(&["--seed", "11", "--out", d.to_str().unwrap(), "simulate"], None)), 0);
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!((m["n"].as_u64(), m["m"].as_u64(), m["horizon"].as_u64(), m["agents"].as_u64()), (Some(3), Some(1), Some(20), Some(15)));
    assert_eq!(m["phi"].as_f64(), Some(5.0));
    assert_eq!(m["bounds"]["lower"], serde_json::json!([-10.0, -10.0, -10.0]));
    assert_eq!(m["bounds"]["upper"], serde_json::json!([10.0, 10.0, 10.0]));
    assert_eq!(keys(&m), golden("manifest.keys"));
    for f in walk(&a) {
        let rel = f.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn estimate_scalar_toy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCALAR);
    let data = dir.path().join("d");
    let est = dir.path().join("e");
    assert_eq!(code(&run(&["--out", data.to_str().unwrap(), "simulate"], Some(&cfg))), 0);
    let o = run(&["--out", est.to_str().unwrap(), "estimate", "--dataset", data.to_str().unwrap(), "--recover-permutations"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e = json(&est.join("estimate.json"));
    assert!((e["q_est"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(e["permutations"]["accuracy"].as_f64(), Some(1.0));
    assert_eq!(keys(&e), golden("estimate.keys"));
}

#[test]
fn noisy_dataset_with_wrong_sigma_shape_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SCALAR}[noise]\nkind = \"fixed\"\nsigma = [[0.01]]\n"));
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["--out", data.to_str().unwrap(), "simulate"], Some(&cfg))), 0);
    let manifest = data.join("manifest.json");
    let mut m = json(&manifest);
    m["sigma"] = serde_json::json!([[0.01, 0.0], [0.0, 0.01]]);
    fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    let o = run(&["--out", dir.path().join("e").to_str().unwrap(), "estimate", "--dataset", data.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("exit_code"));
}

#[test]
fn noisy_mode_with_zero_sigma_matches_noiseless() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "horizon = 8\nagents = 6\n[system]\nkind = \"double_integrator\"\n[noise]\nkind = \"fixed\"\nsigma = [[0.0, 0.0], [0.0, 0.0]]\n",
    );
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["--out", data.to_str().unwrap(), "simulate"], Some(&cfg))), 0);
    let q = |mode: &str, extra: &[&str]| {
        let out = dir.path().join(mode);
        let mut args = vec!["--out", out.to_str().unwrap(), "estimate", "--dataset", data.to_str().unwrap(), "--mode", mode];
        args.extend_from_slice(extra);
        assert_eq!(code(&run(&args, None)), 0);
        let e = json(&out.join("estimate.json"));
        e["q_est"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect::<Vec<_>>()).collect::<Vec<f64>>()
    };
    let a = q("noiseless", &[]);
    let b = q("noisy", &["--phi", "1e6"]);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(diff < 1e-7, "{diff}");
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "estimate", "--dataset", dir.path().join("nope").to_str().unwrap()], None);
    assert_eq!(code(&o), 4);
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "horizon = 1\n");
    assert_eq!(code(&run(&["simulate"], Some(&cfg))), 2);
    let cfg = write_config(dir.path(), "horizon = \"twenty\"\n");
    assert_eq!(code(&run(&["simulate"], Some(&cfg))), 2);
}

#[test]
fn environment_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = bin().env("LQR_IOC_HORIZON", "4").env("LQR_IOC_AGENTS", "5").args(["--out", out.to_str().unwrap(), "simulate"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!((m["horizon"].as_u64(), m["agents"].as_u64()), (Some(4), Some(5)));
}

#[test]
fn diagnose_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[system]\nkind = \"double_integrator\"\n");
    let out = dir.path().join("di");
    assert_eq!(code(&run(&["--out", out.to_str().unwrap(), "diagnose"], Some(&cfg))), 0);
    let r = json(&out.join("diagnose.json"));
    assert_eq!(r["condition"]["ill_conditioned"], Value::Bool(false));

    let out = dir.path().join("random");
    assert_eq!(code(&run(&["--seed", "4", "--out", out.to_str().unwrap(), "diagnose"], None)), 0);
    let r = json(&out.join("diagnose.json"));
    assert_eq!(keys(&r), golden("diagnose.keys"));
    assert!(r["near_kernel"]["margin"].as_f64().unwrap() >= 0.0);
    assert!(r["condition"]["cond_gamma_n"].as_f64().unwrap() > 1.0);

    let cfg = write_config(dir.path(), "[system]\nkind = \"discrete\"\na = [[1.0, 0.0], [0.0, 1.0]]\nb = [[1.0], [0.0]]\n");
    let o = run(&["--out", dir.path().join("u").to_str().unwrap(), "diagnose"], Some(&cfg));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("controllable"));
}

#[test]
fn sweep_on_double_integrator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "trials = 5\n[system]\nkind = \"double_integrator\"\n");
    let out = dir.path().join("s");
    let o = run(&["--out", out.to_str().unwrap(), "--workers", "2", "sweep-noiseless"], Some(&cfg));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(format!("{}\n", text.lines().next().unwrap()), golden("records.header"));
    let mut rdr = csv::Reader::from_path(out.join("records.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "rel_k_max").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!(r[col].parse::<f64>().unwrap() <= 1e-4);
    }
    let s = json(&out.join("summary.json"));
    assert_eq!(keys(&s), golden("sweep_summary.keys"));
    assert_eq!(s["ill_conditioned"].as_u64(), Some(0));
}

#[test]
fn consistency_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "trials = 2\nhorizon = 5\nagent_grid = [5, 10, 20]\n");
    let out = dir.path().join("c");
    let o = run(&["--out", out.to_str().unwrap(), "consistency"], Some(&cfg));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let groups = fs::read_to_string(out.join("groups.csv")).unwrap();
    assert_eq!(format!("{}\n", groups.lines().next().unwrap()), golden("groups.header"));
    assert_eq!(groups.lines().count(), 4);
    let s = json(&out.join("summary.json"));
    assert_eq!(keys(&s), golden("consistency_summary.keys"));
    assert!(out.join("config.toml").exists());
}

#[test]
fn kind_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"consistency\"\n");
    assert_eq!(code(&run(&["--out", dir.path().join("x").to_str().unwrap(), "sweep-noiseless"], Some(&cfg))), 2);
}
