use std::path::Path;
use std::process::{Command, Output};

const SMALL_LINEAR: &str = r#"{
    "model": {"name": "linear3"},
    "noise": {
        "process": {"dim": 3, "kind": "trunc_gauss", "sigma": 0.2},
        "measurement": {"dim": 1, "kind": "trunc_gauss", "sigma": 0.1},
        "sigma0": 1.0
    },
    "estimators": [
        {"name": "KF", "kind": "kf"},
        {"name": "MHE", "kind": "mhe", "horizon": 3, "cost": {
            "arrival": {"c2": 1.0, "a2": 2.0, "decay": {"kind": "exponential", "b2": 0.81}},
            "stage": {"lambda_w": 0.99, "lambda_v": 0.99,
                      "loss_w": {"kind": "quadratic", "weight": 25.0},
                      "loss_v": {"kind": "quadratic", "weight": 100.0}},
            "x_bound": {"kind": "box", "radius": 3.0},
            "w_bound": 0.6, "v_bound": 0.3
        }}
    ],
    "experiment": {"n": 3, "t_f": 8, "seed": 7, "sweep": [{"axis": "horizon", "values": [2, 4]}]}
}"#;

fn mhekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhekit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = mhekit(&["estimate", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let unknown = write_config(
        dir.path(),
        "unknown.json",
        &SMALL_LINEAR.replace(r#""sigma0": 1.0"#, r#""sigma0": 1.0, "bogus": true"#),
    );
    assert_eq!(mhekit(&["bench", "--config", &unknown]).status.code(), Some(2));

    let bad_dim = write_config(
        dir.path(),
        "dim.json",
        &SMALL_LINEAR.replace(r#""dim": 3"#, r#""dim": 2"#),
    );
    let o = mhekit(&["simulate", "--config", &bad_dim]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
}

#[test]
fn bench_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mhekit(&["bench", "--config", &cfg, "--out", out.to_str().unwrap(), "--strict"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["summary.csv", "sweep.csv", "instances.csv", "mean_error.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs between runs");
    }
    let summary = String::from_utf8(read(&a, "summary.csv")).unwrap();
    assert!(summary.starts_with("estimator,mae,unconverged,steps\n"));
    assert!(summary.trim_end().ends_with("# unconverged_total=0"));
    let sweep = String::from_utf8(read(&a, "sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("sweep_axis,value,estimator,mae"));
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);
    let traces = String::from_utf8(read(&a, "traces.csv")).unwrap();
    assert!(traces.starts_with("instance,t,estimator,xhat0,xhat1,xhat2,e0,e1,e2,converged,solve_ms\n"));
    assert_eq!(traces.lines().count(), 1 + 2 * 3 * 9);

    let other_seed = dir.path().join("c");
    mhekit(&["bench", "--config", &cfg, "--out", other_seed.to_str().unwrap(), "--seed", "8"]);
    assert_ne!(read(&a, "instances.csv"), read(&other_seed, "instances.csv"));
}

#[test]
fn estimate_prints_summary_without_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_LINEAR);
    let o = mhekit(&["estimate", "--config", &cfg, "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["estimators"].as_array().unwrap().len(), 2);
    assert!(v["sweep"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_writes_instances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_LINEAR);
    let out = dir.path().join("sim");
    let o = mhekit(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("instances.csv")).unwrap();
    // header plus one row per (instance, t)
    assert_eq!(text.lines().count(), 1 + 3 * 9);
}

#[test]
fn horizon_reports_key_values_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_LINEAR);
    let o = mhekit(&["horizon", "--config", &cfg]);
    assert!(o.status.success());
    let text = stdout(&o);
    for key in ["estimator=MHE", "eta=0.5", "s_bar=", "T_min=", "term0="] {
        assert!(text.contains(key), "missing {key} in\n{text}");
    }
    let t_min: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("T_min="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(t_min > 0);

    let o = mhekit(&["horizon", "--config", &cfg, "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["T_min"].as_u64(), Some(t_min as u64));
    assert_eq!(v[0]["assumptions"]["certificate"], "linear3/published");
}

#[test]
fn horizon_without_optimization_estimators_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let kf_only = r#"{
        "model": {"name": "linear3"},
        "noise": {
            "process": {"dim": 3, "kind": "trunc_gauss", "sigma": 0.2},
            "measurement": {"dim": 1, "kind": "trunc_gauss", "sigma": 0.1},
            "sigma0": 1.0
        },
        "estimators": [{"name": "KF", "kind": "kf"}],
        "experiment": {"n": 2, "t_f": 5}
    }"#;
    let cfg = write_config(dir.path(), "kf.json", kf_only);
    assert_eq!(mhekit(&["horizon", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn check_stability_passes_for_published_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_LINEAR);
    let o = mhekit(&["check-stability", "--config", &cfg]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("certificate_passed=true"));
    assert!(text.contains("b2_range=[0.81,1)"));
    assert!(text.trim_end().ends_with("passed=true"));

    let bad = write_config(
        dir.path(),
        "bad.json",
        &SMALL_LINEAR.replace(r#""b2": 0.81"#, r#""b2": 0.5"#),
    );
    let o = mhekit(&["check-stability", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("admissible=false"));
}

#[test]
fn strict_flags_unconverged_solves() {
    let dir = tempfile::tempdir().unwrap();
    let reactor = r#"{
        "model": {"name": "reactor"},
        "noise": {
            "process": {"dim": 1, "kind": "trunc_gauss", "sigma": 0.001},
            "measurement": {"dim": 1, "kind": "trunc_gauss", "sigma": 0.01},
            "sigma0": 3.0
        },
        "estimators": [
            {"name": "MHE", "kind": "mhe", "horizon": 3, "cost": {
                "arrival": {"c2": 0.1111, "a2": 2.0, "decay": {"kind": "exponential", "b2": 0.9937}},
                "stage": {"lambda_w": 0.99, "lambda_v": 0.99,
                          "loss_w": {"kind": "quadratic", "weight": 1e6},
                          "loss_v": {"kind": "quadratic", "weight": 1e4}},
                "x_bound": {"kind": "box", "radius": 9.0},
                "w_bound": 0.003, "v_bound": 0.03
            }}
        ],
        "experiment": {"n": 1, "t_f": 6},
        "solver": {"max_outer_iters": 1, "restarts": 1}
    }"#;
    let cfg = write_config(dir.path(), "reactor.json", reactor);
    let out = dir.path().join("out");
    let lax = mhekit(&["estimate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(lax.status.code(), Some(0));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let total: usize = summary
        .lines()
        .find_map(|l| l.strip_prefix("# unconverged_total="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(total > 0, "{summary}");
    let strict = mhekit(&["estimate", "--config", &cfg, "--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["linear.json", "outlier.json", "reactor.json"] {
        let path = dir.join(name);
        let o = mhekit(&["check-stability", "--config", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
    }
}
