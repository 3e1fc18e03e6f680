use std::path::Path;
use std::process::{Command, Output};

use sq2lt_cli::exit;

fn sq2lt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sq2lt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("valid json")
}

#[test]
fn analyze_scenario_values() {
    let out = sq2lt(&["analyze", "--config", "scenario1.cfg"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["derivatives"]["r0"].as_f64().unwrap(), 0.3);
    assert!((v["derivatives"]["r1"].as_f64().unwrap() + 0.04 / 9.0).abs() < 1e-15);
    assert!((v["derivatives"]["r2"].as_f64().unwrap() - 2.4 / 8100.0).abs() < 1e-15);
    for key in ["gamma", "x_moments"] {
        assert!(v["derivatives"].get(key).is_some(), "{key}");
    }
    let out = sq2lt(&["analyze", "--config", "scenario3.cfg", "--format", "csv"]);
    let text = stdout(&out);
    assert!(text.starts_with("lambda,r_app\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0.1")), "{text}");
}

#[test]
fn analyze_writes_companion_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("s2.json");
    let out = sq2lt(&[
        "analyze",
        "--config",
        "scenario2.cfg",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!((v["derivatives"]["r1"].as_f64().unwrap() + 0.04 / 99.0).abs() < 1e-15);
    let csv = std::fs::read_to_string(dir.path().join("s2_approx.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let bad_syntax = write("a.cfg", "capacities = [1.0\n");
    let bad_value = write(
        "b.cfg",
        "capacities = [1.0, 2.0]\nd = 0\nlambda_grid = [1.0]\n[distribution]\nfamily = \"exponential\"\nrate = 1.0\n",
    );
    let code = |args: &[&str]| sq2lt(args).status.code().unwrap();
    assert_eq!(code(&["analyze", "--config", &bad_syntax]), exit::PARSE);
    assert_eq!(code(&["analyze", "--config", &bad_value]), exit::VALIDATION);
    assert_eq!(
        code(&["analyze", "--config", "/definitely/missing.cfg"]),
        exit::IO
    );
    assert_eq!(code(&["analyze"]), exit::USAGE);
    assert_eq!(
        code(&["analyze", "--config", "scenario1.cfg", "--workers", "0"]),
        exit::USAGE
    );
    let single = write(
        "c.cfg",
        "capacities = [1.0]\nd = 1\nlambda_grid = [1.0]\n[distribution]\nfamily = \"exponential\"\nrate = 1.0\n",
    );
    assert_eq!(code(&["analyze", "--config", &single]), exit::VALIDATION);
    let err = String::from_utf8(sq2lt(&["analyze", "--config", &bad_value]).stderr).unwrap();
    assert!(err.contains("`d`"), "{err}");
}

#[test]
fn verify_passes_and_flags_corruption() {
    let ok = sq2lt(&[
        "verify",
        "--config",
        "scenario1.cfg",
        "--family",
        "exponential",
        "--samples",
        "20000",
    ]);
    assert_eq!(
        ok.status.code(),
        Some(exit::OK),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let report = json(&ok);
    assert_eq!(report["summary"]["pass"], true);
    assert_eq!(report["summary"]["mc_cells"], 20);

    let bad = sq2lt(&[
        "verify",
        "--config",
        "scenario1.cfg",
        "--samples",
        "20000",
        "--corrupt-capacity",
        "0",
    ]);
    assert_eq!(bad.status.code(), Some(exit::VERIFICATION));
    let report = json(&bad);
    let quad: Vec<&serde_json::Value> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["group"] == "quadrature")
        .collect();
    assert_eq!(quad.len(), 2);
    for c in quad {
        assert_eq!(c["pass"], false);
        assert!(c["discrepancy"].as_f64().unwrap() != 0.0);
    }
    // r1 of the true system is more negative than the corrupted closed form
    let r1 = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["group"] == "quadrature" && c["quantity"] == "r1")
        .unwrap();
    assert!(r1["discrepancy"].as_f64().unwrap() < 0.0);
}

#[test]
fn verify_homogeneous_reports_exact_zeros() {
    let out = sq2lt(&["verify", "--config", "scenario3.cfg", "--samples", "10000"]);
    assert!(out.status.success());
    let report = json(&out);
    for c in report["checks"].as_array().unwrap() {
        if c["group"] == "forms" && (c["quantity"] == "r1" || c["quantity"] == "r2") {
            assert_eq!(c["closed_form"].as_f64(), Some(0.0));
        }
    }
}

#[test]
fn verify_rejects_small_sample_counts() {
    let out = sq2lt(&["verify", "--config", "scenario1.cfg", "--samples", "100"]);
    assert_eq!(out.status.code(), Some(exit::VALIDATION));
}

#[test]
fn sweep_csv_layout_and_repeatability() {
    let args = [
        "sweep",
        "--config",
        "scenario1.cfg",
        "--lambda",
        "0.5,2",
        "--runs",
        "3",
        "--busy-periods",
        "500",
        "--seed",
        "11",
    ];
    let a = sq2lt(&args);
    assert!(a.status.success());
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,mean_response,half_width_95,runs,busy_periods_per_run,total_jobs,seed"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0.5,"));
    assert!(rows[1].starts_with("2.0,"));
    assert!(rows.iter().all(|r| r.ends_with(",11")));
    let mut threaded = args.to_vec();
    threaded.extend(["--workers", "3"]);
    assert_eq!(a.stdout, sq2lt(&threaded).stdout);
}

#[test]
fn sweep_writes_approximation_companion() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let status = sq2lt(&[
        "sweep",
        "--config",
        "scenario3.cfg",
        "--lambda",
        "0.5,1",
        "--runs",
        "2",
        "--busy-periods",
        "200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    assert!(Path::new(&out).exists());
    let approx = std::fs::read_to_string(dir.path().join("sweep_approx.csv")).unwrap();
    assert_eq!(approx, "lambda,r_app\n0.5,0.1\n1.0,0.1\n");
}

#[test]
fn scenarios_lists_and_shows_bundles() {
    let out = sq2lt(&["scenarios"]);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("scenario2.cfg,100,2,"));
    let shown = sq2lt(&["scenarios", "--show", "scenario1"]);
    assert!(stdout(&shown).contains("capacities = [2.0, 2.0, 2.0, 2.0, 2.0, 10.0"));
    assert_eq!(
        sq2lt(&["scenarios", "--show", "nope"]).status.code(),
        Some(exit::USAGE)
    );
}

#[test]
fn family_override_changes_distribution_only() {
    let a = json(&sq2lt(&[
        "analyze",
        "--config",
        "scenario1.cfg",
        "--family",
        "deterministic",
    ]));
    let b = json(&sq2lt(&["analyze", "--config", "scenario1.cfg"]));
    assert_eq!(a["derivatives"], b["derivatives"]);
}

#[test]
fn bundled_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in sq2lt_cli::config::BUNDLED {
        let cfg = sq2lt_cli::parse_config_str(text, name).unwrap();
        let path = dir.path().join(name);
        std::fs::write(&path, sq2lt_cli::emit_config(&cfg).unwrap()).unwrap();
        assert_eq!(sq2lt_cli::parse_config(&path).unwrap(), cfg);
    }
}
