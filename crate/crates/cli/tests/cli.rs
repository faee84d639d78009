use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpcouple::config::parse_config;
use gpcouple::report::{compare_text, Tolerances};
use gpcouple_cli::{run_config_text, RunOptions, EXIT_CONFIG, EXIT_OK, EXIT_THRESHOLD, OUTPUT_DIR_ENV};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gpcouple"));
    c.env_remove(OUTPUT_DIR_ENV);
    c
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&o.stderr)))
}

fn run_to(text: &str, dir: &Path, jobs: Option<usize>) -> String {
    let o = run_config_text(
        text,
        &RunOptions {
            output_dir: Some(dir.to_path_buf()),
            jobs,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(o.exit_code, EXIT_OK, "{:?}", o.checks);
    std::fs::read_to_string(dir.join("report.json")).unwrap()
}

const MODAL: &str = "[experiment]\nkind = modal\nmaster_seed = 9\n\n[modal]\ndraws = 20000\n";

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "m.cfg", MODAL);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["run", cfg.to_str().unwrap(), "--dry-run", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert!(!out.exists());
}

#[test]
fn example_configs_validate() {
    for e in std::fs::read_dir(configs_dir()).unwrap() {
        let p = e.unwrap().path();
        let o = bin().args(["run", p.to_str().unwrap(), "--dry-run"]).output().unwrap();
        assert_eq!(o.status.code(), Some(EXIT_OK), "{}: {}", p.display(), String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn missing_required_field_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "[experiment]\nkind = modal\n");
    let o = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let err = stderr_json(&o);
    assert_eq!(err["exit_code"], EXIT_CONFIG);
    assert!(err["message"].as_str().unwrap().contains("master_seed"), "{err}");
}

#[test]
fn syntax_and_type_errors_carry_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "[experiment]\nkind = modal\nmaster_seed = 1\nthis is not a pair\n");
    let o = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert_eq!(stderr_json(&o)["line"], 4);
    let cfg = write(tmp.path(), "bad2.cfg", "[experiment]\nkind = modal\nmaster_seed = 1\n[uq]\nreplications = \"many\"\n");
    let o = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    let err = stderr_json(&o);
    assert_eq!(err["line"], 5);
    assert!(err["message"].as_str().unwrap().contains("uq.replications"), "{err}");
}

#[test]
fn validation_error_names_field() {
    let text = "[experiment]\nkind = benchmark\nmaster_seed = 1\n[uq]\nreplications = 1\n";
    let e = run_config_text(text, &RunOptions::default()).unwrap_err();
    assert!(e.to_string().contains("uq.replications"), "{e}");
    assert_eq!(gpcouple_cli::exit_code_for(&e), EXIT_CONFIG);
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = run_to(MODAL, &a, None);
    let rb = run_to(MODAL, &b, None);
    assert_eq!(ra, rb);
    for f in ["deformation_field.csv", "config.resolved.cfg", "config.resolved.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(compare_text(&ra, &rb, &Tolerances::default()).unwrap().is_identical());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 9);
    assert!(manifest["files"].as_array().unwrap().iter().any(|f| f == "report.json"));
}

#[test]
fn resolved_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_config_text(
        MODAL,
        &RunOptions {
            output_dir: Some(tmp.path().to_path_buf()),
            seed: Some(42),
            ..Default::default()
        },
    )
    .unwrap();
    let text = std::fs::read_to_string(tmp.path().join("config.resolved.cfg")).unwrap();
    let back = parse_config(&text).unwrap();
    assert_eq!(back, o.config);
    assert_eq!(back.experiment.master_seed, 42);
}

#[test]
fn reports_do_not_depend_on_jobs() {
    let text = "[experiment]\nkind = sobol\nmaster_seed = 4\n[sobol]\nmodel = ishigami\nn_s = 2000\nbootstrap = 20\n";
    let tmp = tempfile::tempdir().unwrap();
    let r1 = run_to(text, &tmp.path().join("j1"), Some(1));
    let r2 = run_to(text, &tmp.path().join("j3"), Some(3));
    assert_eq!(r1, r2);
}

#[test]
fn large_design_means_agree_across_seeds() {
    let text = "[experiment]\nkind = uq\nmaster_seed = 1\n[benchmark]\ndoe_sizes = [200]\n[uq]\nreplications = 500\nmethods = [M3]\n";
    let tmp = tempfile::tempdir().unwrap();
    let a = run_to(text, &tmp.path().join("a"), None);
    let b = run_to(&text.replace("master_seed = 1", "master_seed = 2"), &tmp.path().join("b"), None);
    let va: Value = serde_json::from_str(&a).unwrap();
    let vb: Value = serde_json::from_str(&b).unwrap();
    let m = |v: &Value| v["results"]["doe"][0]["methods"]["M3"]["mean"].as_f64().unwrap();
    assert!((m(&va) - m(&vb)).abs() <= 1e-4);
    let tol = Tolerances {
        fields: [("results.doe[0].methods.M3.mean".to_string(), 1e-4)].into(),
        ..Default::default()
    };
    let c = compare_text(&a, &b, &tol).unwrap();
    assert!(c.diffs.iter().any(|d| d.path == "results.doe[0].methods.M3.mean" && d.within_tolerance));
}

#[test]
fn compare_rejects_different_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    run_to(MODAL, &a, None);
    let b = tmp.path().join("b");
    run_to("[experiment]\nkind = slopes\nmaster_seed = 1\n", &b, None);
    let o = bin()
        .args(["compare", a.join("report.json").to_str().unwrap(), b.join("report.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert_eq!(stderr_json(&o)["error"], "config");
    let same = bin()
        .args(["compare", a.join("report.json").to_str().unwrap(), a.join("report.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(same.status.code(), Some(EXIT_OK));
}

#[test]
fn env_var_overrides_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "m.cfg", MODAL);
    let target = tmp.path().join("from_env");
    let o = bin()
        .env(OUTPUT_DIR_ENV, &target)
        .current_dir(tmp.path())
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("report.json").exists());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn small_benchmark_reports_both_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let o = bin()
        .args([
            "run",
            configs_dir().join("bench_small.cfg").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    let all_pass = checks.iter().all(|c| c["pass"] == true);
    assert_eq!(o.status.code(), Some(if all_pass { EXIT_OK } else { EXIT_THRESHOLD }));
    let doe = &report["results"]["doe"][0];
    assert_eq!(doe["n"], 20);
    for m in ["M2", "M3"] {
        for k in ["mean", "variance", "q025", "q975"] {
            assert!(doe["methods"][m][k].is_f64(), "{m}.{k}");
        }
    }
    assert!(doe["welch"]["p_value"].is_f64() && doe["ks"]["p_value"].is_f64());
    assert!(out.join("ensemble_M2_n20.csv").exists() && out.join("exact_path.csv").exists());
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(text.contains("\"reference\": 3.5749880000000001e-1"));
}

#[test]
fn list_experiments_names_every_kind() {
    let o = bin().arg("list-experiments").output().unwrap();
    let s = String::from_utf8(o.stdout).unwrap();
    for k in ["benchmark", "uq", "cycle-uq", "sobol", "bounds", "slopes", "velocity", "modal"] {
        assert!(s.lines().any(|l| l.starts_with(k)), "{k}");
    }
}
