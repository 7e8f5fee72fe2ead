use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn duet(args: &[&str], dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duet"));
    cmd.args(args).env_remove("DUET_SEED");
    if let Some(d) = dir {
        cmd.arg("--out").arg(d);
    }
    cmd.output().expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// summary.json with the wall-clock block removed, as raw text.
fn stable_summary(dir: &Path) -> String {
    let mut v = summary(dir);
    assert!(v.as_object_mut().unwrap().remove("runtime").is_some());
    serde_json::to_string_pretty(&v).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn missing_output_dir_is_runtime_error() {
    let out = duet(&["supr2", "--paths", "10", "--out", "/nonexistent/duet-out"], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/duet-out"), "{err}");
}

#[test]
fn rerun_is_byte_identical_apart_from_runtime() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let out = duet(&["supr2", "--paths", "300", "--seed", "11"], Some(d));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(stable_summary(a.path()), stable_summary(b.path()));
    let pa = std::fs::read(a.path().join("plotdata.tsv")).unwrap();
    assert_eq!(pa, std::fs::read(b.path().join("plotdata.tsv")).unwrap());
}

#[test]
fn worker_count_does_not_change_results() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, w) in dirs.iter().zip(["1", "4", "16"]) {
        let out = duet(&["near-zero", "--paths", "200", "--T", "200", "--workers", w], Some(d.path()));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let first = stable_summary(dirs[0].path());
    for d in &dirs[1..] {
        assert_eq!(first, stable_summary(d.path()));
    }
}

#[test]
fn exponent_violations_are_rejected_with_named_inequality() {
    let d = tempfile::tempdir().unwrap();
    for (text, rule) in [("alpha_c = 0.5\n", "alpha_c < 1/3"), ("beta = 1.0\n", "beta > 1")] {
        let cfg = write_config(d.path(), text);
        let out = duet(&["exit", "--config", &cfg], Some(d.path()));
        assert_eq!(out.status.code(), Some(1));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(rule), "{err}");
    }
    assert!(!d.path().join("summary.json").exists());
}

#[test]
fn failed_check_exits_with_two() {
    // with V = 0 the residual vanishes identically and no slope can be fitted
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "potential = \"zero\"\nR = 128\nn_paths = 20\n");
    let out = duet(&["expansion", "--config", &cfg], Some(d.path()));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(d.path())["passed"], Value::Bool(false));
}

#[test]
fn digest_tags_every_output_file() {
    let d = tempfile::tempdir().unwrap();
    let out = duet(&["simulate", "--paths", "50", "--T", "5"], Some(d.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(d.path());
    let digest = s["config_digest"].as_str().unwrap().to_string();
    assert_eq!(digest.len(), 64);
    for f in ["plotdata.tsv", "paths.csv"] {
        let text = std::fs::read_to_string(d.path().join(f)).unwrap();
        assert!(text.starts_with(&format!("# config_digest={digest}\n")), "{f}");
    }
    assert_eq!(s["metadata"]["gaussian_method"].as_str().map(|m| !m.is_empty()), Some(true));
    assert!(s["runtime"]["wall_clock_seconds"].is_number());
}

#[test]
fn committed_default_config_matches_builtin_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = root.display().to_string();
    let out = duet(&["supr2", "--config", &cfg, "--paths", "100"], Some(a.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = duet(&["supr2", "--paths", "100", "--seed", "20240601"], Some(b.path()));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(a.path())["config_digest"], summary(b.path())["config_digest"]);
}

#[test]
fn seed_sources_in_priority_order() {
    let d = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_duet"));
        cmd.args(["supr2", "--paths", "20"]).args(extra).arg("--out").arg(d.path());
        match env {
            Some(s) => cmd.env("DUET_SEED", s),
            None => cmd.env_remove("DUET_SEED"),
        };
        assert_eq!(cmd.output().unwrap().status.code(), Some(0));
        summary(d.path())["master_seed"].as_u64().unwrap()
    };
    assert_eq!(run(Some("77"), &[]), 77);
    assert_eq!(run(Some("77"), &["--seed", "5"]), 5);
}

#[test]
fn help_lists_every_experiment() {
    let out = duet(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for e in ["simulate", "limit", "expansion", "moments", "decorrelation", "exit", "excursions", "near-zero", "martingale", "supr2"] {
        assert!(text.lines().any(|l| l.trim_start().starts_with(&format!("{e} "))), "{e}");
    }
}
