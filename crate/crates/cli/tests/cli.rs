use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"{
  "seed": 3,
  "dataset": { "num_classes": 4, "per_class": 60 },
  "schedule": { "timesteps": 50 },
  "models": { "eps_hidden": [16], "clf_hidden": [16] },
  "training": { "eps_steps": 60, "clf_steps": 60, "eval_interval": 20, "batch_size": 32 },
  "sampler": { "num_samples": 24 },
  "metrics": { "num_real": 200, "histogram_bins": 5 }
}"#;

fn eds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eds")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = eds(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = eds(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "expected a single-line error, got {stderr:?}");
    stderr
}

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.json");
        fs::write(&config, TINY).unwrap();
        Self { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn cfg(&self) -> String {
        self.config.to_string_lossy().into_owned()
    }

    fn train(&self) {
        let cfg = self.cfg();
        ok(&["gen-data", "--config", &cfg, "--out", &self.s("data")]);
        let data = self.s("data/train.csv");
        ok(&["train-eps", "--config", &cfg, "--out", &self.s("eps"), "--data", &data]);
        ok(&["train-clf", "--config", &cfg, "--out", &self.s("clf"), "--data", &data]);
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

fn header(path: &Path) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn full_pipeline() {
    let w = Workspace::new();
    w.train();
    let cfg = w.cfg();
    for f in ["data/train.csv", "data/reference.csv", "eps/eps.ckpt", "eps/eps_train.csv", "clf/clf.ckpt", "clf/clf_train.csv", "clf/config.json", "clf/command.json"] {
        assert!(w.path(f).exists(), "missing {f}");
    }

    ok(&[
        "sample", "--config", &cfg, "--out", &w.s("s"), "--eps-ckpt", &w.s("eps/eps.ckpt"), "--clf-ckpt", &w.s("clf/clf.ckpt"), "--scheme", "eds",
        "--gamma", "1.5",
    ]);
    let samples = csv_rows(&w.path("s/samples.csv"));
    assert_eq!(samples.len(), 24);
    assert_eq!(header(&w.path("s/trajectories.csv")), ["sample_id", "label", "t", "entropy", "grad_norm", "scale", "scheme"]);
    assert_eq!(csv_rows(&w.path("s/trajectories.csv")).len(), 24 * 50);
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("s/config.json")).unwrap()).unwrap();
    assert_eq!(echoed["guidance"]["gamma"], 1.5);

    ok(&["eval", "--config", &cfg, "--out", &w.s("e"), "--samples", &w.s("s/samples.csv")]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("e/metrics.json")).unwrap()).unwrap();
    assert!(metrics["frechet"].as_f64().unwrap() >= 0.0);
    assert!(metrics["conditional_accuracy"].as_f64().is_some());
    assert_eq!(csv_rows(&w.path("e/metrics.csv")).len(), 1);

    ok(&["analyze", "--config", &cfg, "--out", &w.s("a"), "--trajectories", &w.s("s/trajectories.csv"), "--threshold", "0.5"]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("a/vanishing_summary.json")).unwrap()).unwrap();
    let hist = csv_rows(&w.path("a/vanishing_histogram.csv"));
    assert_eq!(hist.len(), 5);
    let total: u64 = hist.iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    assert_eq!(total, summary["num_crossed"].as_u64().unwrap());
    assert_eq!(csv_rows(&w.path("a/crossings.csv")).len(), 24);

    ok(&[
        "sweep", "--config", &cfg, "--out", &w.s("sw"), "--eps-ckpt", &w.s("eps/eps.ckpt"), "--clf-ckpt", &w.s("clf/clf.ckpt"), "--scheme", "fixed",
        "--param", "scale", "--grid", "0.5,1,2", "--jobs", "2", "--method", "ddim", "--steps", "10",
    ]);
    let sweep_path = w.path("sw/sweep.csv");
    let head = header(&sweep_path);
    let col = head.iter().position(|h| h == "frechet").unwrap();
    let rows = csv_rows(&sweep_path);
    assert_eq!(rows.len(), 3);
    let fds: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
    assert!(fds.windows(2).all(|p| p[0] <= p[1]), "sweep not sorted: {fds:?}");
}

#[test]
fn sweep_is_independent_of_job_count() {
    let w = Workspace::new();
    w.train();
    let cfg = w.cfg();
    let run = |out: &str, jobs: &str| {
        ok(&[
            "sweep", "--config", &cfg, "--out", &w.s(out), "--eps-ckpt", &w.s("eps/eps.ckpt"), "--clf-ckpt", &w.s("clf/clf.ckpt"), "--scheme", "eds",
            "--param", "gamma", "--grid", "0.5,2", "--jobs", jobs, "--method", "ddim", "--steps", "5",
        ]);
        fs::read_to_string(w.path(out).join("sweep.csv")).unwrap()
    };
    assert_eq!(run("one", "1"), run("two", "2"));
}

#[test]
fn completed_run_requires_force() {
    let w = Workspace::new();
    let cfg = w.cfg();
    let out = w.s("data");
    ok(&["gen-data", "--config", &cfg, "--out", &out]);
    let err = fails(&["gen-data", "--config", &cfg, "--out", &out]);
    assert!(err.starts_with("error[run-exists]"), "{err}");
    ok(&["gen-data", "--config", &cfg, "--out", &out, "--force"]);
}

#[test]
fn training_is_deterministic() {
    let w = Workspace::new();
    let cfg = w.cfg();
    ok(&["train-clf", "--config", &cfg, "--out", &w.s("a")]);
    ok(&["train-clf", "--config", &cfg, "--out", &w.s("b")]);
    assert_eq!(fs::read(w.path("a/clf.ckpt")).unwrap(), fs::read(w.path("b/clf.ckpt")).unwrap());
    ok(&["train-clf", "--config", &cfg, "--out", &w.s("c"), "--seed", "4"]);
    assert_ne!(fs::read(w.path("a/clf.ckpt")).unwrap(), fs::read(w.path("c/clf.ckpt")).unwrap());
}

#[test]
fn eta_flag_is_echoed() {
    let w = Workspace::new();
    let out = ok(&["train-clf", "--config", &w.cfg(), "--out", &w.s("c"), "--eta", "0"]);
    assert!(out.contains("eta=0"), "{out}");
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("c/config.json")).unwrap()).unwrap();
    assert_eq!(echoed["training"]["eta"], 0.0);
}

#[test]
fn reference_scores_near_zero_against_itself() {
    let w = Workspace::new();
    let cfg = w.cfg();
    ok(&["gen-data", "--config", &cfg, "--out", &w.s("data")]);
    ok(&["eval", "--config", &cfg, "--out", &w.s("e"), "--samples", &w.s("data/reference.csv")]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("e/metrics.json")).unwrap()).unwrap();
    assert!(metrics["frechet"].as_f64().unwrap() < 0.05);
    assert_eq!(metrics["precision"], 1.0);
    assert_eq!(metrics["recall"], 1.0);
}

#[test]
fn malformed_csv_names_the_line() {
    let w = Workspace::new();
    let bad = w.path("bad.csv");
    fs::write(&bad, "label,x0,x1\n0,1.0,2.0\n1,oops,3.0\n").unwrap();
    let err = fails(&["train-eps", "--config", &w.cfg(), "--out", &w.s("e"), "--data", &bad.to_string_lossy()]);
    assert!(err.starts_with("error[csv]"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(!w.path("e/config.json").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let w = Workspace::new();
    let cfg = w.path("typo.json");
    fs::write(&cfg, r#"{ "schedule": { "timestep": 50 } }"#).unwrap();
    let err = fails(&["gen-data", "--config", &cfg.to_string_lossy(), "--out", &w.s("d")]);
    assert!(err.starts_with("error[config]"), "{err}");
    assert!(err.contains("timestep"), "{err}");
}

#[test]
fn schedule_mismatch_is_rejected() {
    let w = Workspace::new();
    w.train();
    let other = w.path("other.json");
    fs::write(&other, TINY.replace("\"timesteps\": 50", "\"timesteps\": 60")).unwrap();
    let err = fails(&[
        "sample", "--config", &other.to_string_lossy(), "--out", &w.s("s"), "--eps-ckpt", &w.s("eps/eps.ckpt"), "--clf-ckpt", &w.s("clf/clf.ckpt"),
    ]);
    assert!(err.starts_with("error[mismatch]"), "{err}");
}

#[test]
fn wrong_checkpoint_kind_is_rejected() {
    let w = Workspace::new();
    w.train();
    let err = fails(&["sample", "--config", &w.cfg(), "--out", &w.s("s"), "--eps-ckpt", &w.s("clf/clf.ckpt"), "--scheme", "none"]);
    assert!(err.starts_with("error[checkpoint]"), "{err}");
}

#[test]
fn sweep_rejects_parameter_of_other_scheme() {
    let w = Workspace::new();
    w.train();
    let err = fails(&[
        "sweep", "--config", &w.cfg(), "--out", &w.s("sw"), "--eps-ckpt", &w.s("eps/eps.ckpt"), "--clf-ckpt", &w.s("clf/clf.ckpt"), "--scheme", "fixed",
        "--param", "gamma", "--grid", "1",
    ]);
    assert!(err.starts_with("error[usage]"), "{err}");
}
