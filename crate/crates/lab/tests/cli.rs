mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tee_lab::config_file::emit_config;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tee-lab"))
}

fn tee_lab(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

struct Runs {
    dir: TempDir,
    a: PathBuf,
    b: PathBuf,
}

/// Two completed runs on the same benchmark: the small config and its baseline.
fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = common::small_config();
        let ca = write_config(dir.path(), "a.conf", &emit_config(&cfg));
        let cb = write_config(dir.path(), "b.conf", &emit_config(&cfg.baseline()));
        let a = dir.path().join("run-a");
        let b = dir.path().join("run-b");
        for (c, out) in [(&ca, &a), (&cb, &b)] {
            let o = tee_lab(&["run", "--config", c, "--out", out.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        Runs { dir, a, b }
    })
}

#[test]
fn run_produces_the_documented_layout() {
    let a = &runs().a;
    for name in ["config.conf", "dataset.csv", "decisions.jsonl", "metrics.json", "timings.csv", "STATUS"] {
        assert!(a.join(name).is_file(), "missing {name}");
    }
    assert!(a.join("checkpoints").is_dir());
    assert!(std::fs::read_to_string(a.join("STATUS")).unwrap().starts_with("status = complete"));
}

#[test]
fn eval_replays_identically() {
    let o = tee_lab(&["eval", "--run", runs().a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("all metrics identical"));
}

#[test]
fn eval_detects_edited_metrics() {
    let dir = TempDir::new().unwrap();
    let copy = dir.path().join("run");
    std::fs::create_dir(&copy).unwrap();
    for entry in std::fs::read_dir(&runs().a).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), copy.join(entry.file_name())).unwrap();
        }
    }
    let metrics = copy.join("metrics.json");
    let text = std::fs::read_to_string(&metrics).unwrap();
    let edited = text.replacen("\"auroc\": ", "\"auroc\": 1", 1);
    assert_ne!(edited, text);
    std::fs::write(&metrics, edited).unwrap();
    let o = tee_lab(&["eval", "--run", copy.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("auroc"), "{}", stderr(&o));
}

#[test]
fn report_json_matches_metrics_file() {
    let a = &runs().a;
    let o = tee_lab(&["report", "--run", a.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(o.stdout, std::fs::read(a.join("metrics.json")).unwrap());
}

#[test]
fn report_csv_writes_every_table() {
    let out = runs().dir.path().join("csv-a");
    let o = tee_lab(&[
        "report", "--run", runs().a.to_str().unwrap(), "--format", "csv", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in [
        "detectors.csv", "curves.csv", "phenotype.csv", "false_friends.csv",
        "reliability.csv", "verdicts.csv", "actions.csv", "scalars.csv",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn ab_prints_deltas() {
    let r = runs();
    let o = tee_lab(&["ab", "--run-a", r.a.to_str().unwrap(), "--run-b", r.b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().count() > 10);
    assert!(text.contains("auroc"));
}

#[test]
fn ab_rejects_different_benchmarks() {
    let dir = TempDir::new().unwrap();
    let mut cfg = common::small_config();
    cfg.benchmark.seed = 7;
    let c = write_config(dir.path(), "c.conf", &emit_config(&cfg));
    let other = dir.path().join("run-c");
    let o = tee_lab(&["run", "--config", &c, "--out", other.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tee_lab(&["ab", "--run-a", runs().a.to_str().unwrap(), "--run-b", other.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("benchmark"), "{}", stderr(&o));
}

#[test]
fn failed_stage_leaves_an_incomplete_run() {
    let dir = TempDir::new().unwrap();
    let mut cfg = common::small_config();
    cfg.benchmark.gap_clusters = 0;
    let c = write_config(dir.path(), "g.conf", &emit_config(&cfg));
    let out = dir.path().join("run");
    let o = tee_lab(&["run", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let status = std::fs::read_to_string(out.join("STATUS")).unwrap();
    assert!(status.contains("status = incomplete"));
    assert!(status.contains("failed_stage = meta"));
    assert!(!out.join("metrics.json").exists());

    let o = tee_lab(&["report", "--run", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing stages: meta, evaluate"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let mut text = emit_config(&common::small_config());
    text = text.replace("detect.gamma = ", "detect.gamma = -");
    let c = write_config(dir.path(), "bad.conf", &text);
    let o = tee_lab(&["run", "--config", &c, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("detect.gamma"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&tee_lab(&["run"])), 1);
    assert_eq!(code(&tee_lab(&["report", "--run", "x", "--format", "xml"])), 1);
}

#[test]
fn missing_run_exits_two() {
    let dir = TempDir::new().unwrap();
    let o = tee_lab(&["eval", "--run", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn default_config_round_trips_through_synth() {
    let dir = TempDir::new().unwrap();
    let o = tee_lab(&["default-config"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o).replace(
        &format!("benchmark.samples_train = {}", tee_lab::config_file::config_entries(&Default::default())
            .into_iter().find(|(k, _)| k == "benchmark.samples_train").unwrap().1),
        "benchmark.samples_train = 20",
    );
    let c = write_config(dir.path(), "d.conf", &text);
    let out = dir.path().join("synth");
    let o = tee_lab(&["synth", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("benchmark "));
    assert!(out.join("dataset.csv").is_file() && out.join("config.conf").is_file());
}

#[test]
fn selftest_passes() {
    let o = tee_lab(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
