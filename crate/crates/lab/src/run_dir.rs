//! Run directory layout, persistence of every stage, and the operations
//! behind the CLI subcommands.
//!
//! ```text
//! <run>/config.conf        canonical config snapshot
//! <run>/dataset.csv        benchmark splits
//! <run>/checkpoints/*.ckpt trained parameters per stage
//! <run>/decisions.jsonl    per-query decision log
//! <run>/metrics.json       MetricsReport
//! <run>/timings.csv        wall-clock seconds per stage
//! <run>/STATUS             complete | incomplete, with stage progress
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tee_core::pipeline::{
    ab_compare, metrics_from_log, run_pipeline, Delta, ExperimentConfig, MetricsReport, PipelineOutput, QueryRecord,
    Stage, StageOutput,
};
use tee_core::synth::build_benchmark;

use crate::checkpoint::{calibration_arrays, experts_arrays, mlp_arrays, stats_arrays, write_arrays, NamedArray};
use crate::config_file::{config_hash, emit_config, parse_config};
use crate::dataset::{read_dataset, write_dataset, Dataset};
use crate::error::{LabError, LabResult};
use crate::records::{read_log, write_log};
use crate::report_io::{emit_json, read_json};

pub const CONFIG_FILE: &str = "config.conf";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const STATUS_FILE: &str = "STATUS";

pub fn read_text(path: &Path) -> LabResult<String> {
    fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> LabResult<()> {
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn create_dir(path: &Path) -> LabResult<()> {
    fs::create_dir_all(path).map_err(|e| LabError::io(path, e))
}

pub fn load_config(path: &Path) -> LabResult<ExperimentConfig> {
    parse_config(&read_text(path)?)
}

/// Stages a complete run of `cfg` reports, in order.
pub fn expected_stages(cfg: &ExperimentConfig) -> Vec<Stage> {
    Stage::ALL
        .into_iter()
        .filter(|s| *s != Stage::Contrastive || cfg.embed.contrastive_on)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStatus {
    pub complete: bool,
    pub completed: Vec<Stage>,
    pub failed: Option<(String, String)>,
}

impl RunStatus {
    fn text(&self) -> String {
        let names: Vec<&str> = self.completed.iter().map(|s| s.as_str()).collect();
        let mut out = format!(
            "status = {}\ncompleted = {}\n",
            if self.complete { "complete" } else { "incomplete" },
            names.join(",")
        );
        if let Some((stage, error)) = &self.failed {
            out.push_str(&format!("failed_stage = {stage}\nerror = {}\n", error.replace('\n', " ")));
        }
        out
    }

    fn parse(text: &str, path: &str) -> LabResult<Self> {
        let mut status = RunStatus { complete: false, completed: Vec::new(), failed: None };
        let mut failed_stage = None;
        let mut error = String::new();
        for (i, line) in text.lines().enumerate() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let v = v.trim();
            match k.trim() {
                "status" => status.complete = v == "complete",
                "completed" => {
                    for name in v.split(',').filter(|n| !n.is_empty()) {
                        status.completed.push(Stage::parse(name).ok_or_else(|| LabError::Format {
                            path: path.to_string(),
                            line: i + 1,
                            reason: format!("unknown stage `{name}`"),
                        })?);
                    }
                }
                "failed_stage" => failed_stage = Some(v.to_string()),
                "error" => error = v.to_string(),
                _ => {}
            }
        }
        status.failed = failed_stage.map(|s| (s, error));
        Ok(status)
    }
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(name)
    }

    pub fn status(&self) -> LabResult<RunStatus> {
        let p = self.path(STATUS_FILE);
        RunStatus::parse(&read_text(&p)?, &p.display().to_string())
    }

    pub fn config(&self) -> LabResult<ExperimentConfig> {
        load_config(&self.path(CONFIG_FILE))
    }

    pub fn dataset(&self) -> LabResult<Dataset> {
        let p = self.path(DATASET_FILE);
        read_dataset(&read_text(&p)?, &p.display().to_string())
    }

    pub fn decisions(&self) -> LabResult<Vec<QueryRecord>> {
        let p = self.path(DECISIONS_FILE);
        read_log(&read_text(&p)?, &p.display().to_string())
    }

    /// The stored report, refusing runs that did not finish.
    pub fn metrics(&self) -> LabResult<MetricsReport> {
        let status = self.status()?;
        if !status.complete {
            let cfg = self.config()?;
            let missing = expected_stages(&cfg)
                .into_iter()
                .filter(|s| !status.completed.contains(s))
                .map(|s| s.as_str().to_string())
                .collect();
            return Err(LabError::Incomplete { path: self.root.display().to_string(), missing });
        }
        let p = self.path(METRICS_FILE);
        read_json(&read_text(&p)?, &p.display().to_string())
    }

    fn write_status(&self, status: &RunStatus) -> LabResult<()> {
        write_text(&self.path(STATUS_FILE), &status.text())
    }

    fn write_checkpoint(&self, name: &str, arrays: &[NamedArray]) -> LabResult<()> {
        write_text(&self.checkpoint(name), &write_arrays(arrays))
    }

    fn persist(&self, output: &StageOutput<'_>) -> LabResult<()> {
        match output {
            StageOutput::Benchmark(b) => write_text(&self.path(DATASET_FILE), &write_dataset(&Dataset::from_benchmark(b))),
            StageOutput::Experts { models, .. } => self.write_checkpoint("experts.ckpt", &experts_arrays(models)),
            StageOutput::Stats { embedder, stats } => {
                self.write_checkpoint("embedder_initial.ckpt", &mlp_arrays("embedder", &embedder.params))?;
                self.write_checkpoint("stats_initial.ckpt", &stats_arrays(stats))
            }
            StageOutput::Contrastive { embedder, stats, .. } => {
                self.write_checkpoint("embedder.ckpt", &mlp_arrays("embedder", &embedder.params))?;
                self.write_checkpoint("stats.ckpt", &stats_arrays(stats))
            }
            StageOutput::Router { router, .. } => {
                self.write_checkpoint("router.ckpt", &mlp_arrays("router", &router.gate_net))
            }
            StageOutput::Calibration(cal) => {
                if let Some(ft) = &cal.finetuned {
                    self.write_checkpoint("finetuned.ckpt", &experts_arrays(ft))?;
                }
                self.write_checkpoint("calibration.ckpt", &calibration_arrays(cal))
            }
            StageOutput::Meta(meta) => match meta {
                Some(m) => self.write_checkpoint("meta.ckpt", &mlp_arrays("meta", &m.params)),
                None => Ok(()),
            },
            StageOutput::Evaluation { log, report } => {
                write_text(&self.path(DECISIONS_FILE), &write_log(log))?;
                write_text(&self.path(METRICS_FILE), &emit_json(report))
            }
        }
    }
}

/// Write the config snapshot and the benchmark only.
pub fn synth(cfg: &ExperimentConfig, out: &Path) -> LabResult<Dataset> {
    create_dir(out)?;
    let bench = build_benchmark(&cfg.benchmark)?;
    let ds = Dataset::from_benchmark(&bench);
    write_text(&out.join(CONFIG_FILE), &emit_config(cfg))?;
    write_text(&out.join(DATASET_FILE), &write_dataset(&ds))?;
    Ok(ds)
}

/// Full pipeline into a run directory. On failure the directory is left
/// with an `incomplete` STATUS naming the failed stage.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> LabResult<PipelineOutput> {
    let dir = RunDir::new(out);
    create_dir(&dir.root.join(CHECKPOINT_DIR))?;
    let _ = fs::remove_file(dir.path(METRICS_FILE));
    let _ = fs::remove_file(dir.path(DECISIONS_FILE));
    write_text(&dir.path(CONFIG_FILE), &emit_config(cfg))?;
    let mut status = RunStatus { complete: false, completed: Vec::new(), failed: None };
    dir.write_status(&status)?;

    let mut timings: Vec<(Stage, f64)> = Vec::new();
    let mut clock = Instant::now();
    let mut io_error: Option<LabError> = None;
    let result = run_pipeline(cfg, &config_hash(cfg), &mut |stage, output| {
        timings.push((stage, clock.elapsed().as_secs_f64()));
        let persisted = dir.persist(&output).and_then(|()| {
            status.completed.push(stage);
            dir.write_status(&status)
        });
        clock = Instant::now();
        persisted.map_err(|e| {
            io_error = Some(e);
            tee_core::Error::Precondition("could not persist stage output".into())
        })
    });
    let mut timing_text = String::from("stage,seconds\n");
    for (stage, secs) in &timings {
        timing_text.push_str(&format!("{},{secs:.6}\n", stage.as_str()));
    }
    write_text(&dir.path(TIMINGS_FILE), &timing_text)?;
    match result {
        Ok(out) => {
            status.complete = true;
            dir.write_status(&status)?;
            Ok(out)
        }
        Err(e) => {
            let stage = match &e {
                tee_core::Error::Stage { stage, .. } => stage.to_string(),
                _ => "unknown".into(),
            };
            let err = io_error.unwrap_or(LabError::Core(e));
            status.failed = Some((stage, err.to_string()));
            dir.write_status(&status)?;
            Err(err)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub queries: usize,
    pub report: MetricsReport,
}

/// Recompute every metric from the decision log alone and check it against
/// the stored report, byte for byte.
pub fn eval(run_dir: &Path) -> LabResult<Replay> {
    let dir = RunDir::new(run_dir);
    let stored = dir.metrics()?;
    let cfg = dir.config()?;
    let log = dir.decisions()?;
    let ds = dir.dataset()?;
    if ds.benchmark_hash != stored.meta.benchmark_hash {
        return Err(LabError::Replay(format!(
            "dataset hash {} differs from report benchmark hash {}",
            ds.benchmark_hash, stored.meta.benchmark_hash
        )));
    }
    let replayed = metrics_from_log(&log, stored.meta.clone(), cfg.ece_bins)?;
    let stored_text = read_text(&dir.path(METRICS_FILE))?;
    if replayed != stored || emit_json(&replayed) != stored_text {
        let diffs: Vec<String> = replayed
            .scalars()
            .into_iter()
            .zip(stored.scalars())
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0)
            .take(5)
            .collect();
        return Err(LabError::Replay(format!("recomputed metrics differ from {METRICS_FILE} (first: {diffs:?})")));
    }
    Ok(Replay { queries: log.len(), report: replayed })
}

/// Deltas `b − a` between two completed runs.
pub fn ab(run_a: &Path, run_b: &Path) -> LabResult<Vec<Delta>> {
    let a = RunDir::new(run_a).metrics()?;
    let b = RunDir::new(run_b).metrics()?;
    Ok(ab_compare(&a, &b)?)
}
