//! Acceptance run on the shipped seeded benchmark. Prints one PASS/FAIL line
//! per criterion and exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use tee_core::metrics::LocalizationRatio;
use tee_core::numerics::{cross_entropy_grad, grad_check, mlp_backward, mlp_forward, softmax, GradCheckConfig, MlpParams};
use tee_core::pipeline::{ab_compare, Detector, ExperimentConfig, MetricsReport, PipelineOutput};
use tee_core::selftest::{gradient_suite, probability_suite, sinkhorn_suite, Check};
use tee_core::Error;
use tee_lab::run_dir::{self, load_config, RunDir};
use tempfile::TempDir;

const GRAD_BUDGET: Duration = Duration::from_secs(10);
const SINKHORN_BUDGET: Duration = Duration::from_secs(5);
const PIPELINE_BUDGET: Duration = Duration::from_secs(300);
const RHO_MIN: f64 = 0.5;
const CONFIDENCE_GAP: f64 = 0.1;
const LOCALIZATION: f64 = 2.0;
const DETECTOR_MARGIN: f64 = 0.05;
const SPEARMAN_POST: f64 = 0.5;
const ACCURACY_DROP: f64 = 0.02;

struct Outcome {
    passed: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { passed: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.passed &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn timed_run(cfg: &ExperimentConfig, out: &Path) -> (PipelineOutput, Duration) {
    let start = Instant::now();
    let result = run_dir::run(cfg, out).unwrap_or_else(|e| panic!("run into {} failed: {e}", out.display()));
    (result, start.elapsed())
}

fn suite(out: &mut Outcome, checks: &[Check]) {
    for c in checks {
        out.check(c.passed, format!("{}: {}", c.name, c.detail));
    }
}

fn numeric_soundness(cfg: &ExperimentConfig) -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    suite(&mut out, &gradient_suite(cfg, cfg.seed).expect("gradient suite"));
    suite(&mut out, &probability_suite(10_000, cfg.seed).expect("probability suite"));
    let t = start.elapsed();
    out.check(t < GRAD_BUDGET, format!("runtime {t:.2?} < {GRAD_BUDGET:?}"));
    out
}

fn sinkhorn(cfg: &ExperimentConfig) -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    suite(&mut out, &sinkhorn_suite(16, 4, cfg.seed).expect("sinkhorn suite"));
    let t = start.elapsed();
    out.check(t < SINKHORN_BUDGET, format!("runtime {t:.2?} < {SINKHORN_BUDGET:?}"));
    out
}

fn phenotype(baseline: &MetricsReport, full_run: Duration) -> Outcome {
    let mut out = Outcome::new();
    out.check(!baseline.false_friends.is_empty(), "false-friend rows present".into());
    for r in &baseline.false_friends {
        let who = format!("expert {} on {}'s boundary", r.expert, r.other);
        out.check(
            r.boundary_accuracy <= 1.0 - RHO_MIN,
            format!("{who}: accuracy {:.3} <= {:.2}", r.boundary_accuracy, 1.0 - RHO_MIN),
        );
        let gap = (r.boundary_confidence - r.in_domain_confidence).abs();
        out.check(
            gap <= CONFIDENCE_GAP,
            format!(
                "{who}: confidence {:.3} vs in-domain {:.3} (gap {gap:.3} <= {CONFIDENCE_GAP})",
                r.boundary_confidence, r.in_domain_confidence
            ),
        );
        let ratio = LocalizationRatio::from_error_rates(1.0 - r.boundary_accuracy, 1.0 - r.in_domain_accuracy);
        out.check(ratio.at_least(LOCALIZATION), format!("{who}: localization ratio {ratio:?} >= {LOCALIZATION}"));
    }
    let ratio = baseline.phenotype.boundary_localization_ratio;
    out.check(ratio.at_least(LOCALIZATION), format!("overall localization ratio {ratio:?} >= {LOCALIZATION}"));
    out.check(full_run < PIPELINE_BUDGET, format!("default pipeline {full_run:.2?} < {PIPELINE_BUDGET:?}"));
    out
}

fn detector_metric(report: &MetricsReport, d: Detector, pick: fn(&tee_core::pipeline::DetectorRow) -> Option<f64>) -> Option<f64> {
    report.detector(d).and_then(pick)
}

fn margin(out: &mut Outcome, name: &str, ours: Option<f64>, base: Option<f64>) {
    match (ours, base) {
        (Some(a), Some(b)) => out.check(
            a >= b + DETECTOR_MARGIN,
            format!("{name}: {a:.3} >= {b:.3} + {DETECTOR_MARGIN}"),
        ),
        _ => out.check(false, format!("{name}: undefined ({ours:?} vs {base:?})")),
    }
}

fn intervention_wins(report: &MetricsReport) -> Outcome {
    let mut out = Outcome::new();
    margin(
        &mut out,
        "(a) disagreement AUROC vs max-softmax",
        detector_metric(report, Detector::Disagreement, |r| r.auroc),
        detector_metric(report, Detector::Msp, |r| r.auroc),
    );
    margin(
        &mut out,
        "(b) meta-expert PR-AUC vs confidence thresholding",
        detector_metric(report, Detector::MetaReliability, |r| r.pr_auc),
        detector_metric(report, Detector::CalibratedConfidence, |r| r.pr_auc),
    );
    match report.detector(Detector::Disagreement) {
        Some(r) => {
            let ok = r.precision_at_target.is_some_and(|p| p > r.precision_full_coverage);
            out.check(
                ok,
                format!(
                    "(c) precision at 80% coverage {:?} > full coverage {:.3}",
                    r.precision_at_target, r.precision_full_coverage
                ),
            );
        }
        None => out.check(false, "(c) disagreement detector missing".into()),
    }
    for r in &report.detectors {
        out.check(r.coverage_monotone, format!("(c) coverage non-increasing in threshold for {}", r.detector.as_str()));
    }
    out
}

fn calibration_effect(report: &MetricsReport) -> Outcome {
    let mut out = Outcome::new();
    let c = &report.calibration;
    match (c.spearman_pre, c.spearman_post) {
        (Some(pre), Some(post)) => {
            out.check(post >= SPEARMAN_POST, format!("spearman after finetune {post:.3} >= {SPEARMAN_POST}"));
            out.check(post > pre, format!("spearman after {post:.3} > before {pre:.3}"));
        }
        other => out.check(false, format!("spearman undefined: {other:?}")),
    }
    let drop = c.in_domain_accuracy_pre - c.in_domain_accuracy_post;
    out.check(
        drop <= ACCURACY_DROP,
        format!(
            "in-domain accuracy {:.3} -> {:.3} (drop {drop:.3} <= {ACCURACY_DROP})",
            c.in_domain_accuracy_pre, c.in_domain_accuracy_post
        ),
    );
    out
}

fn determinism(run_a: &Path, run_b: &Path) -> Outcome {
    let mut out = Outcome::new();
    let a = std::fs::read(run_a.join(run_dir::METRICS_FILE)).expect("metrics a");
    let b = std::fs::read(run_b.join(run_dir::METRICS_FILE)).expect("metrics b");
    out.check(a == b, format!("same config and seed give byte-identical reports ({} bytes)", a.len()));
    let la = std::fs::read(run_a.join(run_dir::DECISIONS_FILE)).expect("log a");
    let lb = std::fs::read(run_b.join(run_dir::DECISIONS_FILE)).expect("log b");
    out.check(la == lb, "decision logs byte-identical".into());
    match run_dir::eval(run_a) {
        Ok(r) => out.check(true, format!("replay from persisted log: {} queries, identical metrics", r.queries)),
        Err(e) => out.check(false, format!("replay failed: {e}")),
    }
    out
}

fn corrupted_gradient_rejected(run: &PipelineOutput) -> (bool, String) {
    let params: &MlpParams = &run.system.experts[0].params;
    let sample = &run.benchmark.test[0];
    let f = |q: &MlpParams| {
        let (logits, cache) = mlp_forward(q, &sample.features)?;
        let probs = softmax(&logits)?;
        let grad = mlp_backward(q, &cache, &cross_entropy_grad(&probs, sample.class_label))?;
        Ok((-probs[sample.class_label].ln(), grad))
    };
    let corrupted = |q: &MlpParams| {
        let (loss, mut g) = f(q)?;
        for i in 0..g.param_count() {
            *g.coord_mut(i) *= 1.5;
        }
        Ok((loss, g))
    };
    let cfg = GradCheckConfig::default();
    let honest = grad_check(params, f, cfg).expect("grad check");
    let broken = grad_check(params, corrupted, cfg).expect("grad check");
    (
        honest.pass && !broken.pass,
        format!(
            "grad_check exact {:.1e} passes, corrupted {:.1e} fails",
            honest.max_relative_error, broken.max_relative_error
        ),
    )
}

fn negative_controls(work: &Path, reference: &PipelineOutput) -> Outcome {
    let mut out = Outcome::new();
    let kappa0 = load_config(&configs().join("kappa0.conf")).expect("kappa0.conf");
    out.check(kappa0.benchmark.context_informativeness == 0.0, "kappa0.conf sets context_informativeness = 0".into());
    match run_dir::run(&kappa0, &work.join("kappa0")) {
        Ok(r) => {
            let reported = RunDir::new(work.join("kappa0")).metrics().is_ok();
            let boundary = detector_metric(&r.report, Detector::Disagreement, |d| d.auroc_boundary);
            out.check(reported, format!("kappa = 0 run completes and reports (disagreement boundary AUROC {boundary:?})"));
        }
        Err(e) => out.check(false, format!("kappa = 0 run failed: {e}")),
    }

    let (ok, detail) = corrupted_gradient_rejected(reference);
    out.check(ok, detail);

    let mut other = load_config(&configs().join("default.conf")).expect("default.conf");
    other.benchmark.seed += 1;
    let (mismatched, _) = timed_run(&other, &work.join("other-benchmark"));
    match ab_compare(&reference.report, &mismatched.report) {
        Err(Error::Comparison(msg)) => out.check(true, format!("mismatched benchmark rejected: {msg}")),
        Err(e) => out.check(false, format!("mismatched benchmark gave the wrong error: {e}")),
        Ok(_) => out.check(false, "mismatched benchmark was compared".into()),
    }
    out
}

fn main() -> ExitCode {
    let work = TempDir::new().expect("tempdir");
    let cfg = load_config(&configs().join("default.conf")).expect("default.conf");
    let baseline_cfg = load_config(&configs().join("baseline.conf")).expect("baseline.conf");

    let (full, full_time) = timed_run(&cfg, &work.path().join("default-a"));
    timed_run(&cfg, &work.path().join("default-b"));
    let (baseline, _) = timed_run(&baseline_cfg, &work.path().join("baseline"));

    let results = [
        ("1 numeric soundness", numeric_soundness(&cfg)),
        ("2 sinkhorn invariants", sinkhorn(&cfg)),
        ("3 phenotype reproduction", phenotype(&baseline.report, full_time)),
        ("4 intervention wins", intervention_wins(&full.report)),
        ("5 calibration effect", calibration_effect(&full.report)),
        ("6 determinism and replay", determinism(&work.path().join("default-a"), &work.path().join("default-b"))),
        ("7 negative controls", negative_controls(work.path(), &full)),
    ];

    for (name, outcome) in &results {
        for line in &outcome.lines {
            eprintln!("    {line}");
        }
        println!("{} criterion {name}", if outcome.passed { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|(_, o)| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
