use std::sync::OnceLock;

use tee_core::experts::{contrastive_embed_train, Embedder, ExpertStats, FeaturePair};
use tee_core::pipeline::{
    ab_compare, metrics_from_log, run_pipeline, run_pipeline_quiet, Detector, ExperimentConfig, PipelineOutput, Schedule,
    Stage, StageOutput,
};
use tee_core::synth::{make_contrastive_pairs, CaseTag, PairRelation};
use tee_core::Error;

struct Traced {
    out: PipelineOutput,
    pre_contrastive: (Embedder, Vec<ExpertStats>),
    stages: Vec<Stage>,
}

fn default_run() -> &'static Traced {
    static RUN: OnceLock<Traced> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut pre = None;
        let mut stages = Vec::new();
        let out = run_pipeline(&ExperimentConfig::default(), "test", &mut |stage, output| {
            stages.push(stage);
            if let StageOutput::Stats { embedder, stats } = output {
                pre = Some((embedder.clone(), stats.to_vec()));
            }
            Ok(())
        })
        .unwrap();
        Traced { out, pre_contrastive: pre.unwrap(), stages }
    })
}

fn mean_pair_distance(embedder: &Embedder, out: &PipelineOutput, relation: PairRelation) -> f64 {
    let pairs = make_contrastive_pairs(&out.benchmark, 500, 7).unwrap();
    let picked: Vec<_> = pairs.iter().filter(|p| p.relation == relation).collect();
    let total: f64 = picked
        .iter()
        .map(|p| {
            let a = embedder.embed(&out.benchmark.train[p.anchor].features).unwrap();
            let b = embedder.embed(&out.benchmark.train[p.other].features).unwrap();
            a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        })
        .sum();
    total / picked.len() as f64
}

#[test]
fn stages_are_reported_in_order() {
    let stages = &default_run().stages;
    let expected = [
        Stage::Synth,
        Stage::Experts,
        Stage::Stats,
        Stage::Contrastive,
        Stage::Router,
        Stage::Calibration,
        Stage::Meta,
        Stage::Evaluate,
    ];
    assert_eq!(stages.as_slice(), expected.as_slice());
}

#[test]
fn same_seed_gives_identical_reports() {
    let again = run_pipeline_quiet(&ExperimentConfig::default(), "test").unwrap();
    let first = &default_run().out;
    assert_eq!(first.report, again.report);
    assert_eq!(format!("{:?}", first.report), format!("{:?}", again.report));
    assert_eq!(first.log, again.log);
}

#[test]
fn report_is_recomputable_from_log() {
    let out = &default_run().out;
    let replay = metrics_from_log(&out.log, out.report.meta.clone(), ExperimentConfig::default().ece_bins).unwrap();
    assert_eq!(replay, out.report);
}

#[test]
fn training_losses_decrease() {
    let out = &default_run().out;
    for r in &out.expert_reports {
        assert!(r.final_loss < r.initial_loss, "{r:?}");
    }
    let trace = &out.contrastive_trace;
    assert!(trace.last().unwrap() < trace.first().unwrap());
    let rt = &out.router_trace;
    assert!(rt.last().unwrap().total < rt.first().unwrap().total);
}

#[test]
fn long_contrastive_schedule_pushes_false_friends_apart() {
    let run = default_run();
    let bench = &run.out.benchmark;
    let cfg = ExperimentConfig::default();
    let pairs = make_contrastive_pairs(bench, 500, cfg.seed).unwrap();
    let features: Vec<FeaturePair<'_>> = pairs
        .iter()
        .map(|p| (bench.train[p.anchor].features.as_slice(), bench.train[p.other].features.as_slice(), p.relation))
        .collect();
    let schedule = Schedule { epochs: 400, learning_rate: 0.5, batch_size: 32 };
    let initial = &run.pre_contrastive.0;
    let (tuned, trace) = contrastive_embed_train(initial, &features, 1.0, &schedule.sgd(cfg.seed)).unwrap();
    assert!(trace.last().unwrap() < trace.first().unwrap());
    let before = mean_pair_distance(initial, &run.out, PairRelation::FalseFriend);
    let after = mean_pair_distance(&tuned, &run.out, PairRelation::FalseFriend);
    assert!(after > before, "false-friend distance {before} -> {after}");
}

#[test]
fn meta_expert_trusts_gaps_less_than_in_domain() {
    let log = &default_run().out.log;
    let mean = |tag: CaseTag| {
        let v: Vec<f64> = log
            .iter()
            .filter(|r| r.case_tag == tag)
            .map(|r| r.score(Detector::MetaReliability).unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(CaseTag::Gap) > mean(CaseTag::InDomain));
}

#[test]
fn finetune_raises_boundary_entropy_more_than_in_domain() {
    let c = &default_run().out.report.calibration;
    assert!(c.boundary_entropy_post > c.boundary_entropy_pre, "{c:?}");
    assert!(
        c.boundary_entropy_post - c.boundary_entropy_pre > c.in_domain_entropy_post - c.in_domain_entropy_pre,
        "{c:?}"
    );
}

#[test]
fn baseline_arm_compares_against_default() {
    let base = run_pipeline_quiet(&ExperimentConfig::default().baseline(), "test").unwrap();
    let deltas = ab_compare(&default_run().out.report, &base.report).unwrap();
    assert!(!deltas.is_empty());
    assert!(base.report.meta_expert.is_none());
}

#[test]
fn mismatched_benchmarks_are_not_compared() {
    let mut cfg = ExperimentConfig::default();
    cfg.benchmark.seed = 7;
    let other = run_pipeline_quiet(&cfg, "test").unwrap();
    let err = ab_compare(&default_run().out.report, &other.report).unwrap_err();
    assert!(matches!(err, Error::Comparison(_)), "{err}");
}

#[test]
fn invalid_config_fails_in_synth_stage_naming_the_key() {
    let mut cfg = ExperimentConfig::default();
    cfg.detect.gamma = 2.0;
    let err = run_pipeline_quiet(&cfg, "test").unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "synth", .. }), "{err}");
    assert!(matches!(err.root(), Error::Config { key, .. } if key == "detect.gamma"), "{err}");

    let mut cfg = ExperimentConfig::default();
    cfg.benchmark.num_domains = 1;
    cfg.benchmark.false_friend_pairs.clear();
    let err = run_pipeline_quiet(&cfg, "test").unwrap_err();
    assert!(err.to_string().contains("benchmark."), "{err}");
}

#[test]
fn sink_errors_abort_the_run() {
    let err = run_pipeline(&ExperimentConfig::default(), "test", &mut |stage, _| {
        if stage == Stage::Router {
            Err(Error::Precondition("stop".into()))
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert_eq!(err.root(), &Error::Precondition("stop".into()));
}
