//! End-to-end experiment: synthesis, training, calibration, meta-expert and
//! evaluation, with every stage output handed to a caller-supplied sink.

mod config;
mod record;
mod report;

pub use config::{
    CalibrationMode, CalibrationOrder, CalibrationStage, DetectStage, EmbedStage, ExperimentConfig, ExpertStage,
    MetaStage, Schedule, Switches,
};
pub use record::{Detector, QueryRecord};
pub use report::{
    ab_compare, metrics_from_log, CalibrationEffect, CurveBlock, Delta, DetectorRow, FalseFriendRow, MetaBlock,
    MetricsReport, Monitoring, RunMeta, VerdictBlock, CURVE_DETECTORS, LABEL_SOURCE, TARGET_COVERAGE,
};

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::calibration::{
    apply_temperature, boundary_aware_finetune, fit_adaptive_temperature, fit_temperature, AdaptiveTempParams,
    TemperatureParams,
};
use crate::detection::{
    assemble_meta_input, disagreement_report, jensen_shannon, meta_predict, predictive_variance, system_response,
    train_meta_expert, verdict_kind, MetaExpertModel, MetaSignals, MetaTrainConfig, VerdictKind,
};
use crate::error::Result;
use crate::experts::{
    contrastive_embed_train, fit_expert_stats, train_expert, Embedder, ExpertModel, ExpertStats, FeaturePair,
    TrainReport,
};
use crate::numerics::{argmax, entropy_unchecked, softmax_unchecked};
use crate::router::{decide, geometry, train_router, RouterLossTerms, RouterParams, RouterSample, RoutingDecision};
use crate::synth::{build_benchmark, make_contrastive_pairs, Benchmark, CaseTag, ClusterKind, LabeledExample, Owner};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Experts,
    Stats,
    Contrastive,
    Router,
    Calibration,
    Meta,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Experts,
        Stage::Stats,
        Stage::Contrastive,
        Stage::Router,
        Stage::Calibration,
        Stage::Meta,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Experts => "experts",
            Stage::Stats => "stats",
            Stage::Contrastive => "contrastive",
            Stage::Router => "router",
            Stage::Calibration => "calibration",
            Stage::Meta => "meta",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

/// Post-hoc transform from deployed logits to a class distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Calibrator {
    Identity,
    Scalar(TemperatureParams),
    Adaptive(AdaptiveTempParams),
}

impl Calibrator {
    pub fn apply(&self, logits: &[f64]) -> Result<Vec<f64>> {
        match self {
            Calibrator::Identity => Ok(softmax_unchecked(logits)),
            Calibrator::Scalar(t) => apply_temperature(logits, t.t),
            Calibrator::Adaptive(p) => p.apply(logits),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationArtifacts {
    /// Scalar temperatures of the original experts, used by the
    /// calibration-thresholding baseline in every arm.
    pub baseline_temperatures: Vec<TemperatureParams>,
    /// Fine-tuned experts when boundary-aware calibration ran.
    pub finetuned: Option<Vec<ExpertModel>>,
    pub calibrators: Vec<Calibrator>,
}

/// Everything needed to answer a query.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModels {
    pub embedder: Embedder,
    pub stats: Vec<ExpertStats>,
    pub router: RouterParams,
    pub experts: Vec<ExpertModel>,
    pub calibration: CalibrationArtifacts,
    pub meta: Option<MetaExpertModel>,
}

impl SystemModels {
    pub fn deployed_experts(&self) -> &[ExpertModel] {
        self.calibration.finetuned.as_deref().unwrap_or(&self.experts)
    }
}

/// Stage results as they become available.
#[derive(Debug, Clone, Copy)]
pub enum StageOutput<'a> {
    Benchmark(&'a Benchmark),
    Experts {
        models: &'a [ExpertModel],
        reports: &'a [TrainReport],
    },
    Stats {
        embedder: &'a Embedder,
        stats: &'a [ExpertStats],
    },
    Contrastive {
        embedder: &'a Embedder,
        stats: &'a [ExpertStats],
        trace: &'a [f64],
    },
    Router {
        router: &'a RouterParams,
        trace: &'a [RouterLossTerms],
    },
    Calibration(&'a CalibrationArtifacts),
    Meta(Option<&'a MetaExpertModel>),
    Evaluation {
        log: &'a [QueryRecord],
        report: &'a MetricsReport,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub benchmark: Benchmark,
    pub expert_reports: Vec<TrainReport>,
    pub contrastive_trace: Vec<f64>,
    pub router_trace: Vec<RouterLossTerms>,
    pub system: SystemModels,
    pub log: Vec<QueryRecord>,
    pub report: MetricsReport,
}

/// SHA-256 over a canonical byte encoding of every sample in every split.
pub fn benchmark_hash(bench: &Benchmark) -> String {
    splits_hash([&bench.train, &bench.val, &bench.test])
}

/// [`benchmark_hash`] for splits held outside a [`Benchmark`], in train, val,
/// test order.
pub fn splits_hash(splits: [&[LabeledExample]; 3]) -> String {
    let mut h = Sha256::new();
    for split in splits {
        h.update((split.len() as u64).to_le_bytes());
        for e in split {
            for v in &e.features {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update((e.class_label as u64).to_le_bytes());
            let owner = match e.owner {
                Owner::Domain(d) => d as u64,
                Owner::Gap => u64::MAX,
            };
            h.update(owner.to_le_bytes());
            h.update((e.cluster_id as u64).to_le_bytes());
            h.update([e.case_tag.index() as u8]);
        }
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn owned_by(split: &[LabeledExample], d: usize) -> Vec<&LabeledExample> {
    split.iter().filter(|e| e.owner == Owner::Domain(d)).collect()
}

fn shared_pair(bench: &Benchmark, cluster_id: usize) -> Option<(usize, usize)> {
    match bench.clusters.get(cluster_id)?.kind {
        ClusterKind::Shared(a, b) => Some((a, b)),
        _ => None,
    }
}

fn stage<T>(s: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(s.as_str()))
}

type Sink<'s> = dyn FnMut(Stage, StageOutput<'_>) -> Result<()> + 's;

fn emit(sink: &mut Sink<'_>, s: Stage, out: StageOutput<'_>) -> Result<()> {
    stage(s, sink(s, out))
}

fn train_experts(cfg: &ExperimentConfig, bench: &Benchmark) -> Result<(Vec<ExpertModel>, Vec<TrainReport>)> {
    let sgd = cfg.expert.schedule.sgd(cfg.seed);
    let arch = cfg.expert_arch();
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for d in 0..bench.num_domains() {
        let (m, r) = train_expert(
            d,
            &owned_by(&bench.train, d),
            &owned_by(&bench.val, d),
            bench.classes(),
            arch,
            &sgd,
        )?;
        models.push(m);
        reports.push(r);
    }
    Ok((models, reports))
}

fn fit_all_stats(embedder: &Embedder, bench: &Benchmark) -> Result<Vec<ExpertStats>> {
    (0..bench.num_domains())
        .map(|d| fit_expert_stats(embedder, owned_by(&bench.train, d).into_iter().map(|e| e.features.as_slice())))
        .collect()
}

fn contrastive(cfg: &ExperimentConfig, bench: &Benchmark, embedder: &Embedder) -> Result<(Embedder, Vec<f64>)> {
    let pairs = make_contrastive_pairs(bench, cfg.embed.pairs_per_relation, cfg.seed)?;
    let feature_pairs: Vec<FeaturePair<'_>> = pairs
        .iter()
        .map(|p| {
            (
                bench.train[p.anchor].features.as_slice(),
                bench.train[p.other].features.as_slice(),
                p.relation,
            )
        })
        .collect();
    contrastive_embed_train(embedder, &feature_pairs, cfg.embed.margin, &cfg.embed.schedule.sgd(cfg.seed))
}

fn router_stage(cfg: &ExperimentConfig, bench: &Benchmark, embedder: &Embedder, stats: &[ExpertStats]) -> Result<(RouterParams, Vec<RouterLossTerms>)> {
    let rcfg = cfg.effective_router();
    let samples: Vec<RouterSample> = bench
        .train
        .iter()
        .map(|e| {
            let embedding = embedder.embed(&e.features)?;
            let geometry = geometry(&embedding, stats, rcfg.kernel_sigma)?;
            let target = match (e.case_tag, e.owner) {
                (CaseTag::InDomain, Owner::Domain(d)) => Some(d),
                _ => None,
            };
            Ok(RouterSample {
                embedding,
                geometry,
                target,
            })
        })
        .collect::<Result<_>>()?;
    let init = RouterParams::init(embedder.dim(), bench.num_domains(), rcfg, cfg.seed)?;
    train_router(&init, &samples, &cfg.router_schedule.sgd(cfg.seed))
}

fn val_logits(model: &ExpertModel, bench: &Benchmark) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let val = owned_by(&bench.val, model.domain);
    let logits = val.iter().map(|e| model.logits(&e.features)).collect::<Result<_>>()?;
    Ok((logits, val.iter().map(|e| e.class_label).collect()))
}

fn finetune_expert(cfg: &ExperimentConfig, bench: &Benchmark, expert: &ExpertModel) -> Result<ExpertModel> {
    let d = expert.domain;
    let shared = &bench.domains[d].shared_cluster_ids;
    if shared.is_empty() {
        // nothing to flatten for an expert without false friends
        return Ok(expert.clone());
    }
    let in_domain: Vec<(&[f64], usize)> = bench
        .train
        .iter()
        .filter(|e| e.owner == Owner::Domain(d) && e.case_tag == CaseTag::InDomain)
        .map(|e| (e.features.as_slice(), e.class_label))
        .collect();
    let boundary: Vec<&[f64]> = bench
        .train
        .iter()
        .filter(|e| shared.contains(&e.cluster_id))
        .map(|e| e.features.as_slice())
        .collect();
    boundary_aware_finetune(
        expert,
        &in_domain,
        &boundary,
        cfg.calibration.lambda_flat,
        &cfg.calibration.finetune.sgd(cfg.seed),
    )
}

fn calibration_stage(cfg: &ExperimentConfig, bench: &Benchmark, experts: &[ExpertModel]) -> Result<CalibrationArtifacts> {
    let fit_scalar = |m: &ExpertModel| -> Result<TemperatureParams> {
        let (z, y) = val_logits(m, bench)?;
        fit_temperature(&z, &y)
    };
    let baseline_temperatures = experts.iter().map(fit_scalar).collect::<Result<Vec<_>>>()?;
    let (finetuned, calibrators) = match cfg.switches.calibration_mode {
        CalibrationMode::None => (None, experts.iter().map(|_| Calibrator::Identity).collect()),
        CalibrationMode::Temperature => (None, baseline_temperatures.iter().map(|&t| Calibrator::Scalar(t)).collect()),
        CalibrationMode::Adaptive => {
            let cal = experts
                .iter()
                .map(|m| {
                    let (z, y) = val_logits(m, bench)?;
                    Ok(Calibrator::Adaptive(fit_adaptive_temperature(&z, &y)?))
                })
                .collect::<Result<_>>()?;
            (None, cal)
        }
        CalibrationMode::BoundaryAware => {
            let tuned = experts
                .iter()
                .map(|m| finetune_expert(cfg, bench, m))
                .collect::<Result<Vec<_>>>()?;
            let temps = match cfg.calibration.order {
                CalibrationOrder::FinetuneThenTemperature => tuned.iter().map(fit_scalar).collect::<Result<Vec<_>>>()?,
                CalibrationOrder::TemperatureThenFinetune => baseline_temperatures.clone(),
            };
            (Some(tuned), temps.into_iter().map(Calibrator::Scalar).collect())
        }
    };
    Ok(CalibrationArtifacts {
        baseline_temperatures,
        finetuned,
        calibrators,
    })
}

/// Per-query quantities shared by meta-expert training and evaluation.
struct Observation {
    embedding: Vec<f64>,
    system: RoutingDecision,
    diagnostic: RoutingDecision,
    original_logits: Vec<Vec<f64>>,
    original_probs: Vec<Vec<f64>>,
    deployed_logits: Vec<Vec<f64>>,
    final_probs: Vec<Vec<f64>>,
    diag_jsd: f64,
}

impl Observation {
    fn meta_input(&self, mode: crate::detection::MetaInputMode) -> Vec<f64> {
        assemble_meta_input(
            mode,
            &MetaSignals {
                embedding: &self.embedding,
                raw_affinities: &self.system.raw_affinities,
                all_outputs: &self.final_probs,
                mean_pairwise_jsd: self.diag_jsd,
                margin: self.system.margin,
            },
        )
    }
}

fn observe(cfg: &ExperimentConfig, sys: &SystemModels, x: &[f64]) -> Result<Observation> {
    let embedding = sys.embedder.embed(x)?;
    let geo = geometry(&embedding, &sys.stats, sys.router.config.kernel_sigma)?;
    let system = decide(&sys.router, &embedding, geo.clone(), cfg.system_k())?;
    let diagnostic = decide(&sys.router, &embedding, geo, 2)?;
    let original_logits: Vec<Vec<f64>> = sys.experts.iter().map(|m| m.logits(x)).collect::<Result<_>>()?;
    let original_probs = original_logits.iter().map(|z| softmax_unchecked(z)).collect();
    let deployed_logits: Vec<Vec<f64>> = sys.deployed_experts().iter().map(|m| m.logits(x)).collect::<Result<_>>()?;
    let final_probs: Vec<Vec<f64>> = deployed_logits
        .iter()
        .zip(&sys.calibration.calibrators)
        .map(|(z, c)| c.apply(z))
        .collect::<Result<_>>()?;
    let (a, b) = (diagnostic.selected[0], diagnostic.selected[1]);
    let diag_jsd = jensen_shannon(&final_probs[a], &final_probs[b])?;
    Ok(Observation {
        embedding,
        system,
        diagnostic,
        original_logits,
        original_probs,
        deployed_logits,
        final_probs,
        diag_jsd,
    })
}

fn meta_stage(cfg: &ExperimentConfig, bench: &Benchmark, sys: &SystemModels) -> Result<MetaExpertModel> {
    let mut inputs = Vec::with_capacity(bench.val.len());
    let mut tags = Vec::with_capacity(bench.val.len());
    for e in &bench.val {
        inputs.push(observe(cfg, sys, &e.features)?.meta_input(cfg.meta.input_mode));
        tags.push(e.case_tag);
    }
    train_meta_expert(
        &inputs,
        &tags,
        cfg.meta.input_mode,
        &MetaTrainConfig {
            hidden: cfg.meta.hidden,
            sgd: cfg.meta.schedule.sgd(cfg.seed),
        },
    )
}

fn meta_kind(distribution: &[f64]) -> VerdictKind {
    match CaseTag::ALL[argmax(distribution)] {
        CaseTag::InDomain => VerdictKind::InCoverage,
        CaseTag::Boundary => VerdictKind::BoundaryViolation,
        CaseTag::Gap => VerdictKind::CoverageGap,
    }
}

fn evaluate_query(cfg: &ExperimentConfig, bench: &Benchmark, sys: &SystemModels, id: usize, e: &LabeledExample) -> Result<QueryRecord> {
    let obs = observe(cfg, sys, &e.features)?;
    let d = &obs.system;
    let outputs: Vec<Vec<f64>> = d.selected.iter().map(|&s| obs.final_probs[s].clone()).collect();
    let classes = bench.classes();
    let mut system_probs = alloc::vec![0.0; classes];
    for (p, w) in outputs.iter().zip(&d.selected_weights) {
        for (acc, v) in system_probs.iter_mut().zip(p) {
            *acc += w * v;
        }
    }
    let prediction = argmax(&system_probs);
    let confidence = system_probs[prediction];

    let report = disagreement_report(d, &outputs, cfg.detect.gamma)?;
    let (table_kind, _) = verdict_kind(&d.distances, &report, cfg.detect.thresholds())?;
    let meta = sys
        .meta
        .as_ref()
        .map(|m| meta_predict(m, &obs.meta_input(m.input_mode)))
        .transpose()?;
    let kind = match &meta {
        Some(p) => table_kind.max(meta_kind(&p.distribution)),
        None => table_kind,
    };
    let response = system_response(kind, &cfg.policy)?;

    let top = obs.diagnostic.selected[0];
    let second = obs.diagnostic.selected[1];
    let max = |p: &[f64]| p.iter().copied().fold(0.0, f64::max);
    let calibrated = apply_temperature(&obs.original_logits[top], sys.calibration.baseline_temperatures[top].t)?;
    let pair = [obs.final_probs[top].clone(), obs.final_probs[second].clone()];
    let mut scores = alloc::vec![None; Detector::ALL.len()];
    scores[Detector::Msp.index()] = Some(1.0 - max(&obs.original_probs[top]));
    scores[Detector::CalibratedConfidence.index()] = Some(1.0 - max(&calibrated));
    scores[Detector::CentroidDistance.index()] = Some(d.distances.iter().copied().fold(f64::INFINITY, f64::min));
    scores[Detector::EnsembleVote.index()] = Some(f64::from(u8::from(
        argmax(&obs.original_probs[top]) != argmax(&obs.original_probs[second]),
    )));
    scores[Detector::RoutingEntropy.index()] = Some(d.routing_entropy);
    let ratio = obs.diagnostic.selected_weights[1] / obs.diagnostic.selected_weights[0];
    scores[Detector::Disagreement.index()] = Some(obs.diag_jsd * ratio);
    scores[Detector::RawDisagreement.index()] = Some(obs.diag_jsd);
    scores[Detector::PredictiveVariance.index()] = Some(predictive_variance(&pair));
    scores[Detector::Coverage.index()] = Some(1.0 - max(&d.raw_affinities));
    scores[Detector::MetaReliability.index()] = meta.as_ref().map(|p| p.reliability);

    Ok(QueryRecord {
        id,
        cluster_id: e.cluster_id,
        owner: e.owner,
        case_tag: e.case_tag,
        class_label: e.class_label,
        shared_by: shared_pair(bench, e.cluster_id),
        distances: d.distances.clone(),
        raw_affinities: d.raw_affinities.clone(),
        gate_weights: d.gate_weights.clone(),
        routing_entropy: d.routing_entropy,
        margin: d.margin,
        selected: d.selected.clone(),
        selected_weights: d.selected_weights.clone(),
        entropy_pre: entropy_unchecked(&obs.original_probs[top]),
        entropy_post: entropy_unchecked(&softmax_unchecked(&obs.deployed_logits[top])),
        original_probs: obs.original_probs,
        final_probs: obs.final_probs,
        system_probs,
        prediction,
        confidence,
        correct: prediction == e.class_label,
        scores,
        meta_distribution: meta.map(|p| p.distribution),
        system_jsd: report.mean_pairwise_jsd(),
        comparable_confidence: report.comparable_confidence(),
        verdict: kind,
        action: response.action,
        template: response.template.to_string(),
    })
}

/// Evaluate trained models on the test split.
pub fn evaluate(cfg: &ExperimentConfig, bench: &Benchmark, sys: &SystemModels) -> Result<Vec<QueryRecord>> {
    bench
        .test
        .iter()
        .enumerate()
        .map(|(i, e)| evaluate_query(cfg, bench, sys, i, e))
        .collect()
}

/// Run every stage in order. `config_hash` identifies the config text the
/// caller loaded and is copied into the report.
pub fn run_pipeline(cfg: &ExperimentConfig, config_hash: &str, sink: &mut Sink<'_>) -> Result<PipelineOutput> {
    stage(Stage::Synth, cfg.validate())?;
    let bench = stage(Stage::Synth, build_benchmark(&cfg.benchmark))?;
    emit(sink, Stage::Synth, StageOutput::Benchmark(&bench))?;

    let (experts, expert_reports) = stage(Stage::Experts, train_experts(cfg, &bench))?;
    emit(sink, Stage::Experts, StageOutput::Experts { models: &experts, reports: &expert_reports })?;

    let embedder = stage(
        Stage::Stats,
        Embedder::init(bench.feature_dim(), cfg.embed.hidden, cfg.embed.dim, cfg.seed),
    )?;
    let stats = stage(Stage::Stats, fit_all_stats(&embedder, &bench))?;
    emit(sink, Stage::Stats, StageOutput::Stats { embedder: &embedder, stats: &stats })?;

    let (embedder, stats, contrastive_trace) = if cfg.embed.contrastive_on {
        let (tuned, trace) = stage(Stage::Contrastive, contrastive(cfg, &bench, &embedder))?;
        let refit = stage(Stage::Contrastive, fit_all_stats(&tuned, &bench))?;
        emit(
            sink,
            Stage::Contrastive,
            StageOutput::Contrastive { embedder: &tuned, stats: &refit, trace: &trace },
        )?;
        (tuned, refit, trace)
    } else {
        (embedder, stats, Vec::new())
    };

    let (router, router_trace) = stage(Stage::Router, router_stage(cfg, &bench, &embedder, &stats))?;
    emit(sink, Stage::Router, StageOutput::Router { router: &router, trace: &router_trace })?;

    let calibration = stage(Stage::Calibration, calibration_stage(cfg, &bench, &experts))?;
    emit(sink, Stage::Calibration, StageOutput::Calibration(&calibration))?;

    let mut system = SystemModels {
        embedder,
        stats,
        router,
        experts,
        calibration,
        meta: None,
    };
    if cfg.switches.meta_expert_on {
        system.meta = Some(stage(Stage::Meta, meta_stage(cfg, &bench, &system))?);
    }
    emit(sink, Stage::Meta, StageOutput::Meta(system.meta.as_ref()))?;

    let log = stage(Stage::Evaluate, evaluate(cfg, &bench, &system))?;
    let meta = RunMeta {
        config_hash: config_hash.to_string(),
        benchmark_hash: benchmark_hash(&bench),
        seed: cfg.seed,
        label_source: LABEL_SOURCE.to_string(),
    };
    let report = stage(Stage::Evaluate, metrics_from_log(&log, meta, cfg.ece_bins))?;
    emit(sink, Stage::Evaluate, StageOutput::Evaluation { log: &log, report: &report })?;

    Ok(PipelineOutput {
        benchmark: bench,
        expert_reports,
        contrastive_trace,
        router_trace,
        system,
        log,
        report,
    })
}

/// Convenience wrapper discarding intermediate outputs.
pub fn run_pipeline_quiet(cfg: &ExperimentConfig, config_hash: &str) -> Result<PipelineOutput> {
    run_pipeline(cfg, config_hash, &mut |_, _| Ok(()))
}
