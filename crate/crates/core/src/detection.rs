//! Multi-expert activation, disagreement reporting, the coverage verdict
//! table, the meta-expert and the system response policy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::experts::{ce_batch, expert_predict, ExpertModel};
use crate::numerics::{ensure_finite, ensure_len, entropy_unchecked, mlp_forward, softmax_unchecked, MlpParams};
use crate::rng;
use crate::router::RoutingDecision;
use crate::synth::CaseTag;
use crate::train::{run_sgd, SgdConfig};

pub const DEFAULT_GAMMA: f64 = 0.5;

/// Class distributions of every selected expert, in `decision.selected` order.
pub fn activate_experts(decision: &RoutingDecision, experts: &[ExpertModel], x: &[f64]) -> Result<Vec<Vec<f64>>> {
    if decision.selected.is_empty() {
        return Err(Error::Precondition("routing decision selected no experts".into()));
    }
    decision
        .selected
        .iter()
        .map(|&id| {
            let expert = experts
                .iter()
                .find(|e| e.domain == id)
                .ok_or_else(|| Error::Lookup(format!("expert {id} not found")))?;
            expert_predict(expert, x)
        })
        .collect()
}

/// Jensen-Shannon divergence in nats; bounded by `ln 2`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> Result<f64> {
    ensure_len("jensen-shannon input", p.len(), q.len())?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = entropy_unchecked(&m) - 0.5 * (entropy_unchecked(p) + entropy_unchecked(q));
    Ok(js.clamp(0.0, core::f64::consts::LN_2))
}

/// Per-class population variance across experts, summed over classes.
pub fn predictive_variance(outputs: &[Vec<f64>]) -> f64 {
    let n = outputs.len() as f64;
    let classes = outputs.first().map_or(0, Vec::len);
    (0..classes)
        .map(|c| {
            let mean = outputs.iter().map(|p| p[c]).sum::<f64>() / n;
            outputs.iter().map(|p| (p[c] - mean) * (p[c] - mean)).sum::<f64>() / n
        })
        .sum()
}

/// Mean JSD over all unordered pairs.
pub fn mean_pairwise_jsd(outputs: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            total += jensen_shannon(&outputs[i], &outputs[j])?;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Precondition("pairwise divergence needs at least two outputs".into()));
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisagreementStats {
    pub mean_pairwise_jsd: f64,
    pub predictive_variance: f64,
    /// Second-largest over largest selected weight.
    pub weight_ratio: f64,
    pub comparable_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementReport {
    pub activated: Vec<usize>,
    pub per_expert_outputs: Vec<Vec<f64>>,
    /// `None` when fewer than two experts were activated.
    pub stats: Option<DisagreementStats>,
}

impl DisagreementReport {
    pub fn is_applicable(&self) -> bool {
        self.stats.is_some()
    }

    pub fn mean_pairwise_jsd(&self) -> Option<f64> {
        self.stats.map(|s| s.mean_pairwise_jsd)
    }

    pub fn comparable_confidence(&self) -> Option<bool> {
        self.stats.map(|s| s.comparable_confidence)
    }
}

pub fn disagreement_report(decision: &RoutingDecision, outputs: &[Vec<f64>], gamma: f64) -> Result<DisagreementReport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    ensure_len("activated outputs", decision.selected.len(), outputs.len())?;
    for p in outputs {
        ensure_finite(p, "expert output")?;
    }
    let stats = if outputs.len() < 2 {
        None
    } else {
        let mut w = decision.selected_weights.clone();
        w.sort_by(|a, b| b.total_cmp(a));
        let weight_ratio = if w[0] > 0.0 { w[1] / w[0] } else { 0.0 };
        Some(DisagreementStats {
            mean_pairwise_jsd: mean_pairwise_jsd(outputs)?,
            predictive_variance: predictive_variance(outputs),
            weight_ratio,
            comparable_confidence: weight_ratio >= gamma,
        })
    };
    Ok(DisagreementReport {
        activated: decision.selected.clone(),
        per_expert_outputs: outputs.to_vec(),
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VerdictKind {
    InCoverage,
    BoundaryViolation,
    CoverageGap,
}

impl VerdictKind {
    pub const ALL: [VerdictKind; 3] = [VerdictKind::InCoverage, VerdictKind::BoundaryViolation, VerdictKind::CoverageGap];

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictKind::InCoverage => "in_coverage",
            VerdictKind::BoundaryViolation => "boundary_violation",
            VerdictKind::CoverageGap => "coverage_gap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Answer,
    Caveat,
    Abstain,
    Fallback,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Answer, Action::Caveat, Action::Abstain, Action::Fallback];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Answer => "answer",
            Action::Caveat => "caveat",
            Action::Abstain => "abstain",
            Action::Fallback => "fallback",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Whether the system still commits to its own answer.
    pub fn commits(self) -> bool {
        matches!(self, Action::Answer | Action::Caveat)
    }
}

/// Mapping from verdict kind to action. Built from explicit entries so a
/// missing kind is a configuration error rather than a silent default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponsePolicy {
    entries: Vec<(VerdictKind, Action)>,
}

impl Default for ResponsePolicy {
    fn default() -> Self {
        Self {
            entries: vec![
                (VerdictKind::InCoverage, Action::Answer),
                (VerdictKind::BoundaryViolation, Action::Caveat),
                (VerdictKind::CoverageGap, Action::Abstain),
            ],
        }
    }
}

impl ResponsePolicy {
    /// Later entries override earlier ones for the same kind.
    pub fn from_entries(entries: impl IntoIterator<Item = (VerdictKind, Action)>) -> Self {
        let mut policy = Self { entries: Vec::new() };
        for (kind, action) in entries {
            policy.set(kind, action);
        }
        policy
    }

    pub fn set(&mut self, kind: VerdictKind, action: Action) {
        match self.entries.iter_mut().find(|(k, _)| *k == kind) {
            Some(slot) => slot.1 = action,
            None => self.entries.push((kind, action)),
        }
    }

    pub fn get(&self, kind: VerdictKind) -> Option<Action> {
        self.entries.iter().find(|(k, _)| *k == kind).map(|(_, a)| *a)
    }

    pub fn validate(&self) -> Result<()> {
        for kind in VerdictKind::ALL {
            if self.get(kind).is_none() {
                return Err(Error::config(
                    format!("policy.{}", kind.as_str()),
                    "no action mapped for this verdict kind",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Response {
    pub action: Action,
    pub template: &'static str,
}

pub fn system_response(kind: VerdictKind, policy: &ResponsePolicy) -> Result<Response> {
    let action = policy.get(kind).ok_or_else(|| {
        Error::config(format!("policy.{}", kind.as_str()), "no action mapped for this verdict kind")
    })?;
    let template = match (action, kind) {
        (Action::Answer, _) => "answer.plain",
        (Action::Caveat, VerdictKind::CoverageGap) => "caveat.domain_limit",
        (Action::Caveat, _) => "caveat.uncertain_boundary",
        (Action::Abstain, _) => "abstain.uncertain",
        (Action::Fallback, _) => "fallback.generalist",
    };
    Ok(Response { action, template })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub theta_ood: f64,
    pub theta_jsd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence {
    pub min_ood: f64,
    pub max_ood: f64,
    pub mean_pairwise_jsd: Option<f64>,
    pub comparable_confidence: Option<bool>,
    pub meta_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageVerdict {
    pub kind: VerdictKind,
    pub action: Action,
    pub template: &'static str,
    pub evidence: Evidence,
}

/// Verdict table over the activated experts' OOD scores and the disagreement
/// report. A gap takes precedence over a boundary violation.
pub fn verdict_kind(ood: &[f64], report: &DisagreementReport, thresholds: Thresholds) -> Result<(VerdictKind, Evidence)> {
    if !(thresholds.theta_ood > 0.0) {
        return Err(Error::config("detect.theta_ood", "threshold must be positive"));
    }
    if !(thresholds.theta_jsd > 0.0) {
        return Err(Error::config("detect.theta_jsd", "threshold must be positive"));
    }
    if report.activated.is_empty() {
        return Err(Error::Precondition("verdict needs at least one activated expert".into()));
    }
    let mut min_ood = f64::INFINITY;
    let mut max_ood = f64::NEG_INFINITY;
    for &id in &report.activated {
        let d = *ood
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("no OOD score for expert {id}")))?;
        min_ood = min_ood.min(d);
        max_ood = max_ood.max(d);
    }
    let kind = if min_ood > thresholds.theta_ood {
        VerdictKind::CoverageGap
    } else if report
        .stats
        .is_some_and(|s| s.comparable_confidence && s.mean_pairwise_jsd > thresholds.theta_jsd)
    {
        VerdictKind::BoundaryViolation
    } else {
        VerdictKind::InCoverage
    };
    Ok((
        kind,
        Evidence {
            min_ood,
            max_ood,
            mean_pairwise_jsd: report.mean_pairwise_jsd(),
            comparable_confidence: report.comparable_confidence(),
            meta_score: None,
        },
    ))
}

pub fn coverage_verdict(
    ood: &[f64],
    report: &DisagreementReport,
    thresholds: Thresholds,
    policy: &ResponsePolicy,
) -> Result<CoverageVerdict> {
    let (kind, evidence) = verdict_kind(ood, report, thresholds)?;
    let response = system_response(kind, policy)?;
    Ok(CoverageVerdict {
        kind,
        action: response.action,
        template: response.template,
        evidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaInputMode {
    Embedding,
    ConcatOutputs,
    EmbeddingPlusSignals,
}

impl MetaInputMode {
    pub const ALL: [MetaInputMode; 3] = [
        MetaInputMode::Embedding,
        MetaInputMode::ConcatOutputs,
        MetaInputMode::EmbeddingPlusSignals,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetaInputMode::Embedding => "embedding",
            MetaInputMode::ConcatOutputs => "concat_outputs",
            MetaInputMode::EmbeddingPlusSignals => "embedding_plus_signals",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn input_dim(self, embed_dim: usize, experts: usize, classes: usize) -> usize {
        match self {
            MetaInputMode::Embedding => embed_dim,
            MetaInputMode::ConcatOutputs => experts * classes,
            MetaInputMode::EmbeddingPlusSignals => embed_dim + experts + 2,
        }
    }
}

/// Everything any input mode may draw on for one query.
#[derive(Debug, Clone, Copy)]
pub struct MetaSignals<'a> {
    pub embedding: &'a [f64],
    pub raw_affinities: &'a [f64],
    /// Outputs of every expert, in expert-id order.
    pub all_outputs: &'a [Vec<f64>],
    pub mean_pairwise_jsd: f64,
    pub margin: f64,
}

pub fn assemble_meta_input(mode: MetaInputMode, signals: &MetaSignals<'_>) -> Vec<f64> {
    match mode {
        MetaInputMode::Embedding => signals.embedding.to_vec(),
        MetaInputMode::ConcatOutputs => signals.all_outputs.concat(),
        MetaInputMode::EmbeddingPlusSignals => {
            let mut sorted = signals.raw_affinities.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let mut v = signals.embedding.to_vec();
            v.extend(sorted);
            v.push(signals.mean_pairwise_jsd);
            v.push(signals.margin);
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaExpertModel {
    pub params: MlpParams,
    pub input_mode: MetaInputMode,
}

impl MetaExpertModel {
    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPrediction {
    /// Probabilities over (in_coverage, boundary, gap).
    pub distribution: Vec<f64>,
    /// `1 - p(in_coverage)`.
    pub reliability: f64,
}

pub fn meta_predict(meta: &MetaExpertModel, input: &[f64]) -> Result<MetaPrediction> {
    ensure_len("meta-expert input", meta.input_dim(), input.len())?;
    let (logits, _) = mlp_forward(&meta.params, input)?;
    let distribution = softmax_unchecked(&logits);
    let reliability = (1.0 - distribution[CaseTag::InDomain.index()]).clamp(0.0, 1.0);
    Ok(MetaPrediction {
        distribution,
        reliability,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaTrainConfig {
    pub hidden: usize,
    pub sgd: SgdConfig,
}

/// Indices of a class-balanced subsample: every class is down-sampled to the
/// size of the rarest one.
pub fn balance_classes(tags: &[CaseTag], seed: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CaseTag::ALL.len()];
    for (i, t) in tags.iter().enumerate() {
        by_class[t.index()].push(i);
    }
    for tag in CaseTag::ALL {
        if by_class[tag.index()].is_empty() {
            return Err(Error::Training(format!("{} class absent", tag.as_str())));
        }
    }
    let keep = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = rng::stream(seed, "meta-balance");
    let mut chosen = Vec::new();
    for members in &by_class {
        let perm = rng::permutation(&mut rng, members.len());
        chosen.extend(perm.into_iter().take(keep).map(|p| members[p]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Three-class cross-entropy training on pre-assembled inputs.
pub fn train_meta_expert(
    inputs: &[Vec<f64>],
    tags: &[CaseTag],
    mode: MetaInputMode,
    cfg: &MetaTrainConfig,
) -> Result<MetaExpertModel> {
    ensure_len("meta-expert tags", inputs.len(), tags.len())?;
    cfg.sgd.validate("meta")?;
    let keep = balance_classes(tags, cfg.sgd.seed)?;
    let dim = inputs[0].len();
    let data: Vec<(&[f64], usize)> = keep
        .iter()
        .map(|&i| {
            ensure_len("meta-expert input", dim, inputs[i].len())?;
            ensure_finite(&inputs[i], "meta-expert input")?;
            Ok((inputs[i].as_slice(), tags[i].index()))
        })
        .collect::<Result<_>>()?;
    let mut rng = rng::stream(cfg.sgd.seed, "meta-init");
    let mut params = MlpParams::init(&[dim, cfg.hidden, CaseTag::ALL.len()], &mut rng)?;
    run_sgd(&mut params, data.len(), &cfg.sgd, "meta-sgd", |p, batch| ce_batch(p, &data, batch))?;
    Ok(MetaExpertModel { params, input_mode: mode })
}

/// Short human-readable summary used in logs.
pub fn describe(verdict: &CoverageVerdict) -> String {
    format!(
        "{} -> {} (min ood {:.3})",
        verdict.kind.as_str(),
        verdict.action.as_str(),
        verdict.evidence.min_ood
    )
}
