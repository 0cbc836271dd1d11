use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::record::{Detector, QueryRecord};
use crate::calibration::{ece_from_confidences, CalibrationReport};
use crate::detection::{Action, VerdictKind};
use crate::error::{Error, Result};
use crate::metrics::{
    auroc, coverage_non_increasing, phenotype_metrics, pr_auc, precision_at_coverage, risk_coverage_curve, spearman,
    CurvePoint, LocalizationRatio, PhenotypeBlock,
};
use crate::numerics::argmax;
use crate::synth::{CaseTag, Owner};

pub const LABEL_SOURCE: &str = "oracle_case_tags";
pub const CURVE_DETECTORS: [Detector; 4] = [
    Detector::Msp,
    Detector::CalibratedConfidence,
    Detector::Disagreement,
    Detector::MetaReliability,
];
pub const TARGET_COVERAGE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub config_hash: String,
    pub benchmark_hash: String,
    pub seed: u64,
    /// Where the boundary/gap ground truth comes from.
    pub label_source: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorRow {
    pub detector: Detector,
    /// Flagging boundary ∪ gap against in-domain.
    pub auroc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub auroc_boundary: Option<f64>,
    pub auroc_gap: Option<f64>,
    pub precision_full_coverage: f64,
    pub precision_at_target: Option<f64>,
    pub coverage_at_target: Option<f64>,
    pub coverage_monotone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveBlock {
    pub detector: Detector,
    pub points: Vec<CurvePoint>,
}

/// Expert `expert` answering boundary queries owned by its partner `other`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalseFriendRow {
    pub expert: usize,
    pub other: usize,
    pub boundary_count: usize,
    pub boundary_accuracy: f64,
    pub boundary_confidence: f64,
    pub in_domain_accuracy: f64,
    pub in_domain_confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationEffect {
    /// Spearman of (top-expert entropy, min centroid distance) before fine-tuning.
    pub spearman_pre: Option<f64>,
    pub spearman_post: Option<f64>,
    pub in_domain_accuracy_pre: f64,
    pub in_domain_accuracy_post: f64,
    pub boundary_entropy_pre: f64,
    pub boundary_entropy_post: f64,
    pub in_domain_entropy_pre: f64,
    pub in_domain_entropy_post: f64,
    /// Reliability diagram of the system answer.
    pub reliability: CalibrationReport,
    /// ECE of the top-routed expert before fine-tuning and calibration.
    pub ece_uncalibrated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictBlock {
    /// `counts[tag][kind]` in `CaseTag::ALL` × `VerdictKind::ALL` order.
    pub counts: Vec<Vec<usize>>,
    /// In `Action::ALL` order.
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaBlock {
    /// Argmax agreement with the case tag.
    pub accuracy: f64,
    /// Per case tag, in `CaseTag::ALL` order.
    pub mean_reliability: Vec<Option<f64>>,
}

/// Aggregates that need no ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitoring {
    pub queries: usize,
    pub answered_fraction: f64,
    /// In `VerdictKind::ALL` order.
    pub verdict_fractions: Vec<f64>,
    pub mean_confidence: f64,
    pub mean_routing_entropy: f64,
    pub mean_disagreement: f64,
    pub mean_coverage_signal: f64,
    pub mean_meta_reliability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub meta: RunMeta,
    pub detectors: Vec<DetectorRow>,
    pub curves: Vec<CurveBlock>,
    pub phenotype: PhenotypeBlock,
    pub false_friends: Vec<FalseFriendRow>,
    pub calibration: CalibrationEffect,
    pub verdicts: VerdictBlock,
    pub meta_expert: Option<MetaBlock>,
    pub monitoring: Monitoring,
}

impl MetricsReport {
    pub fn detector(&self, d: Detector) -> Option<&DetectorRow> {
        self.detectors.iter().find(|r| r.detector == d)
    }

    /// Every scalar metric under a stable dotted name; `None` when undefined.
    pub fn scalars(&self) -> Vec<(String, Option<f64>)> {
        let mut out: Vec<(String, Option<f64>)> = Vec::new();
        for r in &self.detectors {
            let n = r.detector.as_str();
            out.push((format!("detector.{n}.auroc"), r.auroc));
            out.push((format!("detector.{n}.pr_auc"), r.pr_auc));
            out.push((format!("detector.{n}.auroc_boundary"), r.auroc_boundary));
            out.push((format!("detector.{n}.auroc_gap"), r.auroc_gap));
            out.push((format!("detector.{n}.precision_full_coverage"), Some(r.precision_full_coverage)));
            out.push((format!("detector.{n}.precision_at_target"), r.precision_at_target));
        }
        for (tag, stats) in CaseTag::ALL.iter().zip(&self.phenotype.per_tag) {
            let n = tag.as_str();
            out.push((format!("phenotype.{n}.mean_confidence"), stats.map(|s| s.mean_confidence)));
            out.push((format!("phenotype.{n}.accuracy"), stats.map(|s| s.accuracy)));
            out.push((format!("phenotype.{n}.dissociation"), stats.map(|s| s.dissociation)));
        }
        let ratio = match self.phenotype.boundary_localization_ratio {
            LocalizationRatio::Finite(v) => Some(v),
            _ => None,
        };
        out.push(("phenotype.boundary_localization_ratio".into(), ratio));
        out.push(("phenotype.ece".into(), Some(self.phenotype.ece)));
        for r in &self.false_friends {
            let n = format!("false_friend.{}_on_{}", r.expert, r.other);
            out.push((format!("{n}.boundary_accuracy"), Some(r.boundary_accuracy)));
            out.push((format!("{n}.boundary_confidence"), Some(r.boundary_confidence)));
            out.push((format!("{n}.in_domain_confidence"), Some(r.in_domain_confidence)));
        }
        let c = &self.calibration;
        out.push(("calibration.spearman_pre".into(), c.spearman_pre));
        out.push(("calibration.spearman_post".into(), c.spearman_post));
        out.push(("calibration.in_domain_accuracy_pre".into(), Some(c.in_domain_accuracy_pre)));
        out.push(("calibration.in_domain_accuracy_post".into(), Some(c.in_domain_accuracy_post)));
        out.push(("calibration.boundary_entropy_pre".into(), Some(c.boundary_entropy_pre)));
        out.push(("calibration.boundary_entropy_post".into(), Some(c.boundary_entropy_post)));
        out.push(("calibration.ece_system".into(), Some(c.reliability.ece)));
        out.push(("calibration.ece_uncalibrated".into(), Some(c.ece_uncalibrated)));
        if let Some(m) = &self.meta_expert {
            out.push(("meta.accuracy".into(), Some(m.accuracy)));
        }
        let m = &self.monitoring;
        out.push(("monitoring.answered_fraction".into(), Some(m.answered_fraction)));
        out.push(("monitoring.mean_confidence".into(), Some(m.mean_confidence)));
        out.push(("monitoring.mean_routing_entropy".into(), Some(m.mean_routing_entropy)));
        out.push(("monitoring.mean_disagreement".into(), Some(m.mean_disagreement)));
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn detector_row(log: &[QueryRecord], d: Detector) -> Result<Option<(DetectorRow, Vec<CurvePoint>)>> {
    let Some(scores) = log.iter().map(|r| r.score(d)).collect::<Option<Vec<f64>>>() else {
        return Ok(None);
    };
    let flagged: Vec<bool> = log.iter().map(|r| r.case_tag != CaseTag::InDomain).collect();
    let per_tag = |tag: CaseTag| {
        let (s, p): (Vec<f64>, Vec<bool>) = log
            .iter()
            .zip(&scores)
            .filter(|(r, _)| r.case_tag == tag || r.case_tag == CaseTag::InDomain)
            .map(|(r, &s)| (s, r.case_tag == tag))
            .unzip();
        auroc(&s, &p).ok()
    };
    let correct: Vec<bool> = log.iter().map(|r| r.correct).collect();
    let curve = risk_coverage_curve(&scores, &correct)?;
    let at = precision_at_coverage(&curve, TARGET_COVERAGE);
    let row = DetectorRow {
        detector: d,
        auroc: auroc(&scores, &flagged).ok(),
        pr_auc: pr_auc(&scores, &flagged).ok(),
        auroc_boundary: per_tag(CaseTag::Boundary),
        auroc_gap: per_tag(CaseTag::Gap),
        precision_full_coverage: curve[0].precision,
        precision_at_target: at.map(|p| p.precision),
        coverage_at_target: at.map(|p| p.coverage),
        coverage_monotone: coverage_non_increasing(&curve),
    };
    Ok(Some((row, curve)))
}

fn false_friend_rows(log: &[QueryRecord]) -> Vec<FalseFriendRow> {
    let mut pairs: Vec<(usize, usize)> = log.iter().filter_map(|r| r.shared_by).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut rows = Vec::new();
    for (a, b) in pairs {
        for (expert, other) in [(a, b), (b, a)] {
            let boundary: Vec<&QueryRecord> = log
                .iter()
                .filter(|r| {
                    r.case_tag == CaseTag::Boundary && r.shared_by == Some((a, b)) && r.owner == Owner::Domain(other)
                })
                .collect();
            let own: Vec<&QueryRecord> = log
                .iter()
                .filter(|r| r.case_tag == CaseTag::InDomain && r.owner == Owner::Domain(expert))
                .collect();
            let acc = |rs: &[&QueryRecord]| mean(rs.iter().map(|r| f64::from(u8::from(argmax(&r.final_probs[expert]) == r.class_label))));
            let conf = |rs: &[&QueryRecord]| mean(rs.iter().map(|r| r.final_probs[expert].iter().copied().fold(0.0, f64::max)));
            rows.push(FalseFriendRow {
                expert,
                other,
                boundary_count: boundary.len(),
                boundary_accuracy: acc(&boundary),
                boundary_confidence: conf(&boundary),
                in_domain_accuracy: acc(&own),
                in_domain_confidence: conf(&own),
            });
        }
    }
    rows
}

fn calibration_effect(log: &[QueryRecord], ece_bins: usize) -> Result<CalibrationEffect> {
    let dist: Vec<f64> = log.iter().map(QueryRecord::min_distance).collect();
    let pre: Vec<f64> = log.iter().map(|r| r.entropy_pre).collect();
    let post: Vec<f64> = log.iter().map(|r| r.entropy_post).collect();
    let owned_in_domain = || {
        log.iter().filter_map(|r| match (r.case_tag, r.owner) {
            (CaseTag::InDomain, Owner::Domain(o)) => Some((r, o)),
            _ => None,
        })
    };
    let tag_mean = |tag: CaseTag, f: fn(&QueryRecord) -> f64| mean(log.iter().filter(|r| r.case_tag == tag).map(f));
    let confidences: Vec<f64> = log.iter().map(|r| r.confidence).collect();
    let correct: Vec<bool> = log.iter().map(|r| r.correct).collect();
    let top_conf: Vec<f64> = log.iter().map(|r| 1.0 - r.score(Detector::Msp).unwrap_or(0.0)).collect();
    let top_correct: Vec<bool> = log
        .iter()
        .map(|r| argmax(&r.original_probs[r.selected[0]]) == r.class_label)
        .collect();
    Ok(CalibrationEffect {
        spearman_pre: spearman(&pre, &dist).ok(),
        spearman_post: spearman(&post, &dist).ok(),
        in_domain_accuracy_pre: mean(owned_in_domain().map(|(r, o)| f64::from(u8::from(argmax(&r.original_probs[o]) == r.class_label)))),
        in_domain_accuracy_post: mean(owned_in_domain().map(|(r, o)| f64::from(u8::from(argmax(&r.final_probs[o]) == r.class_label)))),
        boundary_entropy_pre: tag_mean(CaseTag::Boundary, |r| r.entropy_pre),
        boundary_entropy_post: tag_mean(CaseTag::Boundary, |r| r.entropy_post),
        in_domain_entropy_pre: tag_mean(CaseTag::InDomain, |r| r.entropy_pre),
        in_domain_entropy_post: tag_mean(CaseTag::InDomain, |r| r.entropy_post),
        reliability: ece_from_confidences(&confidences, &correct, ece_bins)?,
        ece_uncalibrated: ece_from_confidences(&top_conf, &top_correct, ece_bins)?.ece,
    })
}

/// Recompute the full report from a decision log. The pipeline builds its
/// report through this function, so a persisted log replays exactly.
pub fn metrics_from_log(log: &[QueryRecord], meta: RunMeta, ece_bins: usize) -> Result<MetricsReport> {
    if log.is_empty() {
        return Err(Error::Precondition("decision log is empty".into()));
    }
    let mut detectors = Vec::new();
    let mut curves = Vec::new();
    for d in Detector::ALL {
        if let Some((row, curve)) = detector_row(log, d)? {
            detectors.push(row);
            if CURVE_DETECTORS.contains(&d) {
                curves.push(CurveBlock { detector: d, points: curve });
            }
        }
    }
    let tags: Vec<CaseTag> = log.iter().map(|r| r.case_tag).collect();
    let confidences: Vec<f64> = log.iter().map(|r| r.confidence).collect();
    let correct: Vec<bool> = log.iter().map(|r| r.correct).collect();
    let phenotype = phenotype_metrics(&tags, &confidences, &correct, ece_bins)?;

    let mut counts = vec![vec![0usize; VerdictKind::ALL.len()]; CaseTag::ALL.len()];
    let mut actions = vec![0usize; Action::ALL.len()];
    for r in log {
        counts[r.case_tag.index()][r.verdict as usize] += 1;
        actions[r.action as usize] += 1;
    }

    let meta_expert = if log.iter().all(|r| r.meta_distribution.is_some()) {
        let hits = log
            .iter()
            .filter(|r| r.meta_distribution.as_deref().map(argmax) == Some(r.case_tag.index()))
            .count();
        let mean_reliability = CaseTag::ALL
            .iter()
            .map(|&t| {
                let v: Vec<f64> = log
                    .iter()
                    .filter(|r| r.case_tag == t)
                    .filter_map(|r| r.score(Detector::MetaReliability))
                    .collect();
                (!v.is_empty()).then(|| mean(v.into_iter()))
            })
            .collect();
        Some(MetaBlock {
            accuracy: hits as f64 / log.len() as f64,
            mean_reliability,
        })
    } else {
        None
    };

    let n = log.len() as f64;
    let monitoring = Monitoring {
        queries: log.len(),
        answered_fraction: log.iter().filter(|r| r.action.commits()).count() as f64 / n,
        verdict_fractions: VerdictKind::ALL
            .iter()
            .map(|&k| log.iter().filter(|r| r.verdict == k).count() as f64 / n)
            .collect(),
        mean_confidence: mean(log.iter().map(|r| r.confidence)),
        mean_routing_entropy: mean(log.iter().map(|r| r.routing_entropy)),
        mean_disagreement: mean(log.iter().filter_map(|r| r.score(Detector::Disagreement))),
        mean_coverage_signal: mean(log.iter().filter_map(|r| r.score(Detector::Coverage))),
        mean_meta_reliability: meta_expert
            .as_ref()
            .map(|_| mean(log.iter().filter_map(|r| r.score(Detector::MetaReliability)))),
    };

    Ok(MetricsReport {
        meta,
        detectors,
        curves,
        phenotype,
        false_friends: false_friend_rows(log),
        calibration: calibration_effect(log, ece_bins)?,
        verdicts: VerdictBlock { counts, actions },
        meta_expert,
        monitoring,
    })
}

/// One metric difference `b - a`; `None` when either side is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub name: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
}

/// Per-metric deltas between two runs on the same benchmark.
pub fn ab_compare(a: &MetricsReport, b: &MetricsReport) -> Result<Vec<Delta>> {
    if a.meta.benchmark_hash != b.meta.benchmark_hash {
        return Err(Error::Comparison(format!(
            "benchmark hashes differ: {} vs {}",
            a.meta.benchmark_hash, b.meta.benchmark_hash
        )));
    }
    let sa = a.scalars();
    let sb = b.scalars();
    let only_b: Vec<Delta> = sb
        .iter()
        .filter(|(n, _)| !sa.iter().any(|(m, _)| m == n))
        .map(|(n, v)| Delta {
            name: n.clone(),
            a: None,
            b: *v,
            delta: None,
        })
        .collect();
    Ok(sa
        .into_iter()
        .map(|(name, va)| {
            let vb = sb.iter().find(|(n, _)| *n == name).and_then(|(_, v)| *v);
            let delta = match (va, vb) {
                (Some(x), Some(y)) => Some(y - x),
                _ => None,
            };
            Delta { name, a: va, b: vb, delta }
        })
        .chain(only_b)
        .collect())
}
