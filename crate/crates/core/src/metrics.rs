//! Detector scoring, selective prediction curves, phenotype statistics and
//! rank correlation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::synth::CaseTag;

fn check_aligned(what: &'static str, a: usize, b: usize) -> Result<()> {
    crate::numerics::ensure_len(what, a, b)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Domain(format!("detector score {s} is not a number")));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn class_counts(positives: &[bool]) -> Result<(usize, usize)> {
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 {
        return Err(Error::UndefinedMetric("no positive queries".into()));
    }
    if neg == 0 {
        return Err(Error::UndefinedMetric("no negative queries".into()));
    }
    Ok((pos, neg))
}

/// Rank-statistic AUROC; higher scores should mark positives.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_aligned("auroc labels", scores.len(), positives.len())?;
    check_scores(scores)?;
    let (pos, neg) = class_counts(positives)?;
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positives).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok((u / (pos as f64 * neg as f64)).clamp(0.0, 1.0))
}

/// Average precision: step integration of precision over recall, tied
/// scores entering as a single threshold.
pub fn pr_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_aligned("pr-auc labels", scores.len(), positives.len())?;
    check_scores(scores)?;
    let (pos, _) = class_counts(positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            seen += 1;
            if positives[k] {
                tp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        area += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Queries with score strictly below this are committed; `+inf` admits all.
    pub threshold: f64,
    pub coverage: f64,
    pub precision: f64,
    pub committed: usize,
}

/// Sweep the abstention threshold from `+inf` down through every distinct
/// score. Thresholds that commit nothing are omitted.
pub fn risk_coverage_curve(scores: &[f64], correct: &[bool]) -> Result<Vec<CurvePoint>> {
    if scores.is_empty() {
        return Err(Error::Parameter("risk-coverage curve needs at least one query".into()));
    }
    check_aligned("risk-coverage correctness", scores.len(), correct.len())?;
    check_scores(scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n = scores.len() as f64;
    let mut prefix_hits = vec![0usize; scores.len() + 1];
    for (i, &k) in order.iter().enumerate() {
        prefix_hits[i + 1] = prefix_hits[i] + usize::from(correct[k]);
    }
    let point = |threshold: f64, committed: usize| CurvePoint {
        threshold,
        coverage: committed as f64 / n,
        precision: prefix_hits[committed] as f64 / committed as f64,
        committed,
    };
    let mut curve = vec![point(f64::INFINITY, scores.len())];
    let mut end = scores.len();
    while end > 0 {
        let t = scores[order[end - 1]];
        let committed = order.partition_point(|&k| scores[k] < t);
        if committed > 0 {
            curve.push(point(t, committed));
        }
        end = committed;
    }
    Ok(curve)
}

/// The curve point with the smallest coverage that is still at least `target`.
pub fn precision_at_coverage(curve: &[CurvePoint], target: f64) -> Option<CurvePoint> {
    curve
        .iter()
        .filter(|p| p.coverage >= target)
        .min_by(|a, b| a.coverage.total_cmp(&b.coverage))
        .copied()
}

pub fn coverage_non_increasing(curve: &[CurvePoint]) -> bool {
    curve.windows(2).all(|w| w[1].coverage <= w[0].coverage && w[1].threshold <= w[0].threshold)
}

/// Spearman correlation with average ranks on ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_aligned("spearman pairs", x.len(), y.len())?;
    if x.len() < 3 {
        return Err(Error::UndefinedMetric(format!("spearman needs at least 3 samples, got {}", x.len())));
    }
    check_scores(x)?;
    check_scores(y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("spearman input is constant".into()));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagStats {
    pub tag: CaseTag,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
    /// Mean confidence minus accuracy.
    pub dissociation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalizationRatio {
    Finite(f64),
    /// Boundary errors present but no in-domain errors.
    Infinite,
    /// No errors on either tag.
    Undefined,
}

impl LocalizationRatio {
    pub fn from_error_rates(boundary: f64, in_domain: f64) -> Self {
        if in_domain > 0.0 {
            LocalizationRatio::Finite(boundary / in_domain)
        } else if boundary > 0.0 {
            LocalizationRatio::Infinite
        } else {
            LocalizationRatio::Undefined
        }
    }

    /// Whether the ratio is at least `bound`; infinity exceeds every bound.
    pub fn at_least(self, bound: f64) -> bool {
        match self {
            LocalizationRatio::Finite(v) => v >= bound,
            LocalizationRatio::Infinite => true,
            LocalizationRatio::Undefined => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeBlock {
    /// One entry per case tag in `CaseTag::ALL` order; `None` when the tag is absent.
    pub per_tag: Vec<Option<TagStats>>,
    pub boundary_localization_ratio: LocalizationRatio,
    pub ece: f64,
}

impl PhenotypeBlock {
    pub fn tag(&self, tag: CaseTag) -> Result<TagStats> {
        self.per_tag[tag.index()]
            .ok_or_else(|| Error::UndefinedMetric(format!("no {} queries", tag.as_str())))
    }
}

pub fn tag_stats(tag: CaseTag, tags: &[CaseTag], confidences: &[f64], correct: &[bool]) -> Result<TagStats> {
    let mut count = 0usize;
    let mut conf = 0.0;
    let mut hits = 0usize;
    for ((&t, &c), &ok) in tags.iter().zip(confidences).zip(correct) {
        if t == tag {
            count += 1;
            conf += c;
            hits += usize::from(ok);
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(format!("no {} queries", tag.as_str())));
    }
    let mean_confidence = conf / count as f64;
    let accuracy = hits as f64 / count as f64;
    Ok(TagStats {
        tag,
        count,
        mean_confidence,
        accuracy,
        dissociation: mean_confidence - accuracy,
    })
}

pub fn phenotype_metrics(tags: &[CaseTag], confidences: &[f64], correct: &[bool], ece_bins: usize) -> Result<PhenotypeBlock> {
    check_aligned("phenotype confidences", tags.len(), confidences.len())?;
    check_aligned("phenotype correctness", tags.len(), correct.len())?;
    let per_tag: Vec<Option<TagStats>> = CaseTag::ALL
        .iter()
        .map(|&t| tag_stats(t, tags, confidences, correct).ok())
        .collect();
    let boundary_localization_ratio = match (per_tag[CaseTag::Boundary.index()], per_tag[CaseTag::InDomain.index()]) {
        (Some(b), Some(i)) => LocalizationRatio::from_error_rates(1.0 - b.accuracy, 1.0 - i.accuracy),
        _ => LocalizationRatio::Undefined,
    };
    let ece = crate::calibration::ece_from_confidences(confidences, correct, ece_bins)?.ece;
    Ok(PhenotypeBlock {
        per_tag,
        boundary_localization_ratio,
        ece,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn auroc_examples() {
        let pos = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &pos).unwrap(), 1.0);
        assert_eq!(auroc(&[-0.1, -0.2, -0.8, -0.9], &pos).unwrap(), 0.0);
        // reference values from an external implementation
        let y = [false, true, true, false, true, false];
        let s = [0.2, 0.8, 0.5, 0.5, 0.9, 0.1];
        assert!((auroc(&s, &y).unwrap() - 0.9444444444444444).abs() < 1e-15);
        assert!((pr_auc(&s, &y).unwrap() - 0.9166666666666665).abs() < 1e-15);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(pr_auc(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn random_scores_are_near_chance() {
        let mut r = rng::stream(42, "auroc-chance");
        let scores: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
        let labels: Vec<bool> = (0..1000).map(|_| r.random::<bool>()).collect();
        let a = auroc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.05, "{a}");
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        assert!((auroc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn risk_coverage_fixture() {
        let curve = risk_coverage_curve(&[0.1, 0.4, 0.4, 0.8], &[true, false, true, false]).unwrap();
        let pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.coverage, p.precision)).collect();
        assert_eq!(pts, vec![(1.0, 0.5), (0.75, 2.0 / 3.0), (0.25, 1.0)]);
        assert_eq!(curve[1].threshold, 0.8);
        assert_eq!(curve[2].threshold, 0.4);
        assert!(coverage_non_increasing(&curve));
        assert_eq!(precision_at_coverage(&curve, 0.8).unwrap().coverage, 1.0);
        assert_eq!(precision_at_coverage(&curve, 0.7).unwrap().coverage, 0.75);
        assert!(risk_coverage_curve(&[], &[]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // hand-ranked: y ranks (1, 3.5, 2, 3.5, 5) give 6.5 / sqrt(95)
        let rho = spearman(&x, &[1.0, 3.0, 2.0, 2.0, 5.0]).unwrap();
        assert!((rho - 0.6668859288553501).abs() < 1e-12, "{rho}");
        assert!(matches!(spearman(&x, &[1.0; 5]), Err(Error::UndefinedMetric(_))));
        assert!(spearman(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn phenotype_examples() {
        use CaseTag::*;
        let tags = [Boundary, Boundary, InDomain, InDomain, InDomain, InDomain, InDomain, InDomain, InDomain, InDomain, InDomain, InDomain];
        let conf = [0.9; 12];
        let correct = [true, false, true, true, true, true, true, true, true, true, true, false];
        let p = phenotype_metrics(&tags, &conf, &correct, 15).unwrap();
        let b = p.tag(Boundary).unwrap();
        assert!((b.dissociation - 0.4).abs() < 1e-12);
        assert!(matches!(p.tag(Gap), Err(Error::UndefinedMetric(_))));
        match p.boundary_localization_ratio {
            LocalizationRatio::Finite(v) => assert!((v - 5.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(LocalizationRatio::from_error_rates(0.4, 0.1), LocalizationRatio::Finite(0.4 / 0.1));
        assert!((0.4f64 / 0.1 - 4.0).abs() < 1e-12);
        assert_eq!(LocalizationRatio::from_error_rates(0.4, 0.0), LocalizationRatio::Infinite);
        assert!(LocalizationRatio::Infinite.at_least(2.0));
    }
}
