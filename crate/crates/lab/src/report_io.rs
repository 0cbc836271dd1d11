//! MetricsReport as ordered JSON and as one CSV file per table.

use serde_json::Value;
use tee_core::calibration::{CalibrationReport, ReliabilityBin};
use tee_core::detection::{Action, VerdictKind};
use tee_core::metrics::{CurvePoint, LocalizationRatio, PhenotypeBlock, TagStats};
use tee_core::pipeline::{
    CalibrationEffect, CurveBlock, Delta, Detector, DetectorRow, FalseFriendRow, MetaBlock, MetricsReport, Monitoring,
    RunMeta, VerdictBlock,
};
use tee_core::synth::CaseTag;

use crate::error::{LabError, LabResult};
use crate::json::{num, opt_num, parse, to_pretty, Obj, Read};

fn ratio_value(r: LocalizationRatio) -> Value {
    match r {
        LocalizationRatio::Finite(v) => num(v),
        LocalizationRatio::Infinite => Value::from("infinite"),
        LocalizationRatio::Undefined => Value::from("undefined"),
    }
}

fn detector_json(r: &DetectorRow) -> Value {
    Obj::new()
        .put("detector", r.detector.as_str())
        .put("auroc", opt_num(r.auroc))
        .put("pr_auc", opt_num(r.pr_auc))
        .put("auroc_boundary", opt_num(r.auroc_boundary))
        .put("auroc_gap", opt_num(r.auroc_gap))
        .put("precision_full_coverage", num(r.precision_full_coverage))
        .put("precision_at_target", opt_num(r.precision_at_target))
        .put("coverage_at_target", opt_num(r.coverage_at_target))
        .put("coverage_monotone", r.coverage_monotone)
        .build()
}

fn curve_json(c: &CurveBlock) -> Value {
    let points = c
        .points
        .iter()
        .map(|p| {
            Obj::new()
                .put("threshold", num(p.threshold))
                .put("coverage", num(p.coverage))
                .put("precision", num(p.precision))
                .put("committed", p.committed)
                .build()
        })
        .collect();
    Obj::new().put("detector", c.detector.as_str()).put("points", Value::Array(points)).build()
}

fn phenotype_json(p: &PhenotypeBlock) -> Value {
    let per_tag = CaseTag::ALL
        .iter()
        .zip(&p.per_tag)
        .map(|(tag, s)| {
            let o = Obj::new().put("tag", tag.as_str());
            match s {
                Some(s) => o
                    .put("count", s.count)
                    .put("mean_confidence", num(s.mean_confidence))
                    .put("accuracy", num(s.accuracy))
                    .put("dissociation", num(s.dissociation)),
                None => o.put("count", 0usize),
            }
            .build()
        })
        .collect();
    Obj::new()
        .put("per_tag", Value::Array(per_tag))
        .put("boundary_localization_ratio", ratio_value(p.boundary_localization_ratio))
        .put("ece", num(p.ece))
        .build()
}

fn false_friend_json(r: &FalseFriendRow) -> Value {
    Obj::new()
        .put("expert", r.expert)
        .put("other", r.other)
        .put("boundary_count", r.boundary_count)
        .put("boundary_accuracy", num(r.boundary_accuracy))
        .put("boundary_confidence", num(r.boundary_confidence))
        .put("in_domain_accuracy", num(r.in_domain_accuracy))
        .put("in_domain_confidence", num(r.in_domain_confidence))
        .build()
}

fn reliability_json(c: &CalibrationReport) -> Value {
    let bins = c
        .bins
        .iter()
        .map(|b| {
            Obj::new()
                .put("lower", num(b.lower))
                .put("upper", num(b.upper))
                .put("mean_confidence", num(b.mean_confidence))
                .put("accuracy", num(b.accuracy))
                .put("count", b.count)
                .build()
        })
        .collect();
    Obj::new()
        .put("ece", num(c.ece))
        .put("bin_count", c.bin_count)
        .put("bins", Value::Array(bins))
        .build()
}

fn calibration_json(c: &CalibrationEffect) -> Value {
    Obj::new()
        .put("spearman_pre", opt_num(c.spearman_pre))
        .put("spearman_post", opt_num(c.spearman_post))
        .put("in_domain_accuracy_pre", num(c.in_domain_accuracy_pre))
        .put("in_domain_accuracy_post", num(c.in_domain_accuracy_post))
        .put("boundary_entropy_pre", num(c.boundary_entropy_pre))
        .put("boundary_entropy_post", num(c.boundary_entropy_post))
        .put("in_domain_entropy_pre", num(c.in_domain_entropy_pre))
        .put("in_domain_entropy_post", num(c.in_domain_entropy_post))
        .put("reliability", reliability_json(&c.reliability))
        .put("ece_uncalibrated", num(c.ece_uncalibrated))
        .build()
}

fn verdicts_json(v: &VerdictBlock) -> Value {
    let counts = CaseTag::ALL
        .iter()
        .zip(&v.counts)
        .fold(Obj::new(), |o, (tag, row)| {
            let inner = VerdictKind::ALL.iter().zip(row).fold(Obj::new(), |i, (k, n)| i.put(k.as_str(), *n));
            o.put(tag.as_str(), inner)
        });
    let actions = Action::ALL.iter().zip(&v.actions).fold(Obj::new(), |o, (a, n)| o.put(a.as_str(), *n));
    Obj::new().put("counts", counts).put("actions", actions).build()
}

fn meta_json(m: &Option<MetaBlock>) -> Value {
    match m {
        None => Value::Null,
        Some(m) => {
            let rel = CaseTag::ALL
                .iter()
                .zip(&m.mean_reliability)
                .fold(Obj::new(), |o, (t, v)| o.put(t.as_str(), opt_num(*v)));
            Obj::new().put("accuracy", num(m.accuracy)).put("mean_reliability", rel).build()
        }
    }
}

fn monitoring_json(m: &Monitoring) -> Value {
    let fractions = VerdictKind::ALL
        .iter()
        .zip(&m.verdict_fractions)
        .fold(Obj::new(), |o, (k, v)| o.put(k.as_str(), num(*v)));
    Obj::new()
        .put("queries", m.queries)
        .put("answered_fraction", num(m.answered_fraction))
        .put("verdict_fractions", fractions)
        .put("mean_confidence", num(m.mean_confidence))
        .put("mean_routing_entropy", num(m.mean_routing_entropy))
        .put("mean_disagreement", num(m.mean_disagreement))
        .put("mean_coverage_signal", num(m.mean_coverage_signal))
        .put("mean_meta_reliability", opt_num(m.mean_meta_reliability))
        .build()
}

pub fn report_to_json(r: &MetricsReport) -> Value {
    let meta = Obj::new()
        .put("config_hash", r.meta.config_hash.as_str())
        .put("benchmark_hash", r.meta.benchmark_hash.as_str())
        .put("seed", r.meta.seed)
        .put("label_source", r.meta.label_source.as_str());
    Obj::new()
        .put("meta", meta)
        .put("detectors", Value::Array(r.detectors.iter().map(detector_json).collect()))
        .put("curves", Value::Array(r.curves.iter().map(curve_json).collect()))
        .put("phenotype", phenotype_json(&r.phenotype))
        .put("false_friends", Value::Array(r.false_friends.iter().map(false_friend_json).collect()))
        .put("calibration", calibration_json(&r.calibration))
        .put("verdicts", verdicts_json(&r.verdicts))
        .put("meta_expert", meta_json(&r.meta_expert))
        .put("monitoring", monitoring_json(&r.monitoring))
        .build()
}

/// Pretty JSON text of the report; identical input gives identical bytes.
pub fn emit_json(r: &MetricsReport) -> String {
    to_pretty(&report_to_json(r))
}

fn read_detector(r: Read<'_>) -> LabResult<DetectorRow> {
    Ok(DetectorRow {
        detector: r.parsed("detector", Detector::parse)?,
        auroc: r.opt_f64("auroc")?,
        pr_auc: r.opt_f64("pr_auc")?,
        auroc_boundary: r.opt_f64("auroc_boundary")?,
        auroc_gap: r.opt_f64("auroc_gap")?,
        precision_full_coverage: r.f64("precision_full_coverage")?,
        precision_at_target: r.opt_f64("precision_at_target")?,
        coverage_at_target: r.opt_f64("coverage_at_target")?,
        coverage_monotone: r.bool("coverage_monotone")?,
    })
}

fn read_curve(r: Read<'_>) -> LabResult<CurveBlock> {
    let points = r
        .items("points")?
        .into_iter()
        .map(|p| {
            Ok(CurvePoint {
                threshold: p.f64("threshold")?,
                coverage: p.f64("coverage")?,
                precision: p.f64("precision")?,
                committed: p.usize("committed")?,
            })
        })
        .collect::<LabResult<_>>()?;
    Ok(CurveBlock { detector: r.parsed("detector", Detector::parse)?, points })
}

fn read_phenotype(r: Read<'_>) -> LabResult<PhenotypeBlock> {
    let mut per_tag = Vec::new();
    for (tag, item) in CaseTag::ALL.iter().zip(r.items("per_tag")?) {
        if item.parsed("tag", CaseTag::parse)? != *tag {
            return Err(LabError::schema(r.path, "phenotype.per_tag", "tags out of order"));
        }
        let count = item.usize("count")?;
        per_tag.push(if count == 0 {
            None
        } else {
            Some(TagStats {
                tag: *tag,
                count,
                mean_confidence: item.f64("mean_confidence")?,
                accuracy: item.f64("accuracy")?,
                dissociation: item.f64("dissociation")?,
            })
        });
    }
    let ratio = match r.field("boundary_localization_ratio")? {
        Value::String(s) if s == "infinite" => LocalizationRatio::Infinite,
        Value::String(s) if s == "undefined" => LocalizationRatio::Undefined,
        _ => LocalizationRatio::Finite(r.f64("boundary_localization_ratio")?),
    };
    Ok(PhenotypeBlock { per_tag, boundary_localization_ratio: ratio, ece: r.f64("ece")? })
}

fn read_false_friend(r: Read<'_>) -> LabResult<FalseFriendRow> {
    Ok(FalseFriendRow {
        expert: r.usize("expert")?,
        other: r.usize("other")?,
        boundary_count: r.usize("boundary_count")?,
        boundary_accuracy: r.f64("boundary_accuracy")?,
        boundary_confidence: r.f64("boundary_confidence")?,
        in_domain_accuracy: r.f64("in_domain_accuracy")?,
        in_domain_confidence: r.f64("in_domain_confidence")?,
    })
}

fn read_calibration(r: Read<'_>) -> LabResult<CalibrationEffect> {
    let rel = r.child("reliability")?;
    let bins = rel
        .items("bins")?
        .into_iter()
        .map(|b| {
            Ok(ReliabilityBin {
                lower: b.f64("lower")?,
                upper: b.f64("upper")?,
                mean_confidence: b.f64("mean_confidence")?,
                accuracy: b.f64("accuracy")?,
                count: b.usize("count")?,
            })
        })
        .collect::<LabResult<_>>()?;
    Ok(CalibrationEffect {
        spearman_pre: r.opt_f64("spearman_pre")?,
        spearman_post: r.opt_f64("spearman_post")?,
        in_domain_accuracy_pre: r.f64("in_domain_accuracy_pre")?,
        in_domain_accuracy_post: r.f64("in_domain_accuracy_post")?,
        boundary_entropy_pre: r.f64("boundary_entropy_pre")?,
        boundary_entropy_post: r.f64("boundary_entropy_post")?,
        in_domain_entropy_pre: r.f64("in_domain_entropy_pre")?,
        in_domain_entropy_post: r.f64("in_domain_entropy_post")?,
        reliability: CalibrationReport { ece: rel.f64("ece")?, bin_count: rel.usize("bin_count")?, bins },
        ece_uncalibrated: r.f64("ece_uncalibrated")?,
    })
}

fn read_verdicts(r: Read<'_>) -> LabResult<VerdictBlock> {
    let counts_obj = r.child("counts")?;
    let counts = CaseTag::ALL
        .iter()
        .map(|t| {
            let row = counts_obj.child(t.as_str())?;
            VerdictKind::ALL.iter().map(|k| row.usize(k.as_str())).collect()
        })
        .collect::<LabResult<_>>()?;
    let actions_obj = r.child("actions")?;
    let actions = Action::ALL.iter().map(|a| actions_obj.usize(a.as_str())).collect::<LabResult<_>>()?;
    Ok(VerdictBlock { counts, actions })
}

fn read_meta(r: Read<'_>) -> LabResult<Option<MetaBlock>> {
    if r.field("meta_expert")?.is_null() {
        return Ok(None);
    }
    let m = r.child("meta_expert")?;
    let rel = m.child("mean_reliability")?;
    Ok(Some(MetaBlock {
        accuracy: m.f64("accuracy")?,
        mean_reliability: CaseTag::ALL.iter().map(|t| rel.opt_f64(t.as_str())).collect::<LabResult<_>>()?,
    }))
}

fn read_monitoring(r: Read<'_>) -> LabResult<Monitoring> {
    let fr = r.child("verdict_fractions")?;
    Ok(Monitoring {
        queries: r.usize("queries")?,
        answered_fraction: r.f64("answered_fraction")?,
        verdict_fractions: VerdictKind::ALL.iter().map(|k| fr.f64(k.as_str())).collect::<LabResult<_>>()?,
        mean_confidence: r.f64("mean_confidence")?,
        mean_routing_entropy: r.f64("mean_routing_entropy")?,
        mean_disagreement: r.f64("mean_disagreement")?,
        mean_coverage_signal: r.f64("mean_coverage_signal")?,
        mean_meta_reliability: r.opt_f64("mean_meta_reliability")?,
    })
}

pub fn report_from_json(value: &Value, path: &str) -> LabResult<MetricsReport> {
    let r = Read::new(value, path);
    let m = r.child("meta")?;
    Ok(MetricsReport {
        meta: RunMeta {
            config_hash: m.str("config_hash")?.to_string(),
            benchmark_hash: m.str("benchmark_hash")?.to_string(),
            seed: m.u64("seed")?,
            label_source: m.str("label_source")?.to_string(),
        },
        detectors: r.items("detectors")?.into_iter().map(read_detector).collect::<LabResult<_>>()?,
        curves: r.items("curves")?.into_iter().map(read_curve).collect::<LabResult<_>>()?,
        phenotype: read_phenotype(r.child("phenotype")?)?,
        false_friends: r.items("false_friends")?.into_iter().map(read_false_friend).collect::<LabResult<_>>()?,
        calibration: read_calibration(r.child("calibration")?)?,
        verdicts: read_verdicts(r.child("verdicts")?)?,
        meta_expert: read_meta(r)?,
        monitoring: read_monitoring(r.child("monitoring")?)?,
    })
}

pub fn read_json(text: &str, path: &str) -> LabResult<MetricsReport> {
    report_from_json(&parse(text, path)?, path)
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv emits UTF-8")
}

/// One `(file name, contents)` per report table.
pub fn emit_csv(r: &MetricsReport) -> Vec<(String, String)> {
    let detectors = r
        .detectors
        .iter()
        .map(|d| {
            vec![
                d.detector.as_str().to_string(),
                opt_cell(d.auroc),
                opt_cell(d.pr_auc),
                opt_cell(d.auroc_boundary),
                opt_cell(d.auroc_gap),
                cell(d.precision_full_coverage),
                opt_cell(d.precision_at_target),
                opt_cell(d.coverage_at_target),
                d.coverage_monotone.to_string(),
            ]
        })
        .collect();
    let curves = r
        .curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(|p| {
                vec![
                    c.detector.as_str().to_string(),
                    cell(p.threshold),
                    cell(p.coverage),
                    cell(p.precision),
                    p.committed.to_string(),
                ]
            })
        })
        .collect();
    let phenotype = CaseTag::ALL
        .iter()
        .zip(&r.phenotype.per_tag)
        .map(|(t, s)| match s {
            Some(s) => vec![
                t.as_str().to_string(),
                s.count.to_string(),
                cell(s.mean_confidence),
                cell(s.accuracy),
                cell(s.dissociation),
            ],
            None => vec![t.as_str().to_string(), "0".into(), String::new(), String::new(), String::new()],
        })
        .collect();
    let false_friends = r
        .false_friends
        .iter()
        .map(|f| {
            vec![
                f.expert.to_string(),
                f.other.to_string(),
                f.boundary_count.to_string(),
                cell(f.boundary_accuracy),
                cell(f.boundary_confidence),
                cell(f.in_domain_accuracy),
                cell(f.in_domain_confidence),
            ]
        })
        .collect();
    let reliability = r
        .calibration
        .reliability
        .bins
        .iter()
        .map(|b| vec![cell(b.lower), cell(b.upper), cell(b.mean_confidence), cell(b.accuracy), b.count.to_string()])
        .collect();
    let verdicts = CaseTag::ALL
        .iter()
        .zip(&r.verdicts.counts)
        .map(|(t, row)| {
            let mut v = vec![t.as_str().to_string()];
            v.extend(row.iter().map(usize::to_string));
            v
        })
        .collect();
    let actions = Action::ALL
        .iter()
        .zip(&r.verdicts.actions)
        .map(|(a, n)| vec![a.as_str().to_string(), n.to_string()])
        .collect();
    let scalars = r.scalars().into_iter().map(|(k, v)| vec![k, opt_cell(v)]).collect();
    let mut verdict_header = vec!["case_tag"];
    verdict_header.extend(VerdictKind::ALL.iter().map(|k| k.as_str()));
    vec![
        (
            "detectors.csv".into(),
            csv_text(
                &[
                    "detector",
                    "auroc",
                    "pr_auc",
                    "auroc_boundary",
                    "auroc_gap",
                    "precision_full_coverage",
                    "precision_at_target",
                    "coverage_at_target",
                    "coverage_monotone",
                ],
                detectors,
            ),
        ),
        ("curves.csv".into(), csv_text(&["detector", "threshold", "coverage", "precision", "committed"], curves)),
        (
            "phenotype.csv".into(),
            csv_text(&["case_tag", "count", "mean_confidence", "accuracy", "dissociation"], phenotype),
        ),
        (
            "false_friends.csv".into(),
            csv_text(
                &[
                    "expert",
                    "other",
                    "boundary_count",
                    "boundary_accuracy",
                    "boundary_confidence",
                    "in_domain_accuracy",
                    "in_domain_confidence",
                ],
                false_friends,
            ),
        ),
        (
            "reliability.csv".into(),
            csv_text(&["lower", "upper", "mean_confidence", "accuracy", "count"], reliability),
        ),
        ("verdicts.csv".into(), csv_text(&verdict_header, verdicts)),
        ("actions.csv".into(), csv_text(&["action", "count"], actions)),
        ("scalars.csv".into(), csv_text(&["metric", "value"], scalars)),
    ]
}

/// `name,a,b,delta` lines for an A/B comparison.
pub fn deltas_csv(deltas: &[Delta]) -> String {
    let rows = deltas
        .iter()
        .map(|d| vec![d.name.clone(), opt_cell(d.a), opt_cell(d.b), opt_cell(d.delta)])
        .collect();
    csv_text(&["metric", "a", "b", "delta"], rows)
}
