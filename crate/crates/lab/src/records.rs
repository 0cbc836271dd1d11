//! One JSON object per line for the per-query decision log.

use serde_json::Value;
use tee_core::detection::{Action, VerdictKind};
use tee_core::pipeline::{Detector, QueryRecord};
use tee_core::synth::{CaseTag, Owner};

use crate::error::{LabError, LabResult};
use crate::json::{ints, num, nums, opt_num, parse, to_line, Obj, Read};

fn owner_value(o: Owner) -> Value {
    match o {
        Owner::Domain(d) => Value::from(d),
        Owner::Gap => Value::from("gap"),
    }
}

pub fn record_to_json(r: &QueryRecord) -> Value {
    let scores = Obj::new();
    let scores = Detector::ALL.iter().fold(scores, |o, d| o.put(d.as_str(), opt_num(r.score(*d))));
    Obj::new()
        .put("id", r.id)
        .put("cluster_id", r.cluster_id)
        .put("owner", owner_value(r.owner))
        .put("case_tag", r.case_tag.as_str())
        .put("class_label", r.class_label)
        .put("shared_by", r.shared_by.map(|(a, b)| ints(&[a, b])).unwrap_or(Value::Null))
        .put("distances", nums(&r.distances))
        .put("raw_affinities", nums(&r.raw_affinities))
        .put("gate_weights", nums(&r.gate_weights))
        .put("routing_entropy", num(r.routing_entropy))
        .put("margin", num(r.margin))
        .put("selected", ints(&r.selected))
        .put("selected_weights", nums(&r.selected_weights))
        .put("original_probs", Value::Array(r.original_probs.iter().map(|p| nums(p)).collect()))
        .put("final_probs", Value::Array(r.final_probs.iter().map(|p| nums(p)).collect()))
        .put("system_probs", nums(&r.system_probs))
        .put("prediction", r.prediction)
        .put("confidence", num(r.confidence))
        .put("correct", r.correct)
        .put("scores", scores)
        .put("meta_distribution", r.meta_distribution.as_deref().map(nums).unwrap_or(Value::Null))
        .put("system_jsd", opt_num(r.system_jsd))
        .put("comparable_confidence", r.comparable_confidence.map(Value::from).unwrap_or(Value::Null))
        .put("verdict", r.verdict.as_str())
        .put("action", r.action.as_str())
        .put("template", r.template.as_str())
        .put("entropy_pre", num(r.entropy_pre))
        .put("entropy_post", num(r.entropy_post))
        .build()
}

pub fn record_from_json(r: Read<'_>) -> LabResult<QueryRecord> {
    let owner = match r.field("owner")? {
        Value::String(s) if s == "gap" => Owner::Gap,
        v => Owner::Domain(r.value_usize("owner", v)?),
    };
    let shared_by = match r.field("shared_by")? {
        Value::Null => None,
        _ => match r.usizes("shared_by")?.as_slice() {
            [a, b] => Some((*a, *b)),
            _ => return Err(LabError::schema(r.path, "shared_by", "expected two domain ids")),
        },
    };
    let scores_obj = r.child("scores")?;
    let scores = Detector::ALL
        .iter()
        .map(|d| scores_obj.opt_f64(d.as_str()))
        .collect::<LabResult<Vec<_>>>()?;
    let meta_distribution = match r.field("meta_distribution")? {
        Value::Null => None,
        _ => Some(r.f64s("meta_distribution")?),
    };
    let comparable_confidence = match r.field("comparable_confidence")? {
        Value::Null => None,
        _ => Some(r.bool("comparable_confidence")?),
    };
    Ok(QueryRecord {
        id: r.usize("id")?,
        cluster_id: r.usize("cluster_id")?,
        owner,
        case_tag: r.parsed("case_tag", CaseTag::parse)?,
        class_label: r.usize("class_label")?,
        shared_by,
        distances: r.f64s("distances")?,
        raw_affinities: r.f64s("raw_affinities")?,
        gate_weights: r.f64s("gate_weights")?,
        routing_entropy: r.f64("routing_entropy")?,
        margin: r.f64("margin")?,
        selected: r.usizes("selected")?,
        selected_weights: r.f64s("selected_weights")?,
        original_probs: r.f64_rows("original_probs")?,
        final_probs: r.f64_rows("final_probs")?,
        system_probs: r.f64s("system_probs")?,
        prediction: r.usize("prediction")?,
        confidence: r.f64("confidence")?,
        correct: r.bool("correct")?,
        scores,
        meta_distribution,
        system_jsd: r.opt_f64("system_jsd")?,
        comparable_confidence,
        verdict: r.parsed("verdict", VerdictKind::parse)?,
        action: r.parsed("action", Action::parse)?,
        template: r.str("template")?.to_string(),
        entropy_pre: r.f64("entropy_pre")?,
        entropy_post: r.f64("entropy_post")?,
    })
}

/// The whole log as JSON lines, newline-terminated.
pub fn write_log(log: &[QueryRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&to_line(&record_to_json(r)));
        out.push('\n');
    }
    out
}

/// Parse a JSON-lines log; errors carry the 1-based line number.
pub fn read_log(text: &str, path: &str) -> LabResult<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let label = format!("{path}:{}", i + 1);
        let value = parse(line, &label)?;
        out.push(record_from_json(Read::new(&value, &label))?);
    }
    Ok(out)
}
