//! Benchmark splits as CSV with `#` metadata lines.

use tee_core::pipeline::splits_hash;
use tee_core::synth::{Benchmark, CaseTag, LabeledExample, Owner, Split};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub benchmark_hash: String,
    pub feature_dim: usize,
    /// Train, val, test.
    pub splits: [Vec<LabeledExample>; 3],
}

impl Dataset {
    pub fn from_benchmark(bench: &Benchmark) -> Self {
        Self {
            benchmark_hash: tee_core::pipeline::benchmark_hash(bench),
            feature_dim: bench.feature_dim(),
            splits: [bench.train.clone(), bench.val.clone(), bench.test.clone()],
        }
    }

    pub fn split(&self, split: Split) -> &[LabeledExample] {
        &self.splits[Split::ALL.iter().position(|s| *s == split).unwrap_or(0)]
    }

    pub fn recomputed_hash(&self) -> String {
        splits_hash([&self.splits[0], &self.splits[1], &self.splits[2]])
    }
}

fn owner_text(o: Owner) -> String {
    match o {
        Owner::Domain(d) => d.to_string(),
        Owner::Gap => "gap".into(),
    }
}

pub fn write_dataset(ds: &Dataset) -> String {
    let mut out = format!(
        "# tee-lab dataset\n# benchmark_hash = {}\n# feature_dim = {}\n",
        ds.benchmark_hash, ds.feature_dim
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["split".to_string(), "cluster_id".into(), "owner".into(), "case_tag".into(), "class_label".into()];
    header.extend((0..ds.feature_dim).map(|i| format!("x{i}")));
    w.write_record(&header).expect("in-memory csv write");
    for (split, examples) in Split::ALL.iter().zip(&ds.splits) {
        for e in examples {
            let mut row = vec![
                split.as_str().to_string(),
                e.cluster_id.to_string(),
                owner_text(e.owner),
                e.case_tag.as_str().to_string(),
                e.class_label.to_string(),
            ];
            row.extend(e.features.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row).expect("in-memory csv write");
        }
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("UTF-8"));
    out
}

fn meta_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let (k, v) = line.trim_start_matches('#').split_once('=')?;
    (k.trim() == key).then(|| v.trim())
}

/// Parse a dataset file and check its declared hash against the samples.
pub fn read_dataset(text: &str, path: &str) -> LabResult<Dataset> {
    let err = |line: usize, reason: String| LabError::Format { path: path.to_string(), line, reason };
    let mut hash = None;
    let mut dim = None;
    let mut header_lines = 0;
    for line in text.lines() {
        if !line.starts_with('#') {
            break;
        }
        header_lines += 1;
        if let Some(v) = meta_value(line, "benchmark_hash") {
            hash = Some(v.to_string());
        }
        if let Some(v) = meta_value(line, "feature_dim") {
            dim = Some(v.parse::<usize>().map_err(|_| err(header_lines, format!("bad feature_dim `{v}`")))?);
        }
    }
    let hash = hash.ok_or_else(|| err(1, "missing `# benchmark_hash = ...` line".into()))?;
    let dim = dim.ok_or_else(|| err(1, "missing `# feature_dim = ...` line".into()))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| err(header_lines + 1, e.to_string()))?.clone();
    if headers.len() != 5 + dim {
        return Err(err(header_lines + 1, format!("expected {} columns, found {}", 5 + dim, headers.len())));
    }
    let mut splits: [Vec<LabeledExample>; 3] = Default::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let split = Split::parse(field(0)).ok_or_else(|| err(line, format!("unknown split `{}`", field(0))))?;
        let int = |i: usize, what: &str| {
            field(i).parse::<usize>().map_err(|_| err(line, format!("bad {what} `{}`", field(i))))
        };
        let owner = match field(2) {
            "gap" => Owner::Gap,
            _ => Owner::Domain(int(2, "owner")?),
        };
        let case_tag = CaseTag::parse(field(3)).ok_or_else(|| err(line, format!("unknown case_tag `{}`", field(3))))?;
        let features = (5..5 + dim)
            .map(|i| field(i).parse::<f64>().map_err(|_| err(line, format!("bad feature `{}`", field(i)))))
            .collect::<LabResult<Vec<_>>>()?;
        let idx = Split::ALL.iter().position(|s| *s == split).unwrap_or(0);
        splits[idx].push(LabeledExample {
            features,
            class_label: int(4, "class_label")?,
            owner,
            cluster_id: int(1, "cluster_id")?,
            case_tag,
        });
    }
    let ds = Dataset { benchmark_hash: hash, feature_dim: dim, splits };
    let actual = ds.recomputed_hash();
    if actual != ds.benchmark_hash {
        return Err(err(2, format!("declared benchmark_hash does not match samples (computed {actual})")));
    }
    Ok(ds)
}
