//! Named 2-D float arrays in a line-oriented text file.
//!
//! ```text
//! # tee-lab checkpoint
//! array expert.0.layer.0.weight 32 18
//! <one row of 18 values per line>
//! ```

use tee_core::experts::{ExpertModel, ExpertStats};
use tee_core::numerics::{Layer, Mat64, MlpParams};
use tee_core::pipeline::{CalibrationArtifacts, Calibrator};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { name: name.into(), rows, cols, data }
    }

    pub fn vector(name: impl Into<String>, data: &[f64]) -> Self {
        Self::new(name, 1, data.len(), data.to_vec())
    }
}

pub fn write_arrays(arrays: &[NamedArray]) -> String {
    let mut out = String::from("# tee-lab checkpoint\n");
    for a in arrays {
        out.push_str(&format!("array {} {} {}\n", a.name, a.rows, a.cols));
        for r in 0..a.rows {
            let row: Vec<String> = a.data[r * a.cols..(r + 1) * a.cols].iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn read_arrays(text: &str, path: &str) -> LabResult<Vec<NamedArray>> {
    let err = |line: usize, reason: String| LabError::Format { path: path.to_string(), line, reason };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.starts_with('#'));
    let mut out = Vec::new();
    while let Some((n, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [kw, name, rows, cols] = parts.as_slice() else {
            return Err(err(n, "expected `array <name> <rows> <cols>`".into()));
        };
        if *kw != "array" {
            return Err(err(n, format!("expected `array`, found `{kw}`")));
        }
        let rows: usize = rows.parse().map_err(|_| err(n, format!("bad row count `{rows}`")))?;
        let cols: usize = cols.parse().map_err(|_| err(n, format!("bad column count `{cols}`")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (m, line) = lines.next().ok_or_else(|| err(n, format!("array `{name}` truncated")))?;
            let row = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| err(m, format!("bad value `{v}`"))))
                .collect::<LabResult<Vec<_>>>()?;
            if row.len() != cols {
                return Err(err(m, format!("expected {cols} values, found {}", row.len())));
            }
            data.extend(row);
        }
        out.push(NamedArray::new(*name, rows, cols, data));
    }
    Ok(out)
}

pub fn mlp_arrays(prefix: &str, p: &MlpParams) -> Vec<NamedArray> {
    let mut out = Vec::new();
    for (i, l) in p.layers.iter().enumerate() {
        let w = &l.weight;
        out.push(NamedArray::new(format!("{prefix}.layer.{i}.weight"), w.rows(), w.cols(), w.as_slice().to_vec()));
        out.push(NamedArray::vector(format!("{prefix}.layer.{i}.bias"), &l.bias));
    }
    if let Some(m) = &p.stream_mix {
        out.push(NamedArray::new(format!("{prefix}.stream_mix"), m.rows(), m.cols(), m.as_slice().to_vec()));
    }
    out
}

fn find<'a>(arrays: &'a [NamedArray], name: &str) -> Option<&'a NamedArray> {
    arrays.iter().find(|a| a.name == name)
}

/// Rebuild a network written by [`mlp_arrays`].
pub fn mlp_from_arrays(arrays: &[NamedArray], prefix: &str) -> LabResult<MlpParams> {
    let mut layers = Vec::new();
    while let Some(w) = find(arrays, &format!("{prefix}.layer.{}.weight", layers.len())) {
        let bias_name = format!("{prefix}.layer.{}.bias", layers.len());
        let b = find(arrays, &bias_name).ok_or_else(|| LabError::schema("checkpoint", bias_name.clone(), "missing"))?;
        layers.push(Layer { weight: Mat64::from_vec(w.rows, w.cols, w.data.clone())?, bias: b.data.clone() });
    }
    let mut params = MlpParams::new(layers)?;
    if let Some(m) = find(arrays, &format!("{prefix}.stream_mix")) {
        params = params.with_stream_mix(Mat64::from_vec(m.rows, m.cols, m.data.clone())?)?;
    }
    Ok(params)
}

pub fn stats_arrays(stats: &[ExpertStats]) -> Vec<NamedArray> {
    stats
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            vec![
                NamedArray::vector(format!("expert.{i}.centroid"), &s.centroid),
                NamedArray::vector(format!("expert.{i}.variance"), &s.variance),
                NamedArray::vector(format!("expert.{i}.sample_count"), &[s.sample_count as f64]),
            ]
        })
        .collect()
}

pub fn experts_arrays(experts: &[ExpertModel]) -> Vec<NamedArray> {
    experts.iter().flat_map(|e| mlp_arrays(&format!("expert.{}", e.domain), &e.params)).collect()
}

pub fn calibration_arrays(cal: &CalibrationArtifacts) -> Vec<NamedArray> {
    let mut out: Vec<NamedArray> = cal
        .baseline_temperatures
        .iter()
        .enumerate()
        .map(|(i, t)| NamedArray::vector(format!("baseline.{i}.temperature"), &[t.t]))
        .collect();
    for (i, c) in cal.calibrators.iter().enumerate() {
        out.push(match c {
            Calibrator::Identity => NamedArray::new(format!("calibrator.{i}.identity"), 0, 0, Vec::new()),
            Calibrator::Scalar(t) => NamedArray::vector(format!("calibrator.{i}.temperature"), &[t.t]),
            Calibrator::Adaptive(p) => NamedArray::vector(format!("calibrator.{i}.adaptive"), &[p.a, p.b]),
        });
    }
    out
}
