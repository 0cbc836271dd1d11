//! Strict `key = value` experiment configuration files.
//!
//! Every key is required, unknown and repeated keys are rejected, `#` starts a
//! comment line. [`emit_config`] writes the canonical form that
//! [`config_hash`] digests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use tee_core::detection::{Action, MetaInputMode, ResponsePolicy, VerdictKind};
use tee_core::pipeline::{CalibrationMode, CalibrationOrder, ExperimentConfig, Schedule};
use tee_core::synth::FalseFriendPair;
use tee_core::Error as CoreError;

use crate::error::{LabError, LabResult};

fn schedule_entries(prefix: &str, s: &Schedule, out: &mut Vec<(String, String)>) {
    out.push((format!("{prefix}.epochs"), s.epochs.to_string()));
    out.push((format!("{prefix}.learning_rate"), s.learning_rate.to_string()));
    out.push((format!("{prefix}.batch_size"), s.batch_size.to_string()));
}

fn pairs_text(pairs: &[FalseFriendPair]) -> String {
    if pairs.is_empty() {
        return "none".into();
    }
    pairs
        .iter()
        .map(|p| format!("{}-{}:{}", p.first, p.second, p.shared_clusters))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Every key with its canonical value text, in file order.
pub fn config_entries(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let push = |out: &mut Vec<(String, String)>, k: &str, v: String| out.push((k.to_string(), v));
    push(&mut out, "seed", cfg.seed.to_string());
    let b = &cfg.benchmark;
    push(&mut out, "benchmark.seed", b.seed.to_string());
    push(&mut out, "benchmark.input_dim", b.input_dim.to_string());
    push(&mut out, "benchmark.num_domains", b.num_domains.to_string());
    push(&mut out, "benchmark.classes", b.classes.to_string());
    push(&mut out, "benchmark.private_clusters_per_domain", b.private_clusters_per_domain.to_string());
    push(&mut out, "benchmark.false_friend_pairs", pairs_text(&b.false_friend_pairs));
    push(&mut out, "benchmark.gap_clusters", b.gap_clusters.to_string());
    push(&mut out, "benchmark.cluster_sigma", b.cluster_sigma.to_string());
    push(&mut out, "benchmark.context_informativeness", b.context_informativeness.to_string());
    push(&mut out, "benchmark.context_dims", b.context_dims.to_string());
    push(&mut out, "benchmark.samples_train", b.samples_per_cluster.train.to_string());
    push(&mut out, "benchmark.samples_val", b.samples_per_cluster.val.to_string());
    push(&mut out, "benchmark.samples_test", b.samples_per_cluster.test.to_string());
    push(&mut out, "benchmark.min_divergence", b.min_divergence.to_string());
    push(&mut out, "expert.hidden", cfg.expert.hidden.to_string());
    push(&mut out, "expert.mhc_streams", cfg.expert.mhc_streams.to_string());
    schedule_entries("expert", &cfg.expert.schedule, &mut out);
    push(&mut out, "embed.hidden", cfg.embed.hidden.to_string());
    push(&mut out, "embed.dim", cfg.embed.dim.to_string());
    push(&mut out, "embed.contrastive_on", cfg.embed.contrastive_on.to_string());
    push(&mut out, "embed.pairs_per_relation", cfg.embed.pairs_per_relation.to_string());
    push(&mut out, "embed.margin", cfg.embed.margin.to_string());
    schedule_entries("embed", &cfg.embed.schedule, &mut out);
    let r = &cfg.router;
    push(&mut out, "router.hidden", r.hidden.to_string());
    push(&mut out, "router.tau", r.tau.to_string());
    push(&mut out, "router.k", r.k.to_string());
    push(&mut out, "router.lambda_lb", r.lambda_lb.to_string());
    push(&mut out, "router.lambda_boundary", r.lambda_boundary.to_string());
    push(&mut out, "router.lambda_coverage", r.lambda_coverage.to_string());
    push(&mut out, "router.kernel_sigma", r.kernel_sigma.to_string());
    schedule_entries("router", &cfg.router_schedule, &mut out);
    push(&mut out, "detect.theta_ood", cfg.detect.theta_ood.to_string());
    push(&mut out, "detect.theta_jsd", cfg.detect.theta_jsd.to_string());
    push(&mut out, "detect.gamma", cfg.detect.gamma.to_string());
    push(&mut out, "calibration.lambda_flat", cfg.calibration.lambda_flat.to_string());
    push(&mut out, "calibration.order", cfg.calibration.order.as_str().to_string());
    schedule_entries("calibration.finetune", &cfg.calibration.finetune, &mut out);
    push(&mut out, "meta.input_mode", cfg.meta.input_mode.as_str().to_string());
    push(&mut out, "meta.hidden", cfg.meta.hidden.to_string());
    schedule_entries("meta", &cfg.meta.schedule, &mut out);
    let s = &cfg.switches;
    push(&mut out, "switches.multi_expert_on", s.multi_expert_on.to_string());
    push(&mut out, "switches.boundary_losses_on", s.boundary_losses_on.to_string());
    push(&mut out, "switches.calibration_mode", s.calibration_mode.as_str().to_string());
    push(&mut out, "switches.meta_expert_on", s.meta_expert_on.to_string());
    push(&mut out, "switches.mhc_on", s.mhc_on.to_string());
    for kind in VerdictKind::ALL {
        let action = cfg.policy.get(kind).map(Action::as_str).unwrap_or("unset");
        push(&mut out, &format!("policy.{}", kind.as_str()), action.to_string());
    }
    push(&mut out, "report.ece_bins", cfg.ece_bins.to_string());
    out
}

/// Canonical config text: one `key = value` line per key, in
/// [`config_entries`] order.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    let mut text = String::from("# tee-lab experiment config\n");
    for (k, v) in config_entries(cfg) {
        text.push_str(&k);
        text.push_str(" = ");
        text.push_str(&v);
        text.push('\n');
    }
    text
}

/// Hex SHA-256 of the canonical text of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    tee_core::pipeline::hex(&Sha256::digest(emit_config(cfg).as_bytes()))
}

struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> LabResult<(usize, String)> {
        self.values.remove(key).ok_or_else(|| LabError::Config {
            key: key.to_string(),
            line: None,
            reason: "missing required key".into(),
        })
    }

    fn with<T>(&mut self, key: &str, parse: impl FnOnce(&str) -> Result<T, String>) -> LabResult<T> {
        let (line, raw) = self.take(key)?;
        parse(&raw).map_err(|reason| LabError::Config {
            key: key.to_string(),
            line: Some(line),
            reason,
        })
    }

    fn get<T: FromStr>(&mut self, key: &str) -> LabResult<T>
    where
        T::Err: Display,
    {
        self.with(key, |s| s.parse::<T>().map_err(|e| format!("cannot parse `{s}`: {e}")))
    }

    fn schedule(&mut self, prefix: &str) -> LabResult<Schedule> {
        Ok(Schedule {
            epochs: self.get(&format!("{prefix}.epochs"))?,
            learning_rate: self.get(&format!("{prefix}.learning_rate"))?,
            batch_size: self.get(&format!("{prefix}.batch_size"))?,
        })
    }
}

fn named<'a, T: 'a>(parse: fn(&str) -> Option<T>, options: &'a [&'a str]) -> impl FnOnce(&str) -> Result<T, String> + 'a {
    move |s| parse(s).ok_or_else(|| format!("`{s}` is not one of {}", options.join(", ")))
}

fn parse_pairs(s: &str) -> Result<Vec<FalseFriendPair>, String> {
    if s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let item = item.trim();
            let bad = || format!("`{item}` is not of the form first-second:shared_clusters");
            let (domains, shared) = item.split_once(':').ok_or_else(bad)?;
            let (first, second) = domains.split_once('-').ok_or_else(bad)?;
            Ok(FalseFriendPair {
                first: first.trim().parse().map_err(|_| bad())?,
                second: second.trim().parse().map_err(|_| bad())?,
                shared_clusters: shared.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn split_lines(text: &str) -> LabResult<Entries> {
    let known: Vec<String> = config_entries(&ExperimentConfig::default())
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| LabError::Config {
            key: trimmed.to_string(),
            line: Some(line),
            reason: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        if !known.iter().any(|k| k == key) {
            return Err(LabError::Config {
                key: key.to_string(),
                line: Some(line),
                reason: "unknown key".into(),
            });
        }
        if let Some((first, _)) = values.insert(key.to_string(), (line, value.trim().to_string())) {
            return Err(LabError::Config {
                key: key.to_string(),
                line: Some(line),
                reason: format!("duplicate key (first set on line {first})"),
            });
        }
    }
    Ok(Entries { values })
}

/// Parse and validate a config file.
pub fn parse_config(text: &str) -> LabResult<ExperimentConfig> {
    let mut e = split_lines(text)?;
    let mut cfg = ExperimentConfig::default();
    cfg.seed = e.get("seed")?;
    let b = &mut cfg.benchmark;
    b.seed = e.get("benchmark.seed")?;
    b.input_dim = e.get("benchmark.input_dim")?;
    b.num_domains = e.get("benchmark.num_domains")?;
    b.classes = e.get("benchmark.classes")?;
    b.private_clusters_per_domain = e.get("benchmark.private_clusters_per_domain")?;
    b.false_friend_pairs = e.with("benchmark.false_friend_pairs", parse_pairs)?;
    b.gap_clusters = e.get("benchmark.gap_clusters")?;
    b.cluster_sigma = e.get("benchmark.cluster_sigma")?;
    b.context_informativeness = e.get("benchmark.context_informativeness")?;
    b.context_dims = e.get("benchmark.context_dims")?;
    b.samples_per_cluster.train = e.get("benchmark.samples_train")?;
    b.samples_per_cluster.val = e.get("benchmark.samples_val")?;
    b.samples_per_cluster.test = e.get("benchmark.samples_test")?;
    b.min_divergence = e.get("benchmark.min_divergence")?;
    cfg.expert.hidden = e.get("expert.hidden")?;
    cfg.expert.mhc_streams = e.get("expert.mhc_streams")?;
    cfg.expert.schedule = e.schedule("expert")?;
    cfg.embed.hidden = e.get("embed.hidden")?;
    cfg.embed.dim = e.get("embed.dim")?;
    cfg.embed.contrastive_on = e.get("embed.contrastive_on")?;
    cfg.embed.pairs_per_relation = e.get("embed.pairs_per_relation")?;
    cfg.embed.margin = e.get("embed.margin")?;
    cfg.embed.schedule = e.schedule("embed")?;
    let r = &mut cfg.router;
    r.hidden = e.get("router.hidden")?;
    r.tau = e.get("router.tau")?;
    r.k = e.get("router.k")?;
    r.lambda_lb = e.get("router.lambda_lb")?;
    r.lambda_boundary = e.get("router.lambda_boundary")?;
    r.lambda_coverage = e.get("router.lambda_coverage")?;
    r.kernel_sigma = e.get("router.kernel_sigma")?;
    cfg.router_schedule = e.schedule("router")?;
    cfg.detect.theta_ood = e.get("detect.theta_ood")?;
    cfg.detect.theta_jsd = e.get("detect.theta_jsd")?;
    cfg.detect.gamma = e.get("detect.gamma")?;
    cfg.calibration.lambda_flat = e.get("calibration.lambda_flat")?;
    let orders: Vec<&str> = CalibrationOrder::ALL.iter().map(|o| o.as_str()).collect();
    cfg.calibration.order = e.with("calibration.order", named(CalibrationOrder::parse, &orders))?;
    cfg.calibration.finetune = e.schedule("calibration.finetune")?;
    let modes: Vec<&str> = MetaInputMode::ALL.iter().map(|m| m.as_str()).collect();
    cfg.meta.input_mode = e.with("meta.input_mode", named(MetaInputMode::parse, &modes))?;
    cfg.meta.hidden = e.get("meta.hidden")?;
    cfg.meta.schedule = e.schedule("meta")?;
    cfg.switches.multi_expert_on = e.get("switches.multi_expert_on")?;
    cfg.switches.boundary_losses_on = e.get("switches.boundary_losses_on")?;
    let cal: Vec<&str> = CalibrationMode::ALL.iter().map(|m| m.as_str()).collect();
    cfg.switches.calibration_mode = e.with("switches.calibration_mode", named(CalibrationMode::parse, &cal))?;
    cfg.switches.meta_expert_on = e.get("switches.meta_expert_on")?;
    cfg.switches.mhc_on = e.get("switches.mhc_on")?;
    let actions: Vec<&str> = Action::ALL.iter().map(|a| a.as_str()).collect();
    let mut policy = Vec::new();
    for kind in VerdictKind::ALL {
        let action = e.with(&format!("policy.{}", kind.as_str()), named(Action::parse, &actions))?;
        policy.push((kind, action));
    }
    cfg.policy = ResponsePolicy::from_entries(policy);
    cfg.ece_bins = e.get("report.ece_bins")?;
    debug_assert!(e.values.is_empty());
    cfg.validate().map_err(|err| match err.root() {
        CoreError::Config { key, reason } => LabError::Config {
            key: key.clone(),
            line: None,
            reason: reason.clone(),
        },
        _ => LabError::Core(err),
    })?;
    Ok(cfg)
}
