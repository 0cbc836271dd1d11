use tee_core::pipeline::ExperimentConfig;
use tee_lab::config_file::{config_hash, emit_config, parse_config};
use tee_lab::LabError;

fn shipped(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn config_error(text: &str) -> (String, Option<usize>, String) {
    match parse_config(text).unwrap_err() {
        LabError::Config { key, line, reason } => (key, line, reason),
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn shipped_default_is_the_built_in_default() {
    assert_eq!(parse_config(&shipped("default.conf")).unwrap(), ExperimentConfig::default());
    assert_eq!(shipped("default.conf"), emit_config(&ExperimentConfig::default()));
}

#[test]
fn shipped_baseline_turns_interventions_off() {
    let cfg = parse_config(&shipped("baseline.conf")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default().baseline());
}

#[test]
fn shipped_kappa_zero_only_changes_context() {
    let cfg = parse_config(&shipped("kappa0.conf")).unwrap();
    let mut expected = ExperimentConfig::default();
    expected.benchmark.context_informativeness = 0.0;
    assert_eq!(cfg, expected);
}

#[test]
fn missing_key_is_named() {
    let text: String = emit_config(&ExperimentConfig::default())
        .lines()
        .filter(|l| !l.starts_with("router.tau"))
        .map(|l| format!("{l}\n"))
        .collect();
    let (key, line, reason) = config_error(&text);
    assert_eq!(key, "router.tau");
    assert_eq!(line, None);
    assert!(reason.contains("missing"));
}

#[test]
fn unknown_and_duplicate_keys_are_rejected_with_line() {
    let base = emit_config(&ExperimentConfig::default());
    let (key, line, reason) = config_error(&format!("{base}router.temperature = 2\n"));
    assert_eq!(key, "router.temperature");
    assert_eq!(line, Some(base.lines().count() + 1));
    assert!(reason.contains("unknown"));

    let (key, line, reason) = config_error(&format!("{base}seed = 7\n"));
    assert_eq!(key, "seed");
    assert_eq!(line, Some(base.lines().count() + 1));
    assert!(reason.contains("duplicate"));
}

#[test]
fn unparsable_value_reports_line() {
    let text = emit_config(&ExperimentConfig::default()).replace("detect.theta_ood = 6", "detect.theta_ood = six");
    let (key, line, _) = config_error(&text);
    assert_eq!(key, "detect.theta_ood");
    let expected = text.lines().position(|l| l.starts_with("detect.theta_ood")).unwrap() + 1;
    assert_eq!(line, Some(expected));
}

#[test]
fn semantic_validation_names_the_key() {
    let text = emit_config(&ExperimentConfig::default()).replace("router.k = 2", "router.k = 9");
    let err = parse_config(&text).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(matches!(&err, LabError::Config { key, .. } if key == "router.k"), "{err}");
}

#[test]
fn comments_blank_lines_and_spacing_do_not_change_the_hash() {
    let cfg = ExperimentConfig::default();
    let canonical = emit_config(&cfg);
    let noisy: String = canonical
        .lines()
        .map(|l| format!("  {}\n\n# note\n", l.replace(" = ", "=")))
        .collect();
    let parsed = parse_config(&noisy).unwrap();
    assert_eq!(config_hash(&parsed), config_hash(&cfg));
    let mut other = cfg.clone();
    other.seed = 43;
    assert_ne!(config_hash(&other), config_hash(&cfg));
}
