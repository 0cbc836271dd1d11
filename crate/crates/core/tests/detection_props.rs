use proptest::prelude::*;
use tee_core::calibration::{apply_temperature, ece_from_confidences};
use tee_core::detection::{
    coverage_verdict, DisagreementReport, DisagreementStats, ResponsePolicy, Thresholds, VerdictKind,
};
use tee_core::experts::{ood_score, ExpertStats};
use tee_core::numerics::argmax;
use tee_core::router::{boundary_loss, coverage_loss, RoutingDecision};

fn report(jsd: Option<f64>, comparable: bool) -> DisagreementReport {
    DisagreementReport {
        activated: vec![0, 1],
        per_expert_outputs: Vec::new(),
        stats: jsd.map(|v| DisagreementStats {
            mean_pairwise_jsd: v,
            predictive_variance: 0.0,
            weight_ratio: 1.0,
            comparable_confidence: comparable,
        }),
    }
}

fn decision(margin: f64, entropy: f64, affinity: f64) -> RoutingDecision {
    RoutingDecision {
        distances: vec![1.0, 2.0, 3.0],
        raw_affinities: vec![affinity, affinity / 2.0, 0.0],
        gate_logits: vec![0.0; 3],
        gate_weights: vec![1.0 / 3.0; 3],
        selected: vec![0],
        selected_weights: vec![1.0],
        routing_entropy: entropy,
        margin,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_signal_combination_gets_one_verdict(
        a in 0f64..10.0,
        b in 0f64..10.0,
        jsd in prop::option::of(0f64..std::f64::consts::LN_2),
        comparable in any::<bool>(),
        theta_ood in 0.1f64..8.0,
        theta_jsd in 0.01f64..0.6,
    ) {
        let th = Thresholds { theta_ood, theta_jsd };
        let v = coverage_verdict(&[a, b], &report(jsd, comparable), th, &ResponsePolicy::default()).unwrap();
        let expected = if a.min(b) > theta_ood {
            VerdictKind::CoverageGap
        } else if comparable && jsd.is_some_and(|j| j > theta_jsd) {
            VerdictKind::BoundaryViolation
        } else {
            VerdictKind::InCoverage
        };
        prop_assert_eq!(v.kind, expected);
        prop_assert!(!v.template.is_empty());
    }

    #[test]
    fn ood_score_ignores_dimension_order(
        rows in prop::collection::vec((-5f64..5.0, 0.1f64..4.0, -5f64..5.0), 1..10),
        seed in any::<u64>(),
    ) {
        let stats = ExpertStats {
            centroid: rows.iter().map(|r| r.0).collect(),
            variance: rows.iter().map(|r| r.1).collect(),
            sample_count: 1,
        };
        let e: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let permuted = ExpertStats {
            centroid: order.iter().map(|&i| stats.centroid[i]).collect(),
            variance: order.iter().map(|&i| stats.variance[i]).collect(),
            sample_count: 1,
        };
        let pe: Vec<f64> = order.iter().map(|&i| e[i]).collect();
        let a = ood_score(&stats, &e).unwrap();
        let b = ood_score(&permuted, &pe).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn ood_score_grows_along_a_ray(
        rows in prop::collection::vec((-5f64..5.0, 0.1f64..4.0, -1f64..1.0), 1..10),
        s in 0f64..5.0,
        extra in 0.01f64..5.0,
    ) {
        let stats = ExpertStats {
            centroid: rows.iter().map(|r| r.0).collect(),
            variance: rows.iter().map(|r| r.1).collect(),
            sample_count: 1,
        };
        prop_assume!(rows.iter().any(|r| r.2.abs() > 1e-3));
        let at = |t: f64| -> Vec<f64> { rows.iter().map(|r| r.0 + t * r.2).collect() };
        prop_assert!(ood_score(&stats, &at(s + extra)).unwrap() > ood_score(&stats, &at(s)).unwrap());
        prop_assert_eq!(ood_score(&stats, &at(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn ece_is_in_range_and_order_free(
        rows in prop::collection::vec((0f64..=1.0, any::<bool>()), 1..200),
        bins in 1usize..30,
    ) {
        let conf: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let correct: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let a = ece_from_confidences(&conf, &correct, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.ece));
        let rc: Vec<f64> = conf.iter().rev().copied().collect();
        let rk: Vec<bool> = correct.iter().rev().copied().collect();
        let b = ece_from_confidences(&rc, &rk, bins).unwrap();
        prop_assert!((a.ece - b.ece).abs() < 1e-12);
    }

    #[test]
    fn temperature_keeps_argmax(z in prop::collection::vec(-20f64..20.0, 2..8), t in 0.05f64..20.0) {
        let p = apply_temperature(&z, t).unwrap();
        prop_assert_eq!(argmax(&p), argmax(&z));
    }

    #[test]
    fn boundary_loss_is_continuous(m in 0f64..1.0, h in 0f64..1.1, dm in -1e-7f64..1e-7, dh in -1e-7f64..1e-7) {
        let a = boundary_loss(&decision(m, h, 0.5));
        let b = boundary_loss(&decision((m + dm).clamp(0.0, 1.0), (h + dh).max(0.0), 0.5));
        prop_assert!((a - b).abs() <= 1e-6);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn coverage_loss_is_continuous(aff in 0f64..1.0, h in 0f64..1.1, da in -1e-7f64..1e-7, tau in 0.05f64..0.9) {
        let a = coverage_loss(&decision(0.5, h, aff), tau, 3);
        let b = coverage_loss(&decision(0.5, h, (aff + da).clamp(0.0, 1.0)), tau, 3);
        prop_assert!((a - b).abs() <= 1e-6);
        prop_assert!(a >= 0.0);
    }
}

#[test]
fn coverage_loss_vanishes_above_tau() {
    assert_eq!(coverage_loss(&decision(0.5, 0.0, 0.9), 0.5, 3), 0.0);
    assert!(coverage_loss(&decision(0.5, 0.0, 0.1), 0.5, 3) > 0.0);
}

#[test]
fn boundary_loss_vanishes_at_full_margin() {
    assert_eq!(boundary_loss(&decision(1.0, 0.0, 0.5)), 0.0);
    let v = boundary_loss(&decision(0.0, 0.0, 0.5));
    assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn nonpositive_thresholds_name_their_key() {
    let th = Thresholds { theta_ood: 0.0, theta_jsd: 0.1 };
    let err = coverage_verdict(&[1.0, 1.0], &report(None, false), th, &ResponsePolicy::default()).unwrap_err();
    assert!(err.to_string().contains("detect.theta_ood"), "{err}");
}
