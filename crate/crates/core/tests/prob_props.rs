use proptest::prelude::*;
use tee_core::detection::jensen_shannon;
use tee_core::numerics::{argmax, entropy, kl_divergence, softmax};

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, 1..12)
}

fn moderate_logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30f64..30.0, n)
}

fn simplex_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..10).prop_flat_map(|n| (moderate_logits(n), moderate_logits(n))).prop_map(|(a, b)| {
        (softmax(&a).unwrap(), softmax(&b).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn softmax_lands_on_simplex(z in logits()) {
        let p = softmax(&z).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(z in moderate_logits(6), c in -500f64..500.0) {
        let a = softmax(&z).unwrap();
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_survives_softmax_and_temperature(z in moderate_logits(7), t in 0.05f64..20.0) {
        let p = softmax(&z).unwrap();
        prop_assert_eq!(argmax(&p), argmax(&z));
        let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
        prop_assert_eq!(argmax(&softmax(&scaled).unwrap()), argmax(&z));
    }

    #[test]
    fn entropy_bounded_by_log_classes(z in moderate_logits(5)) {
        let h = entropy(&softmax(&z).unwrap()).unwrap();
        prop_assert!(h >= 0.0 && h <= 5f64.ln() + 1e-12);
    }

    #[test]
    fn entropy_maximal_only_for_equal_logits(c in -10f64..10.0, n in 2usize..9, bump in 0.01f64..5.0, at in 0usize..9) {
        let mut z = vec![c; n];
        prop_assert!((entropy(&softmax(&z).unwrap()).unwrap() - (n as f64).ln()).abs() < 1e-12);
        z[at % n] += bump;
        prop_assert!(entropy(&softmax(&z).unwrap()).unwrap() < (n as f64).ln() - 1e-9);
    }

    #[test]
    fn kl_nonnegative_and_zero_on_diagonal((p, q) in simplex_pair()) {
        prop_assert!(kl_divergence(&p, &q).unwrap().value() >= 0.0);
        prop_assert!(kl_divergence(&p, &p).unwrap().value().abs() < 1e-12);
    }

    #[test]
    fn jsd_symmetric_and_bounded((p, q) in simplex_pair()) {
        let a = jensen_shannon(&p, &q).unwrap();
        let b = jensen_shannon(&q, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&a));
        prop_assert!(jensen_shannon(&p, &p).unwrap().abs() < 1e-12);
    }
}

#[test]
fn jsd_of_disjoint_one_hots_is_ln2() {
    let v = jensen_shannon(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
}
