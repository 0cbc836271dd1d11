use proptest::prelude::*;
use tee_core::mhc::{is_doubly_stochastic, mixed_residual_step, sinkhorn_project, SinkhornConfig, SquareMatrix};
use tee_core::numerics::Mat64;

fn positive(dim: usize) -> impl Strategy<Value = SquareMatrix> {
    prop::collection::vec(0.01f64..10.0, dim * dim)
        .prop_map(move |v| SquareMatrix::new(Mat64::from_vec(dim, dim, v).unwrap()).unwrap())
}

fn sized_positive() -> impl Strategy<Value = SquareMatrix> {
    (1usize..=16).prop_flat_map(positive)
}

fn pair() -> impl Strategy<Value = (SquareMatrix, SquareMatrix)> {
    (1usize..=8).prop_flat_map(|d| (positive(d), positive(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_doubly_stochastic(m in sized_positive()) {
        let cfg = SinkhornConfig::default();
        let p = sinkhorn_project(&m, cfg).unwrap();
        prop_assert!(p.max_marginal_deviation() <= 1e-9);
        prop_assert!(is_doubly_stochastic(&p, 1e-9));
    }

    #[test]
    fn projection_is_idempotent(m in sized_positive()) {
        let cfg = SinkhornConfig::default();
        let p = sinkhorn_project(&m, cfg).unwrap();
        let q = sinkhorn_project(&p, cfg).unwrap();
        for r in 0..p.dim() {
            for c in 0..p.dim() {
                prop_assert!((p.get(r, c) - q.get(r, c)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn products_stay_doubly_stochastic((a, b) in pair()) {
        let cfg = SinkhornConfig::default();
        let pa = sinkhorn_project(&a, cfg).unwrap();
        let pb = sinkhorn_project(&b, cfg).unwrap();
        prop_assert!(is_doubly_stochastic(&pa.matmul(&pb).unwrap(), 1e-8));
    }

    #[test]
    fn residual_mix_conserves_stream_mean(m in positive(4), x in prop::collection::vec(-50f64..50.0, 4 * 3)) {
        let p = sinkhorn_project(&m, SinkhornConfig::default()).unwrap();
        let features = Mat64::from_vec(4, 3, x).unwrap();
        let out = mixed_residual_step(&features, &p).unwrap();
        for c in 0..3 {
            let before: f64 = (0..4).map(|r| features.get(r, c)).sum();
            let after: f64 = (0..4).map(|r| out.get(r, c)).sum();
            prop_assert!((before - after).abs() <= 1e-8);
        }
    }
}

#[test]
fn zero_entries_are_rejected() {
    let id = SquareMatrix::identity(5);
    assert!(sinkhorn_project(&id, SinkhornConfig::default()).is_err());
}

#[test]
fn uniform_matrix_projects_to_one_over_n() {
    let m = SquareMatrix::new(Mat64::from_vec(3, 3, vec![7.0; 9]).unwrap()).unwrap();
    let p = sinkhorn_project(&m, SinkhornConfig::default()).unwrap();
    for r in 0..3 {
        for c in 0..3 {
            assert!((p.get(r, c) - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
