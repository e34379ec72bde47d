use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::taskgen::{sample_quadratic_task, QuadraticConfig};

fn v(x: &[f64]) -> GradSet {
    single("p", x.to_vec())
}

fn data(g: &GradSet) -> Vec<f64> {
    g.flatten()
}

#[test]
fn mean_examples() {
    assert_eq!(data(&aggr_mean(&v(&[2.0]), &[v(&[4.0])]).unwrap()), vec![3.0]);
    assert_eq!(data(&aggr_mean(&v(&[2.0]), &[]).unwrap()), vec![2.0]);
    assert_eq!(data(&aggr_mean(&v(&[1.0, 1.0]), &[v(&[3.0, -1.0]), v(&[5.0, 3.0])]).unwrap()), vec![3.0, 1.0]);
}

#[test]
fn sum_examples() {
    assert_eq!(data(&aggr_sum(&v(&[2.0]), &[v(&[4.0]), v(&[6.0])]).unwrap()), vec![7.0]);
    assert_eq!(data(&aggr_sum(&v(&[2.0]), &[]).unwrap()), vec![2.0]);
    assert_eq!(data(&aggr_sum(&v(&[0.0]), &[v(&[-3.25])]).unwrap()), vec![-3.25]);
}

#[test]
fn shape_mismatch_rejected() {
    assert!(aggr_mean(&v(&[1.0]), &[v(&[1.0, 2.0])]).is_err());
    assert!(aggr_sum(&v(&[1.0]), &[v(&[1.0, 2.0])]).is_err());
}

#[test]
fn emo_step_examples() {
    // Aggr result [3] from mean of [2] and [4]
    let out = emo_step(&v(&[5.0]), &v(&[2.0]), &[v(&[4.0])], 0.1, Aggregation::Mean).unwrap();
    assert!((data(&out)[0] - 4.7).abs() < 1e-15);
    let sgd = sgd_step(&v(&[5.0, 1.0]), &v(&[2.0, -1.0]), 0.1).unwrap();
    let emo = emo_step(&v(&[5.0, 1.0]), &v(&[2.0, -1.0]), &[], 0.1, Aggregation::Mean).unwrap();
    assert_eq!(sgd, emo);
}

#[test]
fn emo_step_reports_non_finite_layer() {
    let err = emo_step(&v(&[1.0]), &v(&[f64::NAN]), &[], 0.1, Aggregation::Sum).unwrap_err();
    assert!(err.to_string().contains("`p`"), "{err}");
    let err = emo_step(&v(&[1.0]), &v(&[1.0]), &[v(&[f64::INFINITY])], 0.1, Aggregation::Mean).unwrap_err();
    assert!(err.to_string().contains("`p`"), "{err}");
}

#[test]
fn emo_on_quadratic_matches_hand_unrolled_arithmetic() {
    let cfg = QuadraticConfig { dim: 2, mu: 1.0, l: 10.0, sigma: 0.0 };
    let task = sample_quadratic_task(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let h = task.h.data().to_vec();
    let ts = task.theta_star.clone();
    let mems = [[0.5, -0.25], [1.0, 2.0], [-0.75, 0.125]];
    let alpha = 0.05;
    let mut theta = vec![0.3, -0.4];
    let mut p = v(&theta);
    for _ in 0..4 {
        // g = H (θ − θ*)
        let d0 = theta[0] - ts[0];
        let d1 = theta[1] - ts[1];
        let g = [h[0] * d0 + h[1] * d1, h[2] * d0 + h[3] * d1];
        let agg = [
            (g[0] + mems[0][0] + mems[1][0] + mems[2][0]) / 4.0,
            (g[1] + mems[0][1] + mems[1][1] + mems[2][1]) / 4.0,
        ];
        theta = vec![theta[0] - alpha * agg[0], theta[1] - alpha * agg[1]];
        let gs = v(&task.gradient(&data(&p)));
        let vs: Vec<GradSet> = mems.iter().map(|m| v(m)).collect();
        p = emo_step(&p, &gs, &vs, alpha, Aggregation::Mean).unwrap();
        for (a, b) in data(&p).iter().zip(&theta) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn sgd_and_momentum_first_steps() {
    assert_eq!(data(&sgd_step(&v(&[1.0]), &v(&[1.0]), 0.1).unwrap()), vec![0.9]);
    let (th, st) = momentum_step(&v(&[1.0]), &v(&[2.0]), &MomentumState::default(), 0.1, 0.9).unwrap();
    assert_eq!(th, sgd_step(&v(&[1.0]), &v(&[2.0]), 0.1).unwrap());
    assert_eq!(st.buf.unwrap(), v(&[2.0]));
    let (_, st2) = momentum_step(&th, &v(&[1.0]), &MomentumState { buf: Some(v(&[2.0])) }, 0.1, 0.9).unwrap();
    assert!((data(&st2.buf.unwrap())[0] - 2.8).abs() < 1e-15);
}

#[test]
fn adam_first_step_closed_form() {
    for c in [3.0, -0.02, 1e-3] {
        let (alpha, eps) = (0.01, 1e-8);
        let (th, st) = adam_step(&v(&[1.0]), &v(&[c]), &AdamState::default(), alpha, 0.9, 0.999, eps).unwrap();
        // bias-corrected m̂ = c, v̂ = c², so the step is α c / (|c| + ε)
        let want = 1.0 - alpha * c / (c.abs() + eps);
        assert!((data(&th)[0] - want).abs() < 1e-14, "{c}");
        assert_eq!(st.t, 1);
    }
}

#[test]
fn non_finite_gradient_rejected_by_baselines() {
    assert!(sgd_step(&v(&[1.0]), &v(&[f64::NAN]), 0.1).is_err());
    assert!(momentum_step(&v(&[1.0]), &v(&[f64::NAN]), &MomentumState::default(), 0.1, 0.9).is_err());
    assert!(adam_step(&v(&[1.0]), &v(&[f64::NAN]), &AdamState::default(), 0.1, 0.9, 0.999, 1e-8).is_err());
}

#[test]
fn clipping_bounds_norm() {
    let c = clip_global_norm(&v(&[3.0, 4.0]), 1.0);
    assert!((data(&c)[0] - 0.6).abs() < 1e-15);
    assert_eq!(clip_global_norm(&v(&[0.3, 0.4]), 1.0), v(&[0.3, 0.4]));
}

fn gradset() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 3)
}

proptest! {
    #[test]
    fn empty_memory_reduces_to_sgd(theta in gradset(), g in gradset(), alpha in 1e-4f64..1.0) {
        let agg = AttentionAggregator::new(vec![("p".into(), vec![3])], 4, 4).unwrap();
        let ap = agg.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let sgd = sgd_step(&v(&theta), &v(&g), alpha).unwrap();
        for how in [Aggregation::Mean, Aggregation::Sum, Aggregation::Attention(&agg, &ap)] {
            prop_assert_eq!(&emo_step(&v(&theta), &v(&g), &[], alpha, how).unwrap(), &sgd);
        }
    }

    #[test]
    fn mean_and_sum_ignore_retrieval_order(g in gradset(), mems in prop::collection::vec(gradset(), 1..6), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let tagged: Vec<(usize, GradSet)> = mems.iter().enumerate().map(|(i, m)| (i * 3, v(m))).collect();
        let mut shuffled = tagged.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = order_by_slot(tagged);
        let b = order_by_slot(shuffled);
        prop_assert_eq!(aggr_mean(&v(&g), &a).unwrap(), aggr_mean(&v(&g), &b).unwrap());
        prop_assert_eq!(aggr_sum(&v(&g), &a).unwrap(), aggr_sum(&v(&g), &b).unwrap());
    }

    #[test]
    fn mean_is_linear(g in gradset(), mems in prop::collection::vec(gradset(), 0..5), c in -5.0f64..5.0) {
        let vs: Vec<GradSet> = mems.iter().map(|m| v(m)).collect();
        let scaled: Vec<GradSet> = vs.iter().map(|m| m.scale(c)).collect();
        let lhs = aggr_mean(&v(&g).scale(c), &scaled).unwrap();
        let rhs = aggr_mean(&v(&g), &vs).unwrap().scale(c);
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
    }
}
