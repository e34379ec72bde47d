use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::linalg::sym_eigenvalues;
use crate::taskgen::{sample_quadratic_task, QuadraticConfig};

fn scalar_task(h: f64, sigma: f64) -> QuadraticTask {
    QuadraticTask::new(SmallMatrix::diag(&[h]), vec![0.0], sigma).unwrap()
}

/// Largest singular value of a 2×2 matrix from its Frobenius norm and determinant.
fn sv_max_2x2(m: &SmallMatrix) -> f64 {
    let f: f64 = m.data().iter().map(|v| v * v).sum();
    let det = m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0);
    ((f + (f * f - 4.0 * det * det).sqrt()) / 2.0).sqrt()
}

#[test]
fn single_step_scalar_matrix() {
    let spec = MultiStepSpec::new(vec![1.0], 0.3).unwrap();
    let a = build_system_matrix(&spec, &[SmallMatrix::diag(&[2.0])]).unwrap();
    assert_eq!(a.data(), &[1.0 - 0.6]);
}

#[test]
fn two_step_matrix_by_substitution() {
    let spec = MultiStepSpec::new(vec![0.5, 0.5], 0.1).unwrap();
    let r = SmallMatrix::diag(&[2.0]);
    let a = build_system_matrix(&spec, &[r.clone(), r]).unwrap();
    let expect = [0.9, -0.1, 1.0, 0.0];
    for (x, y) in a.data().iter().zip(expect) {
        assert!((x - y).abs() < 1e-15);
    }
    assert_eq!(reduced_matrix(&spec, 2.0), a);
    let lam = lambda_at(&spec, 2.0).unwrap();
    assert!((lam - sv_max_2x2(&a)).abs() < 1e-12);
    assert!((lam - 1.3470).abs() < 1e-4, "{lam}");
}

#[test]
fn rejects_mismatched_rates() {
    let spec = MultiStepSpec::uniform(2, 0.1).unwrap();
    assert!(build_system_matrix(&spec, &[SmallMatrix::identity(2)]).is_err());
    assert!(build_system_matrix(&spec, &[SmallMatrix::identity(2), SmallMatrix::identity(3)]).is_err());
    assert!(MultiStepSpec::new(vec![1.5], 0.1).is_err());
    assert!(MultiStepSpec::new(vec![], 0.1).is_err());
    assert!(MultiStepSpec::new(vec![1.0], 0.0).is_err());
    assert!(lambda_max_bound(&spec, &[]).is_err());
}

#[test]
fn diagonal_hessian_splits_into_scalar_systems() {
    let spec = MultiStepSpec::uniform(3, 0.05).unwrap();
    let h = SmallMatrix::diag(&[1.0, 10.0]);
    let a = build_system_matrix(&spec, &[h.clone(), h.clone(), h]).unwrap();
    let mut block = sym_eigenvalues(&a.gram()).unwrap();
    let mut parts: Vec<f64> = [1.0, 10.0]
        .iter()
        .flat_map(|&tau| sym_eigenvalues(&reduced_matrix(&spec, tau).gram()).unwrap())
        .collect();
    block.sort_by(f64::total_cmp);
    parts.sort_by(f64::total_cmp);
    for (x, y) in block.iter().zip(&parts) {
        assert!((x - y).abs() < 1e-10, "{block:?} vs {parts:?}");
    }
}

#[test]
fn scalar_lambda_max_is_endpoint() {
    let spec = MultiStepSpec::new(vec![1.0], 0.15).unwrap();
    let (mu, l) = (1.0, 10.0);
    let lam = lambda_max(&spec, mu, l).unwrap();
    let expect = (1.0f64 - 0.15 * mu).abs().max((1.0f64 - 0.15 * l).abs());
    assert!((lam - expect).abs() < 1e-12);
}

#[test]
fn grid_holds_endpoints() {
    let g = tau_grid(1.0, 10.0, TAU_GRID_POINTS).unwrap();
    assert_eq!(g.len(), 64);
    assert_eq!((g[0], g[63]), (1.0, 10.0));
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(tau_grid(2.0, 2.0, 64).unwrap(), vec![2.0]);
}

#[test]
fn small_alpha_limit_for_multiple_steps() {
    // as α → 0 the reduced matrix tends to e_1 e_1ᵀ + e_2 e_1ᵀ + the lower
    // shift, whose first column has norm √2
    for s in 2..=4 {
        let spec = MultiStepSpec::uniform(s, 1e-6).unwrap();
        let lam = lambda_max(&spec, 1.0, 10.0).unwrap();
        assert!((lam - 2f64.sqrt()).abs() < 1e-4, "S={s}: {lam}");
        assert!(spectral_radius_at(&spec, 1.0) < 1.0);
    }
}

#[test]
fn scalar_recursion_matches_bound_exactly() {
    let task = scalar_task(1.0, 0.0);
    let spec = MultiStepSpec::new(vec![1.0], 0.5).unwrap();
    let tr = run_multistep_recursion(&task, &spec, &[1.0], 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(tr.gaps[1], 0.125);
    let rep = verify_theorem1(&task, &spec, &[1.0], 30, 3, 0, 0.0).unwrap();
    assert!(rep.applicable && rep.satisfied);
    assert_eq!(rep.lambda_max, 0.5);
    for r in &rep.rows {
        assert!((r.empirical - r.bound).abs() <= 1e-12 * r.bound.max(1e-300), "{r:?}");
    }
}

#[test]
fn noise_free_contraction_is_monotone() {
    let cfg = QuadraticConfig { dim: 3, mu: 1.0, l: 10.0, sigma: 0.0 };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = sample_quadratic_task(&cfg, &mut rng).unwrap();
        let spec = MultiStepSpec::new(vec![1.0], 0.1).unwrap();
        assert!(lambda_max(&spec, task.mu, task.l).unwrap() < 1.0);
        let tr = run_multistep_recursion(&task, &spec, &[1.0, -1.0, 0.5], 200, &mut rng).unwrap();
        assert!(tr.gaps.windows(2).all(|w| w[1] <= w[0]), "seed {seed}");
        assert!(*tr.gaps.last().unwrap() < 1e-12);
    }
}

#[test]
fn leading_weight_only_is_sgd() {
    let cfg = QuadraticConfig { dim: 3, mu: 1.0, l: 5.0, sigma: 0.2 };
    let task = sample_quadratic_task(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let spec = MultiStepSpec::new(vec![1.0, 0.0, 0.0], 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tr = run_multistep_recursion(&task, &spec, &[0.3, 0.2, -0.1], 100, &mut rng).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut theta = vec![0.3, 0.2, -0.1];
    for t in 1..=100 {
        let g = task.noisy_gradient(&theta, &mut rng);
        for (a, b) in theta.iter_mut().zip(g) {
            *a -= 0.1 * b;
        }
        for (a, b) in theta.iter().zip(&tr.thetas[t]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn large_alpha_is_inapplicable() {
    let task = scalar_task(1.0, 0.1);
    let spec = MultiStepSpec::new(vec![1.0], 1.0).unwrap();
    let lam_spec = MultiStepSpec::new(vec![1.0], 0.99).unwrap();
    assert!(verify_theorem1(&task, &lam_spec, &[1.0], 5, 2, 0, 0.05).unwrap().applicable);
    let spec = MultiStepSpec { alpha: 2.5, ..spec };
    let rep = verify_theorem1(&task, &spec, &[1.0], 5, 2, 0, 0.05).unwrap();
    assert!(!rep.applicable && rep.rows.is_empty());
    assert!(rep.to_csv("h").contains("inapplicable"));
}

#[test]
fn divergence_reports_step() {
    let task = scalar_task(1.0, 0.0);
    let spec = MultiStepSpec::new(vec![1.0], 1.0).unwrap();
    let spec = MultiStepSpec { alpha: 100.0, ..spec };
    let err = run_multistep_recursion(&task, &spec, &[1.0], 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, EmoError::Diverged(7)), "{err:?}");
}

#[test]
fn noise_floor_holds_for_single_step() {
    let task = QuadraticTask::new(SmallMatrix::diag(&[1.0, 10.0]), vec![0.0, 0.0], 0.1).unwrap();
    let spec = MultiStepSpec::new(vec![1.0], 0.02).unwrap();
    let rep = verify_theorem1(&task, &spec, &[1.0, 1.0], 1000, 100, 3, 0.05).unwrap();
    assert!(rep.satisfied);
    let lam = rep.lambda_max;
    let floor = 0.5 * task.l * spec.alpha.powi(2) * 2.0 * 0.01 / (1.0 - lam * lam);
    let tail = rep.rows[800..].iter().map(|r| r.empirical).sum::<f64>() / 200.0;
    assert!(tail <= floor * 1.05, "{tail} vs {floor}");
}

#[test]
fn pipeline_matches_recursion() {
    for cfg_seed in 0..10u64 {
        let mut cfg_rng = ChaCha8Rng::seed_from_u64(100 + cfg_seed);
        let s = cfg_rng.random_range(1..=5);
        let alpha = cfg_rng.random_range(0.005..0.05);
        let cfg = QuadraticConfig { dim: 3, mu: 1.0, l: 10.0, sigma: 0.1 };
        let task = sample_quadratic_task(&cfg, &mut cfg_rng).unwrap();
        let theta1: Vec<f64> = (0..3).map(|_| cfg_rng.random_range(-2.0..2.0)).collect();
        let spec = MultiStepSpec::uniform(s, alpha).unwrap();
        let a = run_multistep_recursion(&task, &spec, &theta1, 200, &mut ChaCha8Rng::seed_from_u64(cfg_seed)).unwrap();
        let b = run_emo_pipeline(&task, s, alpha, &theta1, 200, &mut ChaCha8Rng::seed_from_u64(cfg_seed)).unwrap();
        for (x, y) in a.thetas.iter().zip(&b.thetas) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-12, "S={s}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn block_norm_within_reduced_bound(
        s in 1usize..5,
        alpha in 0.001f64..0.3,
        eigs in prop::collection::vec(1.0f64..10.0, 1..4),
        seed in any::<u64>(),
        raw_w in prop::collection::vec(0.0f64..1.0, 5),
    ) {
        let spec = MultiStepSpec::new(raw_w[..s].to_vec(), alpha).unwrap();
        let cfg = QuadraticConfig { dim: eigs.len(), mu: 1.0, l: 10.0, sigma: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = sample_quadratic_task(&cfg, &mut rng).unwrap().h;
        let rates = vec![h.clone(); s];
        let a = build_system_matrix(&spec, &rates).unwrap();
        let task = QuadraticTask::new(h, vec![0.0; eigs.len()], 0.0).unwrap();
        let exact = task.eigenvalues.iter().map(|&t| lambda_at(&spec, t).unwrap()).fold(0.0, f64::max);
        let norm = spectral_norm(&a).unwrap();
        prop_assert!(norm <= exact * (1.0 + 1e-9) + 1e-12, "{} > {}", norm, exact);
        prop_assert!(norm <= lambda_max(&spec, 1.0, 10.0).unwrap() * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn multi_step_lambda_never_below_one(s in 2usize..6, alpha in 1e-6f64..1.0, tau in 0.1f64..20.0) {
        let spec = MultiStepSpec::uniform(s, alpha).unwrap();
        prop_assert!(lambda_at(&spec, tau).unwrap() >= 1.0 - 1e-12);
    }
}
