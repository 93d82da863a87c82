//! Property tests for the structural invariants.

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use flpre::{make_basis, penalty_matrix, project_covariate, DesignMatrix, FunctionalSample};

fn uniform_grid(g: usize) -> Vec<f64> {
    (0..g).map(|i| i as f64 / (g - 1) as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_of_unity_everywhere(
        t in 0.0..=1.0f64,
        k in 0usize..=12,
        p in 1usize..=4,
    ) {
        let q = 1.min(p);
        let basis = make_basis(k, p, q).unwrap();
        let v = basis.eval(t).unwrap();
        prop_assert!((v.sum() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|x| *x >= 0.0));
        prop_assert!(v.iter().filter(|x| x.abs() > 0.0).count() <= p + 1);
    }

    #[test]
    fn derivatives_sum_to_zero(t in 0.0..=1.0f64, k in 0usize..=10) {
        let basis = make_basis(k, 3, 2).unwrap();
        for order in 1..=2 {
            let d = basis.eval_deriv(t, order).unwrap();
            let scale = d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(d.sum().abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn projection_is_linear(
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        freq in 0.5..6.0f64,
    ) {
        let basis = make_basis(5, 3, 2).unwrap();
        let grid = uniform_grid(80);
        let x: Vec<f64> = grid.iter().map(|t| (freq * t).sin()).collect();
        let z: Vec<f64> = grid.iter().map(|t| t * t - 0.3).collect();
        let combo: Vec<f64> = x.iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
        let px = project_covariate(
            &FunctionalSample::new(grid.clone(), x, 1.0).unwrap(), &basis).unwrap();
        let pz = project_covariate(
            &FunctionalSample::new(grid.clone(), z, 1.0).unwrap(), &basis).unwrap();
        let pc = project_covariate(
            &FunctionalSample::new(grid, combo, 1.0).unwrap(), &basis).unwrap();
        for j in 0..basis.dim() {
            let expect = a * px[j] + b * pz[j];
            prop_assert!((pc[j] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn loss_splits_into_fit_and_penalty(
        seed in 0u64..1000,
        lambda in 0.0..10.0f64,
    ) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let basis = make_basis(4, 3, 2).unwrap();
        let dim = basis.dim();
        let rows = Array2::from_shape_fn((25, dim), |_| rng.random::<f64>() - 0.5);
        let design = DesignMatrix::from_parts(rows, penalty_matrix(&basis), basis).unwrap();
        let y = Array1::from_shape_fn(25, |_| (rng.random::<f64>() * 2.0 - 1.0).exp());
        let theta = Array1::from_shape_fn(dim, |_| rng.random::<f64>() - 0.5);
        let full = flpre::lpre_loss(&design, y.view(), theta.view(), lambda).unwrap();
        let bare = flpre::lpre_loss(&design, y.view(), theta.view(), 0.0).unwrap();
        let pen = flpre::lpre::penalty_value(&design, theta.view(), lambda);
        prop_assert!(full >= 0.0 && bare >= 0.0);
        prop_assert!((full - bare - pen).abs() < 1e-12 * (1.0 + full.abs()));
    }

    #[test]
    fn schemes_are_normalized_and_mixing_bounds_weights(
        seed in 0u64..1000,
        alpha in 0.01..0.9f64,
    ) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let basis = make_basis(2, 2, 1).unwrap();
        let dim = basis.dim();
        let n = 40;
        let rows = Array2::from_shape_fn((n, dim), |_| rng.random::<f64>() - 0.5);
        let design = DesignMatrix::from_parts(rows, penalty_matrix(&basis), basis).unwrap();
        let y = Array1::from_shape_fn(n, |_| (rng.random::<f64>() * 2.0 - 1.0).exp());
        let theta = Array1::zeros(dim);
        let scheme = flpre::probs_flopt(&design, y.view(), theta.view()).unwrap();
        let total: f64 = scheme.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(scheme.probs().iter().all(|p| *p >= 0.0));
        let mixed = scheme.with_mixing(alpha).unwrap();
        let total: f64 = mixed.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        // with mixing, max_i 1/(n pi_i) <= 1/alpha
        let max_inv = mixed
            .probs()
            .iter()
            .map(|p| 1.0 / (n as f64 * p))
            .fold(0.0f64, f64::max);
        prop_assert!(max_inv <= 1.0 / alpha + 1e-9);
    }

    #[test]
    fn draws_have_exact_total_and_respect_support(
        seed in 0u64..1000,
        r in 1usize..400,
    ) {
        let probs = vec![0.5, 0.0, 0.25, 0.25];
        let scheme =
            flpre::SubsampleScheme::from_probs(flpre::SchemeKind::Uniform, probs.clone())
                .unwrap();
        let draw = flpre::draw_seeded(&scheme, r, seed).unwrap();
        let total: usize = draw.counts().iter().map(|&(_, c)| c as usize).sum();
        prop_assert_eq!(total, r);
        // zero-probability points stay undrawn
        prop_assert!(draw.counts().iter().all(|&(i, _)| probs[i] > 0.0));
    }

    #[test]
    fn mppe_is_symmetric(
        y in prop::collection::vec(0.1..50.0f64, 1..20),
        shift in 0.1..5.0f64,
    ) {
        let pred: Vec<f64> = y.iter().map(|v| v * shift).collect();
        let (_, a) = flpre::mape_mppe(&y, &pred).unwrap();
        let (_, b) = flpre::mape_mppe(&pred, &y).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }
}
