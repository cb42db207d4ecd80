mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use switchstab::designer::{
    beta_eval, moment_exponent_ladder, solve_threshold, BetaFamily, BetaParams,
};
use switchstab::rng::{stream, StreamRole};
use switchstab::spectral::{eta, kappa, lambda_tau, tau_bar, zeta};
use switchstab::{GeneratorMatrix, LambdaVariant};

fn generator_strategy() -> impl Strategy<Value = GeneratorMatrix> {
    (2usize..=4, any::<u64>())
        .prop_map(|(n, seed)| common::random_generator(&mut ChaCha8Rng::seed_from_u64(seed), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_vector_is_invariant(g in generator_strategy()) {
        let pi = g.stationary_distribution().unwrap();
        prop_assert!(pi.residual(&g) <= 1e-10);
        prop_assert!(pi.as_slice().iter().all(|&p| p > 0.0));
        prop_assert!((pi.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn skeleton_semigroup(g in generator_strategy(), t1 in 0.01f64..2.0, t2 in 0.01f64..2.0) {
        let p12 = g.skeleton_transition_matrix(t1 + t2).unwrap();
        let prod = g.skeleton_transition_matrix(t1).unwrap() * g.skeleton_transition_matrix(t2).unwrap();
        prop_assert!((p12 - prod).abs().max() <= 1e-9);
    }

    #[test]
    fn eta_is_concave_and_positive_below_kappa(g in generator_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = common::random_mixed_weight(&mut rng, &g);
        let k = kappa(&g, &mu).unwrap();
        prop_assert!(k.is_finite());
        let ls: Vec<f64> = (1..=100).map(|i| 1.5 * k * i as f64 / 100.0).collect();
        let es: Vec<f64> = ls.iter().map(|&l| eta(&g, &mu, l).unwrap()).collect();
        for w in es.windows(3) {
            prop_assert!(w[1] >= 0.5 * (w[0] + w[2]) - 1e-9 * (1.0 + w[1].abs()));
        }
        for (l, e) in ls.iter().zip(&es) {
            if *l < 0.99 * k {
                prop_assert!(*e > 0.0);
            } else if *l > 1.01 * k {
                prop_assert!(*e < 0.0);
            }
        }
        prop_assert!(eta(&g, &mu, 0.9 * k).unwrap() > 0.0);
        prop_assert!(eta(&g, &mu, 1.1 * k).unwrap() < 0.0);
    }

    #[test]
    fn nonnegative_weight_has_infinite_kappa(g in generator_strategy(), w in prop::collection::vec(0.0f64..3.0, 4)) {
        let mu: Vec<f64> = w.iter().take(g.n_states()).map(|v| v + 0.01).collect();
        prop_assert!(kappa(&g, &mu).unwrap().is_infinite());
    }

    #[test]
    fn lambda_is_increasing(l in 0.1f64..5.0, a in 0.1f64..10.0, m in 0.1f64..30.0, eps in 0.01f64..1.0, t in 0.0f64..0.1) {
        for v in [LambdaVariant::FormulaA, LambdaVariant::FormulaB] {
            let lo = lambda_tau(l, t, a, m, eps, v);
            let hi = lambda_tau(l, t + 1e-3, a, m, eps, v);
            prop_assert!(lo >= 0.0 && hi > lo);
        }
        prop_assert_eq!(
            lambda_tau(l, t, a, m, 1.0, LambdaVariant::FormulaA),
            lambda_tau(l, t, a, m, 1.0, LambdaVariant::FormulaB)
        );
    }

    #[test]
    fn zeta_vanishes_at_tau_bar(g in generator_strategy(), seed in any::<u64>(), frac in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = common::random_mixed_weight(&mut rng, &g);
        let alpha: Vec<f64> = mu.iter().map(|m| m.max(0.0) + 1.0).collect();
        let h: Vec<f64> = alpha.iter().zip(&mu).map(|(a, m)| a - m).collect();
        let k = kappa(&g, &mu).unwrap();
        let l = frac * k;
        for v in [LambdaVariant::FormulaA, LambdaVariant::FormulaB] {
            let tb = tau_bar(&g, &alpha, &h, l, v).unwrap();
            let z = zeta(&g, &alpha, &h, l, tb, v).unwrap();
            prop_assert!(z.zeta.abs() <= 1e-9 * (1.0 + z.eta_boosted));
            let mut prev = f64::INFINITY;
            for i in 0..100 {
                let zi = zeta(&g, &alpha, &h, l, tb * i as f64 / 99.0, v).unwrap().zeta;
                prop_assert!(zi < prev);
                prev = zi;
            }
        }
    }

    #[test]
    fn threshold_round_trip(
        family in prop::sample::select(BetaFamily::ALL.to_vec()),
        y in 1e-9f64..1.0,
        k in 0.1f64..5.0,
        a in 0.1f64..10.0,
        s in 0.01f64..3.0,
        x0 in 0.1f64..4.0,
        scale in 0.1f64..10.0,
    ) {
        let params = BetaParams { k: k * scale, alpha_max: a * scale, upsilon: s, sigma: s, x0_norm_sq: x0 };
        let target = beta_eval(family, y, &params);
        let root = solve_threshold(family, target, &params).unwrap();
        prop_assert!((root - y).abs() / y <= 1e-10, "{family:?} {root} {y}");
    }

    #[test]
    fn ladder_is_continuous_and_monotone(zeta_v in 1.0f64..10.0, frac in 0.05f64..0.95, rho in 2.5f64..6.0, extra in 0.5f64..4.0) {
        let sigma = frac * zeta_v;
        let p = rho + extra;
        let at = |q: f64| moment_exponent_ladder(zeta_v, sigma, p, rho, q).unwrap().rate;
        let left = at(rho - 1e-9);
        let right = at(rho + 1e-9);
        prop_assert!((left - right).abs() < 1e-6);
        let mut prev = at(rho);
        for i in 1..20 {
            let q = rho + (p - rho) * i as f64 / 20.0;
            let r = at(q);
            prop_assert!(r >= prev);
            prev = r;
        }
    }
}

#[test]
fn stationary_matches_long_run_transition_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let g = common::random_generator(&mut rng, 3);
        let pi = g.stationary_distribution().unwrap();
        let p = g.skeleton_transition_matrix(1e3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[(i, j)] - pi.as_slice()[j]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn skeleton_frequencies_match_transition_matrix() {
    let g = GeneratorMatrix::new(&[vec![-10.0, 10.0], vec![20.0, -20.0]]).unwrap();
    let tau = 0.05;
    let steps = 100_000;
    let path = g
        .sample_path(
            0,
            tau * (steps as f64 + 1.0),
            &mut stream(5, 0, StreamRole::Chain),
        )
        .unwrap();
    let mut counts = DMatrix::<f64>::zeros(2, 2);
    let mut prev = path.mode_at(0.0).unwrap();
    for k in 1..=steps {
        let cur = path.mode_at(k as f64 * tau).unwrap();
        counts[(prev, cur)] += 1.0;
        prev = cur;
    }
    let p = g.skeleton_transition_matrix(tau).unwrap();
    for i in 0..2 {
        let row: f64 = counts.row(i).sum();
        for j in 0..2 {
            assert!((counts[(i, j)] / row - p[(i, j)]).abs() <= 0.01);
        }
    }
}

#[test]
fn occupation_converges_for_fixed_seeds() {
    let g = GeneratorMatrix::new(&[vec![-10.0, 10.0], vec![20.0, -20.0]]).unwrap();
    let pi = g.stationary_distribution().unwrap();
    for seed in 0..10 {
        let path = g
            .sample_path(0, 1e3, &mut stream(seed, 0, StreamRole::Chain))
            .unwrap();
        let occ = path.occupation_fractions(2);
        for (o, p) in occ.iter().zip(pi.as_slice()) {
            assert!((o - p).abs() <= 0.03);
        }
    }
}
