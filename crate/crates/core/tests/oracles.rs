//! Property tests of the library against the test-side reference implementations.

mod common;

use common::{eigen_class, rel, rel_v, textbook_kf, Problem};
use kfls_core::random::{gaussian_matrix, gaussian_vector, random_nonsingular, random_spd};
use kfls_core::verify::random_kfls_instance;
use kfls_core::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_minimizes_oracle_cost(seed in any::<u64>(), n in 1usize..=3, p in 1usize..=2, steps in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_kfls_instance(&mut rng, n, p, steps).unwrap();
        let oracle = Problem::from_history(&inst.history);
        let (anchors, h) = oracle.chained_minimizers(steps - 1);
        let last = &inst.states[steps];
        prop_assert!(rel_v(&last.x_hat, &anchors[steps]) < 1e-8);
        prop_assert!(rel(&last.p.matrix().clone().try_inverse().unwrap(), &h) < 1e-8);

        // perturbing the minimizer never lowers the cost
        let j_min = oracle.cost(steps - 1, &last.x_hat, &anchors[..steps]);
        for _ in 0..4 {
            let d = gaussian_vector(&mut rng, n) * 0.1;
            prop_assert!(oracle.cost(steps - 1, &(&last.x_hat + d), &anchors[..steps]) >= j_min - 1e-9 * j_min.abs().max(1.0));
        }
    }

    #[test]
    fn kalman_chain_matches_longhand_and_stays_pd(seed in any::<u64>(), n in 1usize..=4, p in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_nonsingular(&mut rng, n, 0.7, 1.3);
        let b = gaussian_matrix(&mut rng, n, 1);
        let c = gaussian_matrix(&mut rng, p, n);
        let model = LtvModel::constant(a.clone(), b.clone(), c.clone()).unwrap();
        let noise = NoiseSpec::new(random_spd(&mut rng, n, 0.01, 0.5), random_spd(&mut rng, p, 0.1, 1.0)).unwrap();
        let mut state = FilterState::new(0, gaussian_vector(&mut rng, n), random_spd(&mut rng, n, 0.5, 2.0)).unwrap();
        let mut x_ref = state.x_hat.clone();
        let mut p_ref = state.p.matrix().clone();
        for _ in 0..30 {
            let u = gaussian_vector(&mut rng, 1);
            let y = gaussian_vector(&mut rng, p);
            state = kf_one_step(&state, &model, &noise, &u, &y).unwrap();
            (x_ref, p_ref) = textbook_kf(&a, &b, &c, noise.sigma.matrix(), noise.gamma.matrix(), &x_ref, &p_ref, &u, &y);
            prop_assert_eq!(eigen_class(state.p.matrix(), 1e-12, 0.0), 0);
            prop_assert!(rel(state.p.matrix(), &state.p.matrix().transpose()) == 0.0);
        }
        prop_assert!(rel_v(&state.x_hat, &x_ref) < 1e-8);
        prop_assert!(rel(state.p.matrix(), &p_ref) < 1e-8);
    }

    #[test]
    fn noise_and_forgetting_round_trip(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_spd(&mut rng, n, 0.1, 10.0);
        let a = random_nonsingular(&mut rng, n, 0.5, 2.0);
        let sigma = random_spd(&mut rng, n, 0.0, 3.0);
        let f = f_from_sigma(&p, &sigma, &a).unwrap();
        // oracle: F = P⁻¹ − (A⁻¹ΣA⁻ᵀ + P)⁻¹
        let a_inv = a.clone().try_inverse().unwrap();
        let f_ref = p.matrix().clone().try_inverse().unwrap()
            - (&a_inv * sigma.matrix() * a_inv.transpose() + p.matrix()).try_inverse().unwrap();
        prop_assert!(rel(&f, &f_ref) < 1e-9);
        prop_assert_ne!(eigen_class(&f, 1e-9, 1.0), 2);
        let back = sigma_from_f(&p, &f, &a).unwrap();
        prop_assert!(rel(back.matrix(), sigma.matrix()) < 1e-8);
    }

    #[test]
    fn robust_vff_rate_stays_in_bounds(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = RobustVffConfig::standard(2);
        let mut state = RobustVffState::new(cfg).unwrap();
        for _ in 0..200 {
            let e = gaussian_vector(&mut rng, 1)[0] * scale;
            let q = gaussian_vector(&mut rng, 1)[0].abs() * scale;
            let (next, lambda) = state.update(e, q).unwrap();
            prop_assert!(lambda >= cfg.lambda_min && lambda <= cfg.lambda_max);
            state = next;
        }
    }

    #[test]
    fn directional_forgetting_only_acts_along_excited_directions(seed in any::<u64>(), lambda in 0.3f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let p = random_spd(&mut rng, n, 0.2, 2.0);
        let c = gaussian_matrix(&mut rng, 1, n);
        let x = gaussian_vector(&mut rng, n);
        let e = DVector::zeros(1);
        let input = ForgettingInput { step: 0, p: &p, x_hat: &x, c: &c, innovation: &e, lambda: None };
        let sigma = ForgettingStrategy::Directional { lambda }.forgetting_sigma(&input).unwrap();
        // Σ = (1−λ)/λ · Cᵀ(C P⁻¹ Cᵀ)⁻¹ C annihilates the null space of C
        let p_inv = p.matrix().clone().try_inverse().unwrap();
        let s = (&c * &p_inv * c.transpose())[(0, 0)];
        let expect = c.transpose() * &c * ((1.0 - lambda) / lambda / s);
        prop_assert!(rel(sigma.matrix(), &expect) < 1e-10);
        let null = DMatrix::from_fn(n, 1, |i, _| if i == 0 { c[(0, 1)] } else if i == 1 { -c[(0, 0)] } else { 0.0 });
        prop_assert!((sigma.matrix() * null).norm() <= 1e-12 * sigma.matrix().norm().max(1.0));
    }
}
