mod common;

use common::{random_spd, random_state, sphere};
use proptest::prelude::*;
use tme_core::experiment::{format_csv, parse_csv, CsvRow};
use tme_core::linalg::SolverState;
use tme_core::{
    iterate_once, parse_points, rank_one_inverse_update, save_points, step_size_from, DMatrix, DVector, Dataset,
    Provenance, SolveConfig, SpdMatrix, Variant,
};

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Fw), Just(Variant::Afw), Just(Variant::Gafw)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn step_size_identities(b in 1.0001f64..10.0, frac in -5.0f64..0.99) {
        let a = frac * b * b;
        let (mu, gamma) = step_size_from(a, b).unwrap();
        prop_assert!((gamma * b * b + a).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!(mu < 1.0);
        if a < 0.0 { prop_assert!(mu > 0.0); }
        if a > 0.0 { prop_assert!(mu < 0.0); }
        if mu != 0.0 { prop_assert!((gamma - mu / (1.0 - mu)).abs() <= 1e-9 * gamma.abs().max(1.0)); }
    }

    #[test]
    fn sherman_morrison_inverse(p in 2usize..8, seed in any::<u64>(), mu in -0.5f64..0.9) {
        let q = random_spd(p, seed);
        let q_inv = q.inverse().unwrap();
        let mut r = common::rng(seed);
        let v: DVector<f64> = DVector::from_fn(p, |_, _| rand::Rng::gen_range(&mut r, -1.0..1.0));
        let v: DVector<f64> = &v * ((p as f64).sqrt() / v.norm());
        let next = SpdMatrix::new(q.as_matrix() * (1.0 - mu) + &v * v.transpose() * mu).unwrap();
        prop_assume!(next.is_positive_definite());
        let gamma = mu / (1.0 - mu);
        let inv = rank_one_inverse_update(&q_inv, &v, mu, gamma).unwrap();
        let err = (next.as_matrix() * inv.as_matrix() - DMatrix::identity(p, p)).norm();
        prop_assert!(err < 1e-8, "{}", err);
    }

    #[test]
    fn objective_is_scale_invariant_and_gradient_orthogonal(seed in any::<u64>(), c in 0.01f64..100.0) {
        let data = sphere(5, 30, seed);
        let q = random_spd(5, seed);
        let scaled = SpdMatrix::new(q.as_matrix() * c).unwrap();
        let f = SolverState::new(&data, q, 50).unwrap();
        let g = SolverState::new(&data, scaled, 50).unwrap();
        prop_assert!((f.objective_value().unwrap() - g.objective_value().unwrap()).abs() < 1e-10);
        let inner = f.q().as_matrix().dot(f.gradient_dense().unwrap().as_matrix());
        prop_assert!(inner.abs() < 1e-10);
    }

    #[test]
    fn iterations_stay_feasible_and_descend(seed in any::<u64>(), v in variant()) {
        let data = sphere(6, 60, seed);
        let mut state = random_state(&data, seed);
        let cfg = SolveConfig { eig: tme_core::EigConfig::with_seed(seed), ..SolveConfig::new(v) };
        for _ in 0..10 {
            let before = state.objective_value().unwrap();
            let step = iterate_once(&mut state, &cfg).unwrap();
            let after = state.objective_value().unwrap();
            prop_assert!((state.q().trace() - 6.0).abs() < 1e-9);
            prop_assert!(state.q().is_positive_definite());
            prop_assert!(after - before <= -0.25 * step.l_t.powi(2).min(1.0) + 1e-9);
            prop_assert_eq!(step.mu > 0.0, step.direction.rayleigh_grad < 0.0);
        }
    }

    #[test]
    fn normalization_yields_unit_columns(p in 1usize..6, n in 1usize..12, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let m = DMatrix::from_fn(p, n, |_, _| rand::Rng::gen_range(&mut r, -1e3..1e3) + 1e-3);
        let data = Dataset::normalize(m, Provenance::File, None).unwrap();
        for x in data.points().column_iter() {
            prop_assert!((x.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn point_file_round_trip(p in 1usize..6, n in 1usize..12, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let m = DMatrix::from_fn(p, n, |_, _| rand::Rng::gen_range(&mut r, -1.0..1.0) + 2.0);
        let data = Dataset::normalize(m, Provenance::File, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.txt");
        save_points(&data, &path).unwrap();
        let back = parse_points(&std::fs::read_to_string(&path).unwrap()).unwrap();
        prop_assert_eq!(back.points(), data.points());
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 8), t in 0usize..10_000) {
        let row = CsvRow {
            t,
            cost_units: values[0],
            objective: values[1],
            gap: values[2],
            spectral_dist: values[3],
            residual_spectral: values[4],
            residual_min_eig: values[5],
            l_t: values[6],
            mu_t: values[7],
        };
        let back = parse_csv(&format_csv(&[row])).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(back[0], row);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn solve_is_deterministic(seed in any::<u64>(), v in variant()) {
        let data = sphere(5, 40, seed);
        let cfg = SolveConfig { max_iters: Some(30), eig: tme_core::EigConfig::with_seed(seed), ..SolveConfig::new(v) };
        let a = tme_core::solve(&data, &cfg).unwrap();
        let b = tme_core::solve(&data, &cfg).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
