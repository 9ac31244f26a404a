mod common;

use tme_core::{
    check_necessary_conditions, generate, generate_raw, smallest_eigenvector, Family, GeneratorConfig, ShapeMatrixSpec,
};

#[test]
fn contaminated_count_concentrates_around_45() {
    let seeds = 40;
    let mut inside = 0;
    for seed in 0..seeds {
        let cfg = GeneratorConfig::paper_scale(Family::GaussianContaminated { rate_numerator: 0.9 }, seed);
        let data = generate(&cfg).unwrap();
        let e = smallest_eigenvector(&cfg.shape.realize(50).unwrap());
        let count = data.points().column_iter().filter(|x| (x - &e).amax() < 1e-12).count();
        inside += usize::from((25..=65).contains(&count));
    }
    assert!(inside as f64 >= 0.95 * seeds as f64, "{inside}/{seeds}");
}

#[test]
fn multivariate_t_is_heavy_tailed_before_normalization() {
    let cfg = GeneratorConfig {
        p: 5,
        n: 10_000,
        shape: ShapeMatrixSpec::Identity,
        family: Family::MultivariateT { dof: 2.0 },
        seed: 3,
    };
    let raw = generate_raw(&cfg).unwrap();
    let x: Vec<f64> = raw.row(0).iter().copied().collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    assert!(m4 / (m2 * m2) > 10.0, "kurtosis {}", m4 / (m2 * m2));
}

#[test]
fn paper_scale_sphere_data_passes_all_checks() {
    let cfg = GeneratorConfig {
        family: Family::SphereUniform,
        ..GeneratorConfig::paper_scale(Family::SphereUniform, 11)
    };
    let report = check_necessary_conditions(&generate(&cfg).unwrap());
    assert!(report.rank_full && report.n_gt_p && report.n_ge_2p);
}

#[test]
fn generated_points_are_unit_norm_for_every_family() {
    for family in [
        Family::GaussianContaminated { rate_numerator: 0.9 },
        Family::MultivariateT { dof: 0.5 },
        Family::SphereUniform,
    ] {
        let cfg = GeneratorConfig {
            p: 7,
            n: 50,
            shape: ShapeMatrixSpec::Toeplitz { rho: 0.5 },
            family,
            seed: 1,
        };
        let data = generate(&cfg).unwrap();
        for x in data.points().column_iter() {
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(data.seed(), Some(1));
    }
}
