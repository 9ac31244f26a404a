mod common;

use common::{eigenvalues, random_state, sphere};
use tme_core::{afw_direction, fw_direction, gafw_direction, power_method, spd_sqrt, EigConfig, SolverState};

const TRIALS: u64 = 1000;

struct Dense {
    grad: Vec<f64>,
    geodesic: Vec<f64>,
}

fn dense(state: &SolverState<'_>) -> Dense {
    let g = state.gradient_dense().unwrap().into_inner();
    let s = spd_sqrt(state.q()).unwrap().into_inner();
    Dense {
        grad: eigenvalues(&g),
        geodesic: eigenvalues(&(&s * &g * &s)),
    }
}

fn norm(e: &[f64]) -> f64 {
    e.first().unwrap().abs().max(e.last().unwrap().abs())
}

#[test]
fn certificates_hold_in_at_least_99_percent_of_trials() {
    let beta = 0.5;
    let (mut fw_ok, mut afw_ok, mut gafw_ok) = (0, 0, 0);
    for seed in 0..TRIALS {
        let data = sphere(8, 60, seed);
        let state = random_state(&data, seed);
        let p = 8.0;
        let d = dense(&state);
        let cfg = EigConfig::with_seed(seed);

        if let Ok(dir) = fw_direction(&state, &cfg) {
            fw_ok += usize::from(dir.rayleigh_grad <= p * (1.0 - beta) * d.grad[0] + 1e-12);
        }
        let dir = afw_direction(&state, &cfg).unwrap();
        afw_ok += usize::from(dir.rayleigh_grad.abs() >= p * (1.0 - beta) * norm(&d.grad) - 1e-12);
        let sqrt_q = spd_sqrt(state.q()).unwrap();
        let dir = gafw_direction(&state, &sqrt_q, &cfg).unwrap();
        gafw_ok += usize::from(dir.progress().abs() >= (1.0 - beta) * norm(&d.geodesic) - 1e-12);
    }
    let need = (TRIALS as f64 * 0.99).ceil() as usize;
    assert!(fw_ok >= need, "fw {fw_ok}/{TRIALS}");
    assert!(afw_ok >= need, "afw {afw_ok}/{TRIALS}");
    assert!(gafw_ok >= need, "gafw {gafw_ok}/{TRIALS}");
}

#[test]
fn directions_have_norm_sqrt_p_and_inverse_rayleigh_above_one() {
    for seed in 0..50 {
        let data = sphere(6, 40, seed);
        let state = random_state(&data, seed + 100);
        let cfg = EigConfig::with_seed(seed);
        let sqrt_q = spd_sqrt(state.q()).unwrap();
        let dirs = [
            fw_direction(&state, &cfg).ok(),
            Some(afw_direction(&state, &cfg).unwrap()),
            Some(gafw_direction(&state, &sqrt_q, &cfg).unwrap()),
        ];
        for d in dirs.into_iter().flatten() {
            assert!((d.v.norm() - 6f64.sqrt()).abs() < 1e-10);
            assert!(d.rayleigh_inv > 1.0);
            let a = (d.v.transpose() * state.gradient_dense().unwrap().as_matrix() * &d.v)[(0, 0)];
            assert!((a - d.rayleigh_grad).abs() < 1e-9 * a.abs().max(1.0));
        }
    }
}

#[test]
fn shifted_operators_are_psd() {
    let cfg = EigConfig::default();
    for seed in 0..50 {
        let data = sphere(8, 60, seed);
        let state = random_state(&data, seed);
        let e = dense(&state).grad;
        let est = power_method(
            |u| state.gradient_matvec(&state.gradient_matvec(u).unwrap()).unwrap(),
            8,
            &EigConfig::with_seed(seed),
        )
        .unwrap();
        let shift = est.value.sqrt() / (1.0 - cfg.beta_tilde());
        assert!(shift - e.last().unwrap() >= -1e-9, "M- not PSD for seed {seed}");
        assert!(shift + e.first().unwrap() >= -1e-9, "M+ not PSD for seed {seed}");
    }
}

#[test]
fn same_seed_gives_bit_identical_directions() {
    let data = sphere(8, 60, 5);
    let state = random_state(&data, 5);
    let cfg = EigConfig::with_seed(77);
    let a = afw_direction(&state, &cfg).unwrap();
    let b = afw_direction(&state, &cfg).unwrap();
    assert_eq!(a, b);
    let sqrt_q = spd_sqrt(state.q()).unwrap();
    assert_eq!(
        gafw_direction(&state, &sqrt_q, &cfg).unwrap(),
        gafw_direction(&state, &sqrt_q, &cfg).unwrap()
    );
}
