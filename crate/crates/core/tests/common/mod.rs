#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tme_core::{generate, DMatrix, Dataset, Family, GeneratorConfig, ShapeMatrixSpec, SolverState, SpdMatrix};

pub fn sphere(p: usize, n: usize, seed: u64) -> Dataset {
    generate(&GeneratorConfig {
        p,
        n,
        shape: ShapeMatrixSpec::Identity,
        family: Family::SphereUniform,
        seed,
    })
    .unwrap()
}

/// Random PD matrix with trace `p` and condition number of a few units.
pub fn random_spd(p: usize, seed: u64) -> SpdMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    SpdMatrix::new(&a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5)
        .unwrap()
        .trace_normalized()
}

pub fn random_state(data: &Dataset, seed: u64) -> SolverState<'_> {
    SolverState::new(data, random_spd(data.p(), seed), 50).unwrap()
}

pub fn random_symmetric(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&a + a.transpose()) * 0.5
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `f(Q)` straight from the definition, no caches.
pub fn naive_objective(data: &Dataset, q: &DMatrix<f64>) -> f64 {
    let (p, n) = (data.p() as f64, data.n() as f64);
    let inv = q.clone().try_inverse().unwrap();
    let s: f64 = data
        .points()
        .column_iter()
        .map(|x| (x.transpose() * &inv * x)[(0, 0)].ln())
        .sum();
    p / n * s + q.determinant().ln()
}

/// `Q - (p/n) sum x x^T / (x^T Q^{-1} x)` straight from the definition.
pub fn naive_residual(data: &Dataset, q: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = (data.p(), data.n());
    let inv = q.clone().try_inverse().unwrap();
    let mut m = q.clone();
    for x in data.points().column_iter() {
        let w = (x.transpose() * &inv * x)[(0, 0)];
        m -= x * x.transpose() * (p as f64 / n as f64 / w);
    }
    m
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}
