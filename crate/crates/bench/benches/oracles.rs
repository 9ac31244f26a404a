use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use tme_bench::{contaminated, state_at_sample_covariance};
use tme_core::{
    afw_direction, fpi_solve, gafw_direction, iterate_once, spd_sqrt, DVector, EigConfig, SolveConfig, Variant,
};

fn gradient_matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient_matvec");
    for p in [20, 50] {
        let data = contaminated(p, 1);
        let state = state_at_sample_covariance(&data);
        let v = DVector::from_element(p, 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, _| {
            b.iter(|| state.gradient_matvec(black_box(&v)))
        });
    }
    group.finish();
}

fn oracles(c: &mut Criterion) {
    let data = contaminated(50, 2);
    let state = state_at_sample_covariance(&data);
    let sqrt_q = spd_sqrt(state.q()).unwrap();
    let cfg = EigConfig::with_seed(3);
    c.bench_function("afw_direction/50", |b| {
        b.iter(|| afw_direction(&state, black_box(&cfg)).unwrap())
    });
    c.bench_function("gafw_direction/50", |b| {
        b.iter(|| gafw_direction(&state, &sqrt_q, black_box(&cfg)).unwrap())
    });
    c.bench_function("spd_sqrt/50", |b| b.iter(|| spd_sqrt(black_box(state.q())).unwrap()));
}

fn iterations(c: &mut Criterion) {
    let data = contaminated(50, 4);
    for variant in [Variant::Afw, Variant::Gafw] {
        let cfg = SolveConfig::new(variant);
        c.bench_function(&format!("iterate_once/{variant}/50"), |b| {
            b.iter_batched(
                || state_at_sample_covariance(&data),
                |mut state| iterate_once(&mut state, &cfg).unwrap(),
                criterion::BatchSize::SmallInput,
            )
        });
    }
    c.bench_function("fpi_iteration/50", |b| b.iter(|| fpi_solve(&data, 1, 1e-300).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = gradient_matvec, oracles, iterations
}
criterion_main!(benches);
