//! Fixtures shared by the criterion benches.

use tme_core::{generate, Dataset, Family, GeneratorConfig, SolverState};

/// Paper-shaped data (`n = p^2`, Toeplitz(0.85), contaminated Gaussian).
pub fn contaminated(p: usize, seed: u64) -> Dataset {
    let cfg = GeneratorConfig {
        p,
        n: p * p,
        ..GeneratorConfig::paper_scale(Family::GaussianContaminated { rate_numerator: 0.9 }, seed)
    };
    generate(&cfg).expect("valid generator config")
}

/// Solver state at the trace-normalized sample covariance.
pub fn state_at_sample_covariance(data: &Dataset) -> SolverState<'_> {
    let q = data.sample_covariance().expect("full-rank data");
    SolverState::new(data, q, tme_core::DEFAULT_REFRESH_INTERVAL).expect("PD start")
}
