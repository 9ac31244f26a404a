//! Tyler's M-estimator of shape via Frank-Wolfe methods.
//!
//! [`solve`] runs one of the Frank-Wolfe variants ([`Variant::Fw`],
//! [`Variant::Afw`], [`Variant::Gafw`]) or the fixed-point iteration
//! ([`Variant::Fpi`]) on a [`Dataset`] of unit-norm points.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oracle;
pub mod solver;

pub use dataset::{
    check_necessary_conditions, generate, generate_raw, load_points, parse_points, save_points, smallest_eigenvector,
    Dataset, Family, GeneratorConfig, NecessaryConditions, PointFileError, Provenance, ShapeMatrixSpec,
};
pub use error::{Result, TmeError};
pub use experiment::{
    run_experiment, AggregateCurve, CsvRow, ExperimentConfig, ExperimentError, Manifest, OUTPUT_DIR_ENV,
};
pub use linalg::{rank_one_inverse_update, spd_sqrt, SolverState, SpdMatrix, DEFAULT_REFRESH_INTERVAL};
pub use oracle::{
    afw_direction, default_power_budget, fw_direction, gafw_direction, power_method, DenseGradient, Direction,
    EigConfig, GradientOperator, OracleKind, PowerEstimate,
};
pub use solver::{
    default_max_iters, fpi_solve, iterate_once, solve, step_size, step_size_from, tme_residual_estimate,
    tme_residual_matrix, tme_residual_min_eig, tme_residual_spectral, CostModel, OracleStats, Residuals, SolveConfig,
    SolveError, SolveResult, StepRecord, TraceRow, Variant,
};

pub use nalgebra::{DMatrix, DVector};
