//! Unit-norm point sets, synthetic elliptical generators and the text point-file format.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use thiserror::Error;

use crate::error::{Result, TmeError};
use crate::linalg::SpdMatrix;

const UNIT_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    File,
    GaussianContaminated,
    MultivariateT,
    SphereUniform,
}

/// `n` unit-norm points in `R^p`, stored as the columns of a `p x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: DMatrix<f64>,
    seed: Option<u64>,
    provenance: Provenance,
}

impl Dataset {
    /// Scales every column to unit Euclidean norm.
    pub fn normalize(points: DMatrix<f64>, provenance: Provenance, seed: Option<u64>) -> Result<Self> {
        let mut points = points;
        for (i, mut col) in points.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(TmeError::ZeroVectorInput(i));
            }
            col /= norm;
        }
        Ok(Self {
            points,
            seed,
            provenance,
        })
    }

    /// Like [`normalize`](Self::normalize), but columns already of unit norm
    /// (within `1e-12`) are kept bit-for-bit.
    pub fn from_points(points: DMatrix<f64>, provenance: Provenance, seed: Option<u64>) -> Result<Self> {
        let mut points = points;
        for (i, mut col) in points.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(TmeError::ZeroVectorInput(i));
            }
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                col /= norm;
            }
        }
        Ok(Self {
            points,
            seed,
            provenance,
        })
    }

    pub fn p(&self) -> usize {
        self.points.nrows()
    }

    pub fn n(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `(1/n) sum x_i x_i^T` rescaled to trace `p`.
    pub fn sample_covariance(&self) -> Result<SpdMatrix> {
        let cov = &self.points * self.points.transpose() / self.n() as f64;
        Ok(SpdMatrix::new(cov)?.trace_normalized())
    }
}

/// Shape (scatter) matrix used by the generators.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeMatrixSpec {
    Toeplitz { rho: f64 },
    Identity,
    Explicit(SpdMatrix),
}

impl ShapeMatrixSpec {
    pub fn realize(&self, p: usize) -> Result<SpdMatrix> {
        match self {
            ShapeMatrixSpec::Toeplitz { rho } => {
                if !(*rho > 0.0 && *rho < 1.0) {
                    return Err(TmeError::InvalidConfig(format!("toeplitz rho {rho} outside (0, 1)")));
                }
                let m = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
                SpdMatrix::new(m)
            }
            ShapeMatrixSpec::Identity => Ok(SpdMatrix::identity(p)),
            ShapeMatrixSpec::Explicit(m) => {
                if m.dim() != p {
                    return Err(TmeError::DimensionMismatch {
                        expected: p,
                        found: m.dim(),
                    });
                }
                Ok(m.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Gaussian points, each replaced with probability `rate_numerator / p` by the
    /// eigenvector of the smallest eigenvalue of the shape matrix.
    GaussianContaminated {
        rate_numerator: f64,
    },
    MultivariateT {
        dof: f64,
    },
    SphereUniform,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::GaussianContaminated { .. } => "gaussian_contaminated",
            Family::MultivariateT { .. } => "multivariate_t",
            Family::SphereUniform => "sphere_uniform",
        }
    }

    fn provenance(&self) -> Provenance {
        match self {
            Family::GaussianContaminated { .. } => Provenance::GaussianContaminated,
            Family::MultivariateT { .. } => Provenance::MultivariateT,
            Family::SphereUniform => Provenance::SphereUniform,
        }
    }
}

impl FromStr for Family {
    type Err = TmeError;

    /// Parses a family name with its default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_contaminated" | "gaussian" | "contaminated" => {
                Ok(Family::GaussianContaminated { rate_numerator: 0.9 })
            }
            "multivariate_t" | "t" | "t_dist" => Ok(Family::MultivariateT { dof: 2.0 }),
            "sphere_uniform" | "sphere" | "uniform" => Ok(Family::SphereUniform),
            other => Err(TmeError::InvalidConfig(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub p: usize,
    pub n: usize,
    pub shape: ShapeMatrixSpec,
    pub family: Family,
    pub seed: u64,
}

impl GeneratorConfig {
    /// The experiment setting: `p = 50`, `n = p^2`, Toeplitz(0.85) shape.
    pub fn paper_scale(family: Family, seed: u64) -> Self {
        Self {
            p: 50,
            n: 2500,
            shape: ShapeMatrixSpec::Toeplitz { rho: 0.85 },
            family,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n <= self.p {
            return Err(TmeError::InvalidConfig(format!(
                "need n > p > 0, got p={} n={}",
                self.p, self.n
            )));
        }
        match self.family {
            Family::GaussianContaminated { rate_numerator } => {
                let prob = rate_numerator / self.p as f64;
                if !(0.0..=1.0).contains(&prob) {
                    return Err(TmeError::InvalidConfig(format!(
                        "contamination probability {prob} outside [0, 1]"
                    )));
                }
            }
            Family::MultivariateT { dof } => {
                if !(dof > 0.0) {
                    return Err(TmeError::InvalidConfig(format!(
                        "degrees of freedom must be positive, got {dof}"
                    )));
                }
            }
            Family::SphereUniform => {}
        }
        Ok(())
    }
}

/// Unit eigenvector of the smallest eigenvalue, signed so that its first
/// nonzero entry is positive.
pub fn smallest_eigenvector(m: &SpdMatrix) -> DVector<f64> {
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let idx = eig.eigenvalues.imin();
    let mut v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
    if let Some(first) = v.iter().find(|x| **x != 0.0) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    v.normalize()
}

/// Draws a dataset. Deterministic given `cfg.seed`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Dataset> {
    Dataset::normalize(generate_raw(cfg)?, cfg.family.provenance(), Some(cfg.seed))
}

/// The generator's draws before normalization, one point per column.
pub fn generate_raw(cfg: &GeneratorConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let (p, n) = (cfg.p, cfg.n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let shape = match cfg.family {
        Family::SphereUniform => SpdMatrix::identity(p),
        _ => cfg.shape.realize(p)?,
    };
    let chol = shape.cholesky()?;
    let factor = chol.l();

    let outlier = match cfg.family {
        Family::GaussianContaminated { .. } => Some(smallest_eigenvector(&shape)),
        _ => None,
    };
    let chi = match cfg.family {
        Family::MultivariateT { dof } => {
            Some(ChiSquared::new(dof).map_err(|e| TmeError::InvalidConfig(e.to_string()))?)
        }
        _ => None,
    };

    let mut points = DMatrix::zeros(p, n);
    let mut g = DVector::zeros(p);
    for i in 0..n {
        g.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        let mut z = &factor * &g;
        match cfg.family {
            Family::GaussianContaminated { rate_numerator } => {
                let u: f64 = rng.gen();
                if u < rate_numerator / p as f64 {
                    z.copy_from(outlier.as_ref().expect("outlier direction"));
                }
            }
            Family::MultivariateT { dof } => {
                let c: f64 = chi.as_ref().expect("chi-squared").sample(&mut rng);
                z /= (c / dof).sqrt();
            }
            Family::SphereUniform => {}
        }
        points.set_column(i, &z);
    }
    Ok(points)
}

/// Necessary conditions for the estimator to exist and for the linear-rate regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NecessaryConditions {
    pub rank_full: bool,
    pub n_gt_p: bool,
    pub n_ge_2p: bool,
    pub numerical_rank: usize,
}

impl NecessaryConditions {
    /// Conditions required for the estimator itself (`rank_full` and `n > p`).
    pub fn existence_ok(&self) -> bool {
        self.rank_full && self.n_gt_p
    }

    pub fn failed(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.rank_full {
            out.push("rank_full");
        }
        if !self.n_gt_p {
            out.push("n_gt_p");
        }
        if !self.n_ge_2p {
            out.push("n_ge_2p");
        }
        out
    }
}

impl fmt::Display for NecessaryConditions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rank_full={} (numerical rank {}), n_gt_p={}, n_ge_2p={}",
            self.rank_full, self.numerical_rank, self.n_gt_p, self.n_ge_2p
        )
    }
}

pub fn check_necessary_conditions(data: &Dataset) -> NecessaryConditions {
    let (p, n) = (data.p(), data.n());
    let sv = data.points().clone().singular_values();
    let smax = sv.max();
    let threshold = p as f64 * f64::EPSILON * smax;
    let numerical_rank = sv.iter().filter(|&&s| s > threshold).count();
    NecessaryConditions {
        rank_full: numerical_rank == p,
        n_gt_p: n > p,
        n_ge_2p: n >= 2 * p,
        numerical_rank,
    }
}

#[derive(Debug, Error)]
pub enum PointFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: expected {expected} values, found {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("expected {expected} rows, found {found}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("row {row}, column {col}: cannot parse '{token}'")]
    Parse { row: usize, col: usize, token: String },
    #[error("row {row}, column {col}: non-finite entry")]
    NonFiniteEntry { row: usize, col: usize },
    #[error(transparent)]
    Invalid(#[from] TmeError),
}

/// Writes `p n` then one point per line, 17 significant digits.
pub fn save_points(data: &Dataset, path: impl AsRef<Path>) -> std::result::Result<(), PointFileError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{} {}", data.p(), data.n())?;
    for col in data.points().column_iter() {
        let line: Vec<String> = col.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_points(path: impl AsRef<Path>) -> std::result::Result<Dataset, PointFileError> {
    parse_points(&fs::read_to_string(path)?)
}

pub fn parse_points(text: &str) -> std::result::Result<Dataset, PointFileError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| PointFileError::MalformedHeader("empty file".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&d| d > 0);
    let (p, n) = match dims.as_slice() {
        [p, n] => match (parse_dim(p), parse_dim(n)) {
            (Some(p), Some(n)) => (p, n),
            _ => return Err(PointFileError::MalformedHeader(header.to_string())),
        },
        _ => return Err(PointFileError::MalformedHeader(header.to_string())),
    };

    let mut points = DMatrix::zeros(p, n);
    let mut rows = 0;
    for (row, line) in lines.enumerate() {
        if row >= n {
            return Err(PointFileError::RowCountMismatch {
                expected: n,
                found: row + 1,
            });
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != p {
            return Err(PointFileError::DimensionMismatch {
                row,
                expected: p,
                found: tokens.len(),
            });
        }
        for (col, token) in tokens.iter().enumerate() {
            let value: f64 = token.parse().map_err(|_| PointFileError::Parse {
                row,
                col,
                token: token.to_string(),
            })?;
            if !value.is_finite() {
                return Err(PointFileError::NonFiniteEntry { row, col });
            }
            points[(col, row)] = value;
        }
        rows = row + 1;
    }
    if rows != n {
        return Err(PointFileError::RowCountMismatch {
            expected: n,
            found: rows,
        });
    }
    Ok(Dataset::from_points(points, Provenance::File, None)?)
}
