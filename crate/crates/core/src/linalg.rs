//! Dense SPD primitives and the cached-inverse state shared by all solvers.
//!
//! The iterate `Q` is kept together with its inverse and the vectors
//! `y_i = Q^{-1} x_i`. A rank-one step `Q <- (1 - mu) Q + mu v v^T` updates all
//! three in `O(np + p^2)`; the objective gradient is never formed in the hot
//! loop, only applied to vectors through [`SolverState::gradient_matvec`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Dataset;
use crate::error::{Result, TmeError};

/// Default number of rank-one updates between full recomputations of `Q^{-1}` and `y`.
pub const DEFAULT_REFRESH_INTERVAL: usize = 50;

/// A dense symmetric matrix, stored in full and kept exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Wraps a square matrix, replacing it with `(A + A^T) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(TmeError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let mut m = m;
        symmetrize(&mut m);
        Ok(Self(m))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Rescales so that the trace equals the dimension.
    pub fn trace_normalized(&self) -> Self {
        let p = self.dim() as f64;
        Self(&self.0 * (p / self.trace()))
    }

    pub fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.0.clone().cholesky().ok_or(TmeError::PositiveDefinitenessLost)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_ok()
    }

    /// `log det` from the Cholesky diagonal.
    pub fn log_det(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        let l = chol.l_dirty();
        Ok(2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>())
    }

    /// Cholesky-based inverse, symmetrized.
    pub fn inverse(&self) -> Result<Self> {
        let inv = self.cholesky()?.inverse();
        Self::new(inv)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues().amax()
    }

    pub fn sqrt(&self) -> Result<Self> {
        spd_sqrt(self)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Symmetric square root through the eigendecomposition.
pub fn spd_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = SymmetricEigen::new(m.0.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(TmeError::PositiveDefinitenessLost);
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    SpdMatrix::new(scaled * eig.eigenvectors.transpose())
}

/// Coefficients of a rank-one step, validated once and shared by the `Q`,
/// `Q^{-1}` and `y` updates.
#[derive(Debug, Clone, Copy)]
struct RankOneStep {
    /// `1 / (1 - mu)`
    outer: f64,
    /// `gamma / (1 + gamma v^T Q^{-1} v)`
    inner: f64,
}

impl RankOneStep {
    fn new(mu: f64, gamma: f64, v_qinv_v: f64) -> Result<Self> {
        if !(mu < 1.0) {
            return Err(TmeError::InvalidStep(mu));
        }
        let denom = 1.0 + gamma * v_qinv_v;
        if !(denom > 0.0) {
            return Err(TmeError::DenominatorNonPositive(denom));
        }
        Ok(Self {
            outer: 1.0 / (1.0 - mu),
            inner: gamma / denom,
        })
    }
}

/// Sherman-Morrison inverse of `(1 - mu) Q + mu v v^T` given `Q^{-1}`, with
/// `gamma = mu / (1 - mu)`.
pub fn rank_one_inverse_update(q_inv: &SpdMatrix, v: &DVector<f64>, mu: f64, gamma: f64) -> Result<SpdMatrix> {
    let z = &q_inv.0 * v;
    let step = RankOneStep::new(mu, gamma, v.dot(&z))?;
    let mut out = q_inv.0.clone();
    apply_inverse_update(&mut out, &z, step);
    Ok(SpdMatrix(out))
}

fn apply_inverse_update(q_inv: &mut DMatrix<f64>, z: &DVector<f64>, step: RankOneStep) {
    q_inv.ger(-step.inner, z, z, 1.0);
    *q_inv *= step.outer;
    symmetrize(q_inv);
}

/// Iterate `Q_t` of the Frank-Wolfe solvers with its maintained inverse and the
/// cached vectors `y_i = Q_t^{-1} x_i`.
#[derive(Debug, Clone)]
pub struct SolverState<'a> {
    data: &'a Dataset,
    q: SpdMatrix,
    q_inv: SpdMatrix,
    /// Column `i` is `Q^{-1} x_i`.
    y: DMatrix<f64>,
    /// `w_i = x_i^T y_i`.
    w: DVector<f64>,
    t: usize,
    refresh_interval: usize,
    since_refresh: usize,
}

impl<'a> SolverState<'a> {
    /// State at `Q_0 = I`.
    pub fn identity(data: &'a Dataset) -> Result<Self> {
        Self::new(data, SpdMatrix::identity(data.p()), DEFAULT_REFRESH_INTERVAL)
    }

    pub fn new(data: &'a Dataset, q: SpdMatrix, refresh_interval: usize) -> Result<Self> {
        if q.dim() != data.p() {
            return Err(TmeError::DimensionMismatch {
                expected: data.p(),
                found: q.dim(),
            });
        }
        if refresh_interval == 0 {
            return Err(TmeError::InvalidConfig("refresh_interval must be positive".into()));
        }
        let p = data.p();
        let mut state = Self {
            data,
            q,
            q_inv: SpdMatrix::identity(p),
            y: DMatrix::zeros(p, data.n()),
            w: DVector::zeros(data.n()),
            t: 0,
            refresh_interval,
            since_refresh: 0,
        };
        state.refresh()?;
        Ok(state)
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn q(&self) -> &SpdMatrix {
        &self.q
    }

    pub fn q_inv(&self) -> &SpdMatrix {
        &self.q_inv
    }

    pub fn cached_y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// The quadratic forms `x_i^T Q^{-1} x_i`.
    pub fn quadratic_forms(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn refresh_interval(&self) -> usize {
        self.refresh_interval
    }

    /// Test hook: overwrite the cached vectors without touching `Q`.
    #[doc(hidden)]
    pub fn corrupt_cache(&mut self, y: DMatrix<f64>) {
        self.w = column_dots(self.data.points(), &y);
        self.y = y;
    }

    /// Recomputes `Q^{-1}` from a fresh Cholesky factorization and rebuilds `y`.
    pub fn refresh(&mut self) -> Result<()> {
        self.q_inv = self.q.inverse()?;
        self.y = self.q_inv.as_matrix() * self.data.points();
        self.w = column_dots(self.data.points(), &self.y);
        self.since_refresh = 0;
        self.check_quadratic_forms()
    }

    fn check_quadratic_forms(&self) -> Result<()> {
        match self.w.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            Some(index) => Err(TmeError::NumericalBreakdown {
                index,
                value: self.w[index],
            }),
            None => Ok(()),
        }
    }

    /// `f(Q) = (p/n) sum log(x_i^T Q^{-1} x_i) + log det Q`.
    pub fn objective_value(&self) -> Result<f64> {
        self.check_quadratic_forms()?;
        let p = self.p() as f64;
        let n = self.n() as f64;
        let sum_log: f64 = self.w.iter().map(|w| w.ln()).sum();
        Ok(p / n * sum_log + self.q.log_det()?)
    }

    /// `grad f(Q) = Q^{-1} - (p/n) sum y_i y_i^T / (x_i^T y_i)`, formed densely in `O(np^2)`.
    pub fn gradient_dense(&self) -> Result<SpdMatrix> {
        self.check_quadratic_forms()?;
        let scale = self.p() as f64 / self.n() as f64;
        let mut weighted = self.y.clone();
        for (mut col, &w) in weighted.column_iter_mut().zip(self.w.iter()) {
            col /= w;
        }
        let mut g = self.q_inv.0.clone();
        g.gemm(-scale, &weighted, &self.y.transpose(), 1.0);
        SpdMatrix::new(g)
    }

    /// `grad f(Q) v` in `O(np + p^2)` from the cached `y_i`.
    pub fn gradient_matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_quadratic_forms()?;
        Ok(self.gradient_matvec_unchecked(v))
    }

    pub(crate) fn gradient_matvec_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        let scale = self.p() as f64 / self.n() as f64;
        let mut coeffs = self.y.tr_mul(v);
        coeffs.component_div_assign(&self.w);
        let mut out = &self.q_inv.0 * v;
        out.gemv(-scale, &self.y, &coeffs, 1.0);
        out
    }

    /// `v^T Q^{-1} v`.
    pub fn inverse_quadratic(&self, v: &DVector<f64>) -> f64 {
        (&self.q_inv.0 * v).dot(v)
    }

    /// Updates the cached `y_i` (and `x_i^T y_i`) for the step `(v, mu, gamma)`.
    /// Must be called while `Q^{-1}` still holds the pre-step inverse.
    pub fn update_cached_y(&mut self, v: &DVector<f64>, mu: f64, gamma: f64) -> Result<()> {
        let z = &self.q_inv.0 * v;
        let step = RankOneStep::new(mu, gamma, v.dot(&z))?;
        self.apply_y_update(v, &z, step)
    }

    fn apply_y_update(&mut self, v: &DVector<f64>, z: &DVector<f64>, step: RankOneStep) -> Result<()> {
        // s_i = v^T y_i = x_i^T Q^{-1} v
        let s = self.y.tr_mul(v);
        self.y.ger(-step.inner, z, &s, 1.0);
        self.y *= step.outer;
        for (w, s) in self.w.iter_mut().zip(s.iter()) {
            *w = step.outer * (*w - step.inner * s * s);
        }
        self.check_quadratic_forms()
    }

    /// Performs `Q <- (1 - mu) Q + mu v v^T` together with the Sherman-Morrison
    /// update of `Q^{-1}` and the cached vectors. Refreshes from scratch every
    /// `refresh_interval` steps.
    pub fn apply_step(&mut self, v: &DVector<f64>, mu: f64, gamma: f64) -> Result<()> {
        self.apply_step_inner(v, mu, gamma)?;
        self.t += 1;
        self.since_refresh += 1;
        if self.since_refresh >= self.refresh_interval {
            self.refresh()?;
        }
        Ok(())
    }

    /// Same as [`apply_step`](Self::apply_step) but never refreshes.
    #[doc(hidden)]
    pub fn apply_step_without_refresh(&mut self, v: &DVector<f64>, mu: f64, gamma: f64) -> Result<()> {
        self.apply_step_inner(v, mu, gamma)?;
        self.t += 1;
        self.since_refresh += 1;
        Ok(())
    }

    fn apply_step_inner(&mut self, v: &DVector<f64>, mu: f64, gamma: f64) -> Result<()> {
        if v.len() != self.p() {
            return Err(TmeError::DimensionMismatch {
                expected: self.p(),
                found: v.len(),
            });
        }
        let z = &self.q_inv.0 * v;
        let step = RankOneStep::new(mu, gamma, v.dot(&z))?;
        self.apply_y_update(v, &z, step)?;
        apply_inverse_update(&mut self.q_inv.0, &z, step);

        let q = &mut self.q.0;
        *q *= 1.0 - mu;
        q.ger(mu, v, v, 1.0);
        symmetrize(q);
        Ok(())
    }

    /// `|| Q Q^{-1} - I ||_F`.
    pub fn inverse_residual(&self) -> f64 {
        let p = self.p();
        (self.q.as_matrix() * self.q_inv.as_matrix() - DMatrix::<f64>::identity(p, p)).norm()
    }

    /// Largest column error `|| y_i - Q^{-1} x_i ||_2` against the maintained inverse.
    pub fn cache_error(&self) -> f64 {
        let fresh = self.q_inv.as_matrix() * self.data.points();
        (&fresh - &self.y).column_iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

pub(crate) fn column_dots(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().zip(b.column_iter()).map(|(x, y)| x.dot(&y)))
}
