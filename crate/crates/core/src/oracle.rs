//! Randomized direction oracles for the Frank-Wolfe steps.
//!
//! Every oracle only touches the gradient through matrix-vector products. The
//! magnitude oracles (AFW, GAFW) first estimate `C ~ ||G||_2` by power iteration
//! on `G^2`, then run power iteration on the PSD shifts
//! `M+ = C/(1 - b) I + G` and `M- = C/(1 - b) I - G` and keep whichever of the
//! two candidates has the larger `|u^T G u|`. The internal slack `b` is chosen
//! as `beta / (3 - beta)`, the largest value with `(1 - 3b)/(1 - b) >= 1 - beta`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TmeError};
use crate::linalg::{SolverState, SpdMatrix};

/// Failure probability used for the default power-iteration budget.
pub const DEFAULT_FAILURE_PROBABILITY: f64 = 1e-6;
/// Default for [`EigConfig::residual_tol`].
pub const DEFAULT_RESIDUAL_TOL: f64 = 0.1;

/// Largest multiple of the base budget the FW oracle may spend on `M-`.
pub const FW_BUDGET_CAP: f64 = 64.0;

/// Gradient access needed by the oracles: products with `grad f(Q)` and the
/// quadratic form of `Q^{-1}`.
pub trait GradientOperator {
    fn dim(&self) -> usize;

    fn grad_apply(&self, v: &DVector<f64>) -> DVector<f64>;

    /// `v^T Q^{-1} v`
    fn inverse_quadratic(&self, v: &DVector<f64>) -> f64;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

impl GradientOperator for SolverState<'_> {
    fn dim(&self) -> usize {
        self.p()
    }

    fn grad_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.gradient_matvec_unchecked(v)
    }

    fn inverse_quadratic(&self, v: &DVector<f64>) -> f64 {
        SolverState::inverse_quadratic(self, v)
    }

    fn validate(&self) -> Result<()> {
        let w = self.quadratic_forms();
        match w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            Some(index) => Err(TmeError::NumericalBreakdown { index, value: w[index] }),
            None => Ok(()),
        }
    }
}

/// An explicitly given gradient and inverse iterate. Used to inject synthetic
/// gradients and as a dense reference.
#[derive(Debug, Clone)]
pub struct DenseGradient {
    pub grad: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
}

impl GradientOperator for DenseGradient {
    fn dim(&self) -> usize {
        self.grad.nrows()
    }

    fn grad_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.grad * v
    }

    fn inverse_quadratic(&self, v: &DVector<f64>) -> f64 {
        (&self.q_inv * v).dot(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleKind {
    Fw,
    Afw,
    Gafw,
}

/// A step direction `v` with `||v|| = sqrt(p)` and its Rayleigh data.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub v: DVector<f64>,
    /// `v^T grad f(Q) v`
    pub rayleigh_grad: f64,
    /// `v^T Q^{-1} v`
    pub rayleigh_inv: f64,
    pub kind: OracleKind,
    /// Gradient matrix-vector products spent producing this direction.
    pub matvecs: usize,
}

impl Direction {
    /// `L_t = (v^T grad v) / (v^T Q^{-1} v)`
    pub fn progress(&self) -> f64 {
        self.rayleigh_grad / self.rayleigh_inv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigConfig {
    /// Approximation slack in `[0, 1)`.
    pub beta: f64,
    /// Per-run power iteration cap; `None` means `8 * ceil(ln(p / delta))`.
    pub max_power_iters: Option<usize>,
    pub rng_seed: u64,
    /// Power iteration stops once the eigen-residual `||A u - rho u||` falls to
    /// this fraction of the tracked Rayleigh quotient.
    pub residual_tol: f64,
    /// Gradient norms at or below this are reported as [`TmeError::Converged`].
    pub zero_tol: f64,
}

impl Default for EigConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            max_power_iters: None,
            rng_seed: 0,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            zero_tol: 1e-13,
        }
    }
}

impl EigConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(TmeError::InvalidConfig(format!("beta {} outside [0, 1)", self.beta)));
        }
        if self.max_power_iters == Some(0) {
            return Err(TmeError::InvalidConfig("max_power_iters must be positive".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(TmeError::InvalidConfig("residual_tol must be non-negative".into()));
        }
        Ok(())
    }

    /// Internal slack of each power-method call in the magnitude oracles.
    pub fn beta_tilde(&self) -> f64 {
        self.beta / (2.0 + self.beta)
    }

    pub fn power_budget(&self, p: usize) -> usize {
        self.max_power_iters.unwrap_or_else(|| default_power_budget(p))
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

pub fn default_power_budget(p: usize) -> usize {
    8 * (p as f64 / DEFAULT_FAILURE_PROBABILITY).ln().ceil() as usize
}

/// Result of a power-method run.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    /// `u^T A u`
    pub value: f64,
    /// Unit vector whose Rayleigh quotient is `value`.
    pub vector: DVector<f64>,
    pub iterations: usize,
}

/// Power iteration advanced one operator application at a time.
struct PowerIteration {
    next: DVector<f64>,
    vector: DVector<f64>,
    value: f64,
    /// `||A u - value u||` for the current vector.
    residual: f64,
    iterations: usize,
}

impl PowerIteration {
    fn new(p: usize, rng: &mut ChaCha8Rng) -> Self {
        let start = random_unit(p, rng);
        Self {
            vector: start.clone(),
            next: start,
            value: 0.0,
            residual: f64::INFINITY,
            iterations: 0,
        }
    }

    /// Applies the operator once; returns the Rayleigh quotient of the vector
    /// it was applied to.
    fn step(&mut self, apply: &mut impl FnMut(&DVector<f64>) -> DVector<f64>) -> Result<f64> {
        let image = apply(&self.next);
        self.iterations += 1;
        self.value = self.next.dot(&image);
        std::mem::swap(&mut self.vector, &mut self.next);
        let norm = image.norm();
        if !norm.is_finite() {
            return Err(TmeError::NumericalBreakdown { index: 0, value: norm });
        }
        self.residual = (norm * norm - self.value * self.value).max(0.0).sqrt();
        if norm == 0.0 {
            if self.iterations == 1 {
                return Err(TmeError::ZeroOperator);
            }
            // the current vector lies in the null space; keep it
            self.next.copy_from(&self.vector);
        } else {
            self.next = image / norm;
        }
        Ok(self.value)
    }

    fn finish(self) -> PowerEstimate {
        PowerEstimate {
            value: self.value,
            vector: self.vector,
            iterations: self.iterations,
        }
    }
}

fn random_unit(p: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

fn resolved(it: &PowerIteration, tracked: f64, tol: f64) -> bool {
    it.residual <= tol * tracked.abs()
}

/// Runs power iteration until the residual is small relative to `value - shift`
/// or `max_iters` is reached.
fn run_power(
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    p: usize,
    max_iters: usize,
    tol: f64,
    shift: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PowerEstimate> {
    let mut it = PowerIteration::new(p, rng);
    while it.iterations < max_iters {
        let tracked = it.step(&mut apply)? - shift;
        if resolved(&it, tracked, tol) {
            break;
        }
    }
    Ok(it.finish())
}

/// Leading eigenpair estimate of a symmetric PSD operator from a seeded random start.
pub fn power_method(
    apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    p: usize,
    cfg: &EigConfig,
) -> Result<PowerEstimate> {
    cfg.validate()?;
    run_power(apply, p, cfg.power_budget(p), cfg.residual_tol, 0.0, &mut cfg.rng())
}

/// Unit vector `u` approximately maximizing `|u^T G u|` and the value `u^T G u`.
struct MagnitudeEstimate {
    u: DVector<f64>,
    rayleigh: f64,
    matvecs: usize,
}

/// Estimates `C ~ ||G||_2` from power iteration on `G^2`.
fn estimate_norm(
    apply: &mut impl FnMut(&DVector<f64>) -> DVector<f64>,
    p: usize,
    cfg: &EigConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let squared = |u: &DVector<f64>| {
        let gu = apply(u);
        apply(&gu)
    };
    let est = match run_power(squared, p, cfg.power_budget(p), cfg.residual_tol, 0.0, rng) {
        Err(TmeError::ZeroOperator) => return Err(TmeError::Converged),
        other => other?,
    };
    let c = est.value.max(0.0).sqrt();
    if c <= cfg.zero_tol {
        return Err(TmeError::Converged);
    }
    Ok((c, 2 * est.iterations))
}

fn magnitude_oracle(
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    p: usize,
    cfg: &EigConfig,
) -> Result<MagnitudeEstimate> {
    cfg.validate()?;
    let mut rng = cfg.rng();
    let (c, mut matvecs) = estimate_norm(&mut apply, p, cfg, &mut rng)?;
    let shift = c / (1.0 - cfg.beta_tilde());
    let budget = cfg.power_budget(p);

    let plus = run_power(|u| apply(u) + u * shift, p, budget, cfg.residual_tol, shift, &mut rng)?;
    let minus = run_power(|u| u * shift - apply(u), p, budget, cfg.residual_tol, shift, &mut rng)?;
    matvecs += plus.iterations + minus.iterations;

    let rho_plus = plus.value - shift;
    let rho_minus = shift - minus.value;
    let (u, rayleigh) = if rho_minus.abs() >= rho_plus.abs() {
        (minus.vector, rho_minus)
    } else {
        (plus.vector, rho_plus)
    };
    Ok(MagnitudeEstimate { u, rayleigh, matvecs })
}

/// Direction with `|v^T grad v| >= p (1 - beta) ||grad||_2` (w.h.p.).
pub fn afw_direction(op: &impl GradientOperator, cfg: &EigConfig) -> Result<Direction> {
    op.validate()?;
    let p = op.dim();
    let est = magnitude_oracle(|u| op.grad_apply(u), p, cfg)?;
    let v = est.u * (p as f64).sqrt();
    let rayleigh_inv = op.inverse_quadratic(&v);
    Ok(Direction {
        v,
        rayleigh_grad: p as f64 * est.rayleigh,
        rayleigh_inv,
        kind: OracleKind::Afw,
        matvecs: est.matvecs,
    })
}

/// Direction with `-v^T grad v >= -p (1 - beta) lambda_min(grad)` (w.h.p.).
///
/// Only `M-` is searched. Its power iteration runs on an adaptive budget of
/// `base * clamp(sqrt(C / |u^T grad u|), 1, 64)` and the result must certify
/// `v^T grad v < 0`, otherwise [`TmeError::NotDescent`] is returned.
pub fn fw_direction(op: &impl GradientOperator, cfg: &EigConfig) -> Result<Direction> {
    op.validate()?;
    cfg.validate()?;
    let p = op.dim();
    let mut rng = cfg.rng();
    let mut apply = |u: &DVector<f64>| op.grad_apply(u);
    let (c, mut matvecs) = estimate_norm(&mut apply, p, cfg, &mut rng)?;
    let shift = c / (1.0 - cfg.beta_tilde());
    let base = cfg.power_budget(p) as f64;

    let mut minus_op = |u: &DVector<f64>| u * shift - op.grad_apply(u);
    let mut it = PowerIteration::new(p, &mut rng);
    let mut limit = base;
    loop {
        let rho = shift - it.step(&mut minus_op)?;
        let ratio = if rho == 0.0 {
            FW_BUDGET_CAP
        } else {
            (c / rho.abs()).sqrt().clamp(1.0, FW_BUDGET_CAP)
        };
        limit = limit.max(base * ratio).min(base * FW_BUDGET_CAP);
        let done = rho < 0.0 && resolved(&it, rho, cfg.residual_tol);
        if done || it.iterations as f64 >= limit {
            break;
        }
    }
    let est = it.finish();
    matvecs += est.iterations;
    let rho = shift - est.value;
    if !(rho < 0.0) {
        return Err(TmeError::NotDescent {
            rayleigh: p as f64 * rho,
            matvecs,
        });
    }
    let v = est.vector * (p as f64).sqrt();
    let rayleigh_inv = op.inverse_quadratic(&v);
    Ok(Direction {
        v,
        rayleigh_grad: p as f64 * rho,
        rayleigh_inv,
        kind: OracleKind::Fw,
        matvecs,
    })
}

/// Direction with `|v^T grad v| / (v^T Q^{-1} v) >= (1 - beta) ||Q^{1/2} grad Q^{1/2}||_2`
/// (w.h.p.), searched through products with the geodesic gradient
/// `Q^{1/2} grad Q^{1/2}`. `sqrt_q` must be the symmetric square root of `Q`.
pub fn gafw_direction(op: &impl GradientOperator, sqrt_q: &SpdMatrix, cfg: &EigConfig) -> Result<Direction> {
    op.validate()?;
    let p = op.dim();
    if sqrt_q.dim() != p {
        return Err(TmeError::DimensionMismatch {
            expected: p,
            found: sqrt_q.dim(),
        });
    }
    let s = sqrt_q.as_matrix();
    let est = magnitude_oracle(|u| s * op.grad_apply(&(s * u)), p, cfg)?;
    let su = s * &est.u;
    let su_sq = su.norm_squared();
    let v = su * ((p as f64) / su_sq).sqrt();
    let rayleigh_grad = p as f64 * est.rayleigh / su_sq;
    let rayleigh_inv = op.inverse_quadratic(&v);
    Ok(Direction {
        v,
        rayleigh_grad,
        rayleigh_inv,
        kind: OracleKind::Gafw,
        matvecs: est.matvecs,
    })
}
