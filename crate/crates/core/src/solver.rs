//! Direct minimization of the illumination loss.
//!
//! Setting the gradient of `Σ a_p (t_p − t̃_p)² + λ tᵀLt` to zero gives the
//! symmetric positive definite system `(diag(a) + λL) t = a ⊙ t̃`, solved here
//! with unpreconditioned conjugate gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::AttentionMap;
use crate::laplacian::{check_dim, SparseAffinity, DEFAULT_LAMBDA};
use crate::prior::{IlluminationMap, DEFAULT_T_MIN};
use crate::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 2000;
pub const DEFAULT_ATTENTION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    /// Relative residual `‖A·x − b‖ / ‖b‖` at which to stop.
    pub tolerance: f64,
    pub t_min: f64,
    /// Attention weights are raised to at least this value before solving.
    pub attention_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            t_min: DEFAULT_T_MIN,
            attention_floor: DEFAULT_ATTENTION_FLOOR,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("lambda", self.lambda, self.lambda >= 0.0 && self.lambda.is_finite()),
            ("tolerance", self.tolerance, self.tolerance > 0.0),
            ("max_iterations", self.max_iterations as f64, self.max_iterations >= 1),
            ("t_min", self.t_min, self.t_min > 0.0 && self.t_min < 1.0),
            (
                "attention_floor",
                self.attention_floor,
                self.attention_floor > 0.0 && self.attention_floor <= 1.0,
            ),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients from a zero initial guess.
pub fn cg_solve(
    matvec: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<CgOutcome> {
    cg_solve_from(matvec, rhs, vec![0.0; rhs.len()], tolerance, max_iterations)
}

/// Conjugate gradients starting from `x0`. The operator must be symmetric
/// positive definite; a non-positive curvature `pᵀAp` is reported as a
/// non-finite failure.
pub fn cg_solve_from(
    mut matvec: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    x0: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<CgOutcome> {
    let n = rhs.len();
    check_dim("initial guess vs rhs", x0.len(), n)?;
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conjugate gradient rhs"));
    }
    let rhs_norm = libm::sqrt(dot(rhs, rhs));
    if rhs_norm == 0.0 {
        return Ok(CgOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = x0;
    let mut ap = vec![0.0; n];
    matvec(&x, &mut ap);
    let mut r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut residual = libm::sqrt(rr) / rhs_norm;
    let mut iterations = 0;
    while residual > tolerance {
        if iterations == max_iterations {
            return Err(Error::NotConverged {
                iterations,
                residual,
            });
        }
        matvec(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) || !curvature.is_finite() {
            return Err(Error::NonFinite("conjugate gradient curvature"));
        }
        let alpha = rr / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::NonFinite("conjugate gradient residual"));
        }
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        residual = libm::sqrt(rr) / rhs_norm;
        iterations += 1;
    }
    Ok(CgOutcome {
        solution: x,
        iterations,
        relative_residual: residual,
    })
}

/// Result of [`refine_illumination_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    /// Solution projected into `[t_min, 1]`.
    pub illumination: IlluminationMap,
    /// Solution of the linear system before projection.
    pub unclamped: IlluminationMap,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `(diag(a) + λL) t = a ⊙ t̃` and projects the result into
/// `[t_min, 1]`.
pub fn refine_illumination(
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    attention: Option<&AttentionMap>,
    cfg: &SolverConfig,
) -> Result<IlluminationMap> {
    refine_illumination_detailed(t_tilde, lap, attention, cfg).map(|r| r.illumination)
}

pub fn refine_illumination_detailed(
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    attention: Option<&AttentionMap>,
    cfg: &SolverConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    let n = t_tilde.len();
    check_dim("target vs laplacian", n, lap.dimension())?;
    let weights: Vec<f64> = match attention {
        Some(att) => {
            check_dim("target vs attention", n, att.len())?;
            att.values()
                .iter()
                .map(|&a| a.max(cfg.attention_floor))
                .collect()
        }
        None => vec![1.0; n],
    };
    let rhs: Vec<f64> = weights
        .iter()
        .zip(t_tilde.values())
        .map(|(a, t)| a * t)
        .collect();
    let lambda = cfg.lambda;
    let operator = |x: &[f64], y: &mut [f64]| {
        lap.matvec_into(x, y);
        for i in 0..x.len() {
            y[i] = weights[i] * x[i] + lambda * y[i];
        }
    };
    let outcome = cg_solve_from(
        operator,
        &rhs,
        t_tilde.values().to_vec(),
        cfg.tolerance,
        cfg.max_iterations,
    )?;
    let unclamped = IlluminationMap::new(t_tilde.width(), t_tilde.height(), outcome.solution)?;
    Ok(Refinement {
        illumination: unclamped.clamped(cfg.t_min),
        unclamped,
        iterations: outcome.iterations,
        relative_residual: outcome.relative_residual,
    })
}
