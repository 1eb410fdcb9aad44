//! Unbiased linear debiasing and exact minimax-risk quantities.
//!
//! For a randomiser `Q` and a positive output weighting `D`, the estimator
//! `L = (Q' D^-1 Q)^-1 Q' D^-1` satisfies `L Q = I` whatever `D` is; taking
//! `D = diag(nu)` with `nu` the output law attains the risk bound.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dense_inverse, fit_identity_plus_ones, identity_plus_ones_inverse};
use crate::mechanism::{trace_objective, weighted_gram, Distribution, MechanismError, PrivacyParam, TransitionMatrix};
use crate::STRUCTURAL_TOL;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("Gram matrix is singular (reciprocal condition estimate {rcond:e})")]
    SingularGram { rcond: f64 },
    #[error("counts sum to {sum}, expected n = {n}")]
    CountMismatch { sum: u64, n: u64 },
    #[error("expected {expected} entries, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weight {index} is {value}, weights must be positive and finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("trace objective {f} does not exceed v = {v}")]
    NonPositiveGap { f: f64, v: usize },
}

/// `v x b` linear estimator with `L Q = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasMatrix {
    l: DMatrix<f64>,
}

impl DebiasMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn inputs(&self) -> usize {
        self.l.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.l.ncols()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.l.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Exact risk constants of a design with block size `k` at privacy level
/// `eps`, under uniform input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConstants {
    pub v: usize,
    pub k: usize,
    pub epsilon: f64,
    /// Trace objective at `k`.
    pub f_q: f64,
    pub a_q: f64,
    pub b_q: f64,
    /// Gram eigenvalue of multiplicity `v - 1`.
    pub eig_small: f64,
    /// Gram eigenvalue on the all-ones vector.
    pub eig_large: f64,
    pub trace_inv: f64,
    pub minimax_n_risk: f64,
}

fn check_weights(weights: &[f64]) -> Result<(), EstimationError> {
    match weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        Some(index) => Err(EstimationError::InvalidWeight { index, value: weights[index] }),
        None => Ok(()),
    }
}

/// Inverse of a Gram matrix: closed form when it has the `a I + b J` shape,
/// partial-pivoting elimination otherwise.
fn gram_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>, EstimationError> {
    let (a, b, residual) = fit_identity_plus_ones(g);
    let scale = g.abs().max();
    if residual <= STRUCTURAL_TOL * scale && a > STRUCTURAL_TOL * scale && a + g.nrows() as f64 * b > 0.0 {
        return Ok(identity_plus_ones_inverse(a, b, g.nrows()));
    }
    dense_gram_inverse(g)
}

fn dense_gram_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>, EstimationError> {
    dense_inverse(g).map_err(|rcond| EstimationError::SingularGram { rcond })
}

/// Debiasing matrix for output law `nu`.
pub fn debias_matrix(q: &TransitionMatrix, nu: &Distribution) -> Result<DebiasMatrix, EstimationError> {
    if nu.len() != q.outputs() {
        return Err(EstimationError::DimensionMismatch { expected: q.outputs(), found: nu.len() });
    }
    if let Some(index) = nu.probs().iter().position(|&x| x <= 0.0) {
        return Err(MechanismError::ZeroProbability { index }.into());
    }
    let weights: Vec<f64> = nu.probs().iter().map(|x| 1.0 / x).collect();
    debias_with_weights(q, &weights)
}

/// `L = (Q' W Q)^-1 Q' W` for a positive diagonal weighting `W`.
pub fn debias_with_weights(q: &TransitionMatrix, weights: &[f64]) -> Result<DebiasMatrix, EstimationError> {
    if weights.len() != q.outputs() {
        return Err(EstimationError::DimensionMismatch { expected: q.outputs(), found: weights.len() });
    }
    check_weights(weights)?;
    let g = weighted_gram(q, weights);
    let g_inv = gram_inverse(&g)?;
    let m = q.as_matrix();
    let weighted_t = DMatrix::from_fn(q.inputs(), q.outputs(), |j, i| m[(i, j)] * weights[i]);
    Ok(DebiasMatrix { l: g_inv * weighted_t })
}

/// Plug-in output law from observed counts, floored at `1 / (10 n b)` so that
/// every component stays positive, then renormalised.
pub fn empirical_output_law(counts: &[u64], n: u64) -> Result<Distribution, EstimationError> {
    check_counts(counts, n)?;
    let floor = 1.0 / (10.0 * n as f64 * counts.len() as f64);
    let weights = counts.iter().map(|&c| (c as f64 / n as f64).max(floor)).collect();
    Ok(Distribution::from_weights(weights)?)
}

fn check_counts(counts: &[u64], n: u64) -> Result<(), EstimationError> {
    let sum: u64 = counts.iter().sum();
    if n == 0 || sum != n {
        return Err(EstimationError::CountMismatch { sum, n });
    }
    Ok(())
}

/// Unbiased estimate `L (counts / n)`. Components may be negative.
pub fn estimate(l: &DebiasMatrix, counts: &[u64], n: u64) -> Result<Vec<f64>, EstimationError> {
    if counts.len() != l.outputs() {
        return Err(EstimationError::DimensionMismatch { expected: l.outputs(), found: counts.len() });
    }
    check_counts(counts, n)?;
    let n = n as f64;
    Ok(l.l.row_iter().map(|row| row.iter().zip(counts).map(|(w, &c)| w * c as f64).sum::<f64>() / n).collect())
}

/// Euclidean projection onto the probability simplex. A separate
/// post-processing step: the risk formulas describe the unprojected estimate.
pub fn project_to_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        acc += u;
        let t = (acc - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&xi| (xi - theta).max(0.0)).collect()
}

/// `tr((Q' D^-1 Q)^-1)`, using the closed form when the Gram matrix has the
/// `a I + b J` shape.
pub fn trace_inverse_gram(q: &TransitionMatrix, nu: &Distribution) -> Result<f64, EstimationError> {
    let g = crate::mechanism::gram_matrix(q, nu)?;
    let (a, b, residual) = fit_identity_plus_ones(&g);
    let scale = g.abs().max();
    let v = g.nrows() as f64;
    if residual <= STRUCTURAL_TOL * scale && a > STRUCTURAL_TOL * scale && a + v * b > 0.0 {
        return Ok((v - 1.0) / a + 1.0 / (a + v * b));
    }
    Ok(dense_gram_inverse(&g)?.trace())
}

/// Same quantity through the dense inverse only.
pub fn trace_inverse_gram_dense(q: &TransitionMatrix, nu: &Distribution) -> Result<f64, EstimationError> {
    let g = crate::mechanism::gram_matrix(q, nu)?;
    Ok(dense_gram_inverse(&g)?.trace())
}

/// `a_q = p0^2 (e^eps - 1)^2 v k (v - k) / (v - 1)`, the small Gram
/// eigenvalue. Algebraically `(f(k) - v) / (v - 1)` without the cancellation.
fn small_eigenvalue(v: usize, k: usize, eps: PrivacyParam) -> f64 {
    let (vf, kf) = (v as f64, k as f64);
    let em1 = eps.e_eps_m1();
    let p0 = 1.0 / (vf + kf * em1);
    p0 * p0 * em1 * em1 * vf * kf * (vf - kf) / (vf - 1.0)
}

/// Lower bound on `n E||mu_hat - mu||^2`:
/// `(v - 1)^2 / (f(k) - v) + 1/v - ||mu||^2`.
pub fn minimax_bound(v: usize, k: usize, eps: PrivacyParam, mu: &Distribution) -> Result<f64, EstimationError> {
    let f = trace_objective(v, k, eps)?;
    if mu.len() != v {
        return Err(EstimationError::DimensionMismatch { expected: v, found: mu.len() });
    }
    let a = small_eigenvalue(v, k, eps);
    if a <= 0.0 || f <= v as f64 {
        return Err(EstimationError::NonPositiveGap { f, v });
    }
    let vf = v as f64;
    Ok((vf - 1.0) / a + 1.0 / vf - mu.norm_sq())
}

pub fn risk_constants(v: usize, k: usize, eps: PrivacyParam) -> Result<RiskConstants, EstimationError> {
    let f_q = trace_objective(v, k, eps)?;
    let a_q = small_eigenvalue(v, k, eps);
    if a_q <= 0.0 {
        return Err(EstimationError::NonPositiveGap { f: f_q, v });
    }
    let vf = v as f64;
    let b_q = 1.0 - a_q / vf;
    let trace_inv = (vf - 1.0) / a_q + 1.0 / vf;
    let minimax_n_risk = minimax_bound(v, k, eps, &Distribution::uniform(v))?;
    Ok(RiskConstants {
        v,
        k,
        epsilon: eps.epsilon(),
        f_q,
        a_q,
        b_q,
        eig_small: a_q,
        eig_large: vf,
        trace_inv,
        minimax_n_risk,
    })
}
