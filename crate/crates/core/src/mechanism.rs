//! Block-design randomised response: transition matrices, induced output
//! laws, sampling, and the subset-size objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::designs::{verify_design, DesignError, DesignParams, IncidenceMatrix};
use crate::STRUCTURAL_TOL;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechanismError {
    #[error("epsilon must be finite and positive, got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("transition matrix is empty")]
    EmptyMatrix,
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("column {col} sums to {sum}, not 1")]
    ColumnSum { col: usize, sum: f64 },
    #[error("column {col} has {found} entries, expected {expected}")]
    RaggedColumns { col: usize, found: usize, expected: usize },
    #[error("entry ({row}, {col}) is zero, the privacy ratio is unbounded")]
    ZeroEntry { row: usize, col: usize },
    #[error("dimension mismatch: expected length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("not a probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("subset size k = {k} is outside 1..={max} for v = {v}")]
    SubsetSize { v: usize, k: usize, max: usize },
    #[error("need v > 2 inputs, got v = {v}")]
    TooFewInputs { v: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("component {index} of the output law is zero")]
    ZeroProbability { index: usize },
    #[error("uniform draw {0} is outside [0, 1)")]
    DrawOutOfRange(f64),
    #[error("design points do not all lie in the same number of blocks")]
    NonConstantColumnWeight,
}

/// Privacy budget `epsilon` together with `e^epsilon` and `e^epsilon - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParam {
    epsilon: f64,
    e_eps: f64,
    e_eps_m1: f64,
}

impl PrivacyParam {
    pub fn new(epsilon: f64) -> Result<Self, MechanismError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(MechanismError::InvalidEpsilon(epsilon));
        }
        Ok(PrivacyParam { epsilon, e_eps: epsilon.exp(), e_eps_m1: epsilon.exp_m1() })
    }

    /// Builds the parameter from the likelihood ratio `e^epsilon` directly,
    /// so ratios such as 2 or 4/3 are represented without a log/exp round trip.
    pub fn from_exp(e_eps: f64) -> Result<Self, MechanismError> {
        if !(e_eps.is_finite() && e_eps > 1.0) {
            return Err(MechanismError::InvalidEpsilon(e_eps.ln()));
        }
        Ok(PrivacyParam { epsilon: e_eps.ln(), e_eps, e_eps_m1: e_eps - 1.0 })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn e_eps(&self) -> f64 {
        self.e_eps
    }

    pub fn e_eps_m1(&self) -> f64 {
        self.e_eps_m1
    }
}

/// Column-stochastic `b x v` matrix with `Q[i][j] = Pr[output i | input j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    q: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Validates nonnegative finite entries and column sums within `1e-12`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self, MechanismError> {
        Self::with_tolerance(entries, STRUCTURAL_TOL)
    }

    /// Like [`TransitionMatrix::new`] with a caller-chosen column-sum tolerance.
    pub fn with_tolerance(entries: DMatrix<f64>, column_tol: f64) -> Result<Self, MechanismError> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(MechanismError::EmptyMatrix);
        }
        for ((row, col), &value) in
            entries.iter().enumerate().map(|(idx, x)| ((idx % entries.nrows(), idx / entries.nrows()), x))
        {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(MechanismError::InvalidEntry { row, col, value });
            }
        }
        for (col, column) in entries.column_iter().enumerate() {
            let sum: f64 = column.iter().sum();
            if (sum - 1.0).abs() > column_tol {
                return Err(MechanismError::ColumnSum { col, sum });
            }
        }
        Ok(TransitionMatrix { q: entries })
    }

    /// Row-major construction: `rows[i][j] = Q[i][j]`.
    pub fn from_rows(rows: &[Vec<f64>], column_tol: f64) -> Result<Self, MechanismError> {
        let b = rows.len();
        let v = rows.first().map_or(0, Vec::len);
        if b == 0 || v == 0 {
            return Err(MechanismError::EmptyMatrix);
        }
        if let Some((_, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != v) {
            return Err(MechanismError::DimensionMismatch { expected: v, found: row.len() });
        }
        Self::with_tolerance(DMatrix::from_fn(b, v, |i, j| rows[i][j]), column_tol)
    }

    /// Number of outputs `b`.
    pub fn outputs(&self) -> usize {
        self.q.nrows()
    }

    /// Number of inputs `v`.
    pub fn inputs(&self) -> usize {
        self.q.ncols()
    }

    pub fn get(&self, output: usize, input: usize) -> f64 {
        self.q[(output, input)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn column(&self, input: usize) -> Vec<f64> {
        self.q.column(input).iter().copied().collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.q.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Parameters of a block-design randomiser built by [`build_mechanism`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismSpec {
    pub design: DesignParams,
    pub epsilon: PrivacyParam,
    /// Normalisation `1 / (r (e^eps - 1) + b)`.
    pub p: f64,
    /// `1 / (v + k (e^eps - 1))`; equals `p b / v`.
    pub p0: f64,
    pub large: f64,
    pub small: f64,
    pub comm_bits: u32,
}

/// A probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Nonnegative entries summing to one within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self, MechanismError> {
        Self::check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STRUCTURAL_TOL {
            return Err(MechanismError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Distribution { probs })
    }

    /// Normalises nonnegative weights with a positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, MechanismError> {
        Self::check_entries(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(MechanismError::InvalidDistribution("weights sum to zero".into()));
        }
        Ok(Distribution { probs: weights.into_iter().map(|w| w / sum).collect() })
    }

    fn check_entries(probs: &[f64]) -> Result<(), MechanismError> {
        if probs.is_empty() {
            return Err(MechanismError::InvalidDistribution("empty support".into()));
        }
        if let Some(x) = probs.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(MechanismError::InvalidDistribution(format!("entry {x} is not a nonnegative number")));
        }
        Ok(())
    }

    pub fn uniform(m: usize) -> Self {
        Distribution { probs: vec![1.0 / m as f64; m] }
    }

    pub fn point_mass(m: usize, at: usize) -> Self {
        let mut probs = vec![0.0; m];
        probs[at] = 1.0;
        Distribution { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `||mu||_2^2`
    pub fn norm_sq(&self) -> f64 {
        self.probs.iter().map(|x| x * x).sum()
    }
}

/// Builds the block-design randomiser `Q = p (A (e^eps - 1) + J')`.
pub fn build_mechanism(
    a: &IncidenceMatrix,
    eps: PrivacyParam,
) -> Result<(TransitionMatrix, MechanismSpec), MechanismError> {
    let design = verify_design(a)?;
    let DesignParams { v, b, r, k, .. } = design;
    let p = 1.0 / (r as f64 * eps.e_eps_m1() + b as f64);
    let p0 = 1.0 / (v as f64 + k as f64 * eps.e_eps_m1());
    let large = p * eps.e_eps();
    let small = p;
    let q = DMatrix::from_fn(b, v, |i, j| if a.get(i, j) == 1 { large } else { small });
    let spec = MechanismSpec { design, epsilon: eps, p, p0, large, small, comm_bits: design.comm_bits() };
    Ok((TransitionMatrix::new(q)?, spec))
}

/// The same two-level randomiser for any zero-one position matrix whose
/// points all lie in `r` blocks, without requiring pair balance.
///
/// Useful for producing non-optimal inputs to the verifier.
pub fn binary_randomiser(a: &IncidenceMatrix, eps: PrivacyParam) -> Result<TransitionMatrix, MechanismError> {
    let col_sums = a.column_sums();
    let r = col_sums[0];
    if col_sums.iter().any(|&c| c != r) {
        return Err(MechanismError::NonConstantColumnWeight);
    }
    let p = 1.0 / (r as f64 * eps.e_eps_m1() + a.b() as f64);
    let large = p * eps.e_eps();
    TransitionMatrix::new(DMatrix::from_fn(a.b(), a.v(), |i, j| if a.get(i, j) == 1 { large } else { p }))
}

/// Largest within-row ratio `max_j Q[i][j] / min_j Q[i][j]` over all outputs.
pub fn ldp_ratio(q: &TransitionMatrix) -> Result<f64, MechanismError> {
    let m = q.as_matrix();
    let mut worst = 1.0f64;
    for (row, values) in m.row_iter().enumerate() {
        let (mut lo, mut lo_col, mut hi) = (f64::INFINITY, 0, 0.0f64);
        for (col, &x) in values.iter().enumerate() {
            if x < lo {
                lo = x;
                lo_col = col;
            }
            hi = hi.max(x);
        }
        if lo <= 0.0 {
            return Err(MechanismError::ZeroEntry { row, col: lo_col });
        }
        worst = worst.max(hi / lo);
    }
    Ok(worst)
}

/// Output law `nu = Q mu`.
pub fn induced_distribution(q: &TransitionMatrix, mu: &Distribution) -> Result<Distribution, MechanismError> {
    if mu.len() != q.inputs() {
        return Err(MechanismError::DimensionMismatch { expected: q.inputs(), found: mu.len() });
    }
    let m = q.as_matrix();
    let probs = (0..q.outputs()).map(|i| mu.probs().iter().enumerate().map(|(j, w)| m[(i, j)] * w).sum()).collect();
    Ok(Distribution { probs })
}

fn check_subset_size(v: usize, k: usize) -> Result<(), MechanismError> {
    if v < 2 || k < 1 || k >= v {
        return Err(MechanismError::SubsetSize { v, k, max: v.saturating_sub(1) });
    }
    Ok(())
}

/// `tr(Q' D^-1 Q)` under uniform input for any design with block size `k`:
/// `v^2 (k (e^{2 eps} - 1) + v) / (k (e^eps - 1) + v)^2`.
pub fn trace_objective(v: usize, k: usize, eps: PrivacyParam) -> Result<f64, MechanismError> {
    check_subset_size(v, k)?;
    Ok(trace_objective_real(v as f64, k as f64, eps))
}

pub(crate) fn trace_objective_real(v: f64, k: f64, eps: PrivacyParam) -> f64 {
    let em1 = eps.e_eps_m1();
    let denom = k * em1 + v;
    v * v * (k * em1 * (eps.e_eps() + 1.0) + v) / (denom * denom)
}

/// Subset size `q` maximising [`trace_objective`]: the better of the floor and
/// ceiling of `v / (e^eps + 1)` (floor at least 1), floor winning ties.
pub fn optimal_subset_size(v: usize, eps: PrivacyParam) -> Result<usize, MechanismError> {
    if v <= 2 {
        return Err(MechanismError::TooFewInputs { v });
    }
    let x = v as f64 / (eps.e_eps() + 1.0);
    let floor = (x.floor() as usize).max(1);
    let ceil = (x.ceil() as usize).clamp(1, v - 1);
    if floor == ceil {
        return Ok(floor);
    }
    let f_floor = trace_objective(v, floor, eps)?;
    let f_ceil = trace_objective(v, ceil, eps)?;
    Ok(if f_floor >= f_ceil { floor } else { ceil })
}

/// Inverse-CDF sampler over a finite support. Shared by input sampling and
/// output randomisation.
#[derive(Debug, Clone)]
pub struct CumulativeTable {
    cumulative: Vec<f64>,
}

impl CumulativeTable {
    pub fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        CumulativeTable { cumulative }
    }

    /// First index whose cumulative mass exceeds `draw`. A draw beyond the
    /// accumulated total (round-off) maps to the last outcome with mass.
    pub fn sample(&self, draw: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= draw);
        if idx < self.cumulative.len() {
            return idx;
        }
        let last = *self.cumulative.last().expect("nonempty table");
        self.cumulative.iter().position(|&c| c == last).unwrap_or(self.cumulative.len() - 1)
    }
}

/// Randomises input `input` with a uniform draw in `[0, 1)` by walking down
/// column `input` of `Q`.
pub fn sample_output(q: &TransitionMatrix, input: usize, draw: f64) -> Result<usize, MechanismError> {
    if input >= q.inputs() {
        return Err(MechanismError::IndexOutOfRange { index: input, len: q.inputs() });
    }
    if !(0.0..1.0).contains(&draw) {
        return Err(MechanismError::DrawOutOfRange(draw));
    }
    Ok(CumulativeTable::new(&q.column(input)).sample(draw))
}

/// `Q' diag(1 / nu) Q`.
pub fn gram_matrix(q: &TransitionMatrix, nu: &Distribution) -> Result<DMatrix<f64>, MechanismError> {
    if nu.len() != q.outputs() {
        return Err(MechanismError::DimensionMismatch { expected: q.outputs(), found: nu.len() });
    }
    if let Some(index) = nu.probs().iter().position(|&x| x <= 0.0) {
        return Err(MechanismError::ZeroProbability { index });
    }
    let weights: Vec<f64> = nu.probs().iter().map(|x| 1.0 / x).collect();
    Ok(weighted_gram(q, &weights))
}

/// `Q' diag(w) Q`, symmetric by construction.
pub(crate) fn weighted_gram(q: &TransitionMatrix, weights: &[f64]) -> DMatrix<f64> {
    let m = q.as_matrix();
    let v = q.inputs();
    let mut g = DMatrix::zeros(v, v);
    for a in 0..v {
        for c in a..v {
            let s: f64 = (0..q.outputs()).map(|i| m[(i, a)] * weights[i] * m[(i, c)]).sum();
            g[(a, c)] = s;
            g[(c, a)] = s;
        }
    }
    g
}
