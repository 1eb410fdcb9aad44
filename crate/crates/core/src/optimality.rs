//! Minimax-optimality verifier for arbitrary transition matrices.
//!
//! A randomiser can only be minimax optimal if its matrix has two value
//! levels in ratio `e^eps`, every row carries the optimal number `q` of large
//! entries, and its weighted Gram matrix is `a_q I + b_q J`. When all of that
//! holds, the positions of the large entries form a block design with
//! `A'A = (r - lambda) I + lambda J`; [`verify_optimal`] checks each condition
//! and certifies the extracted design.

use serde::{Deserialize, Serialize};

use crate::designs::{verify_design, DesignError, DesignParams, IncidenceMatrix};
use crate::estimation::risk_constants;
use crate::linalg::fit_identity_plus_ones;
use crate::mechanism::{
    gram_matrix, induced_distribution, optimal_subset_size, Distribution, MechanismError, PrivacyParam,
    TransitionMatrix,
};

/// Relative tolerance for grouping entries into value levels.
pub const CLUSTER_TOL: f64 = 1e-9;
/// Absolute tolerance for the Gram structure and its coefficients.
pub const GRAM_TOL: f64 = 1e-9;
/// Absolute tolerance for rebuilding `Q` from the extracted design.
pub const RECONSTRUCTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimalityError {
    #[error("found a third value {value} besides {small} and {large}")]
    MoreThanTwoValues { small: f64, large: f64, value: f64 },
    #[error("entry ({row}, {col}) is {value}; all entries must be positive")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Two-level decomposition of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryStructure {
    pub large: f64,
    pub small: f64,
    /// `positions[i][j] == 1` where `Q[i][j]` is in the large level. All zero
    /// when the matrix has a single level.
    pub positions: Vec<Vec<u8>>,
}

impl BinaryStructure {
    pub fn row_weights(&self) -> Vec<usize> {
        self.positions.iter().map(|r| r.iter().map(|&x| x as usize).sum()).collect()
    }

    pub fn column_weights(&self) -> Vec<usize> {
        let v = self.positions.first().map_or(0, Vec::len);
        (0..v).map(|j| self.positions.iter().map(|r| r[j] as usize).sum()).collect()
    }
}

fn same_level(x: f64, level: f64, tol: f64) -> bool {
    (x - level).abs() <= tol * level.abs().max(x.abs())
}

/// Splits the entries of `q` into at most two levels, within relative
/// tolerance `tol`. Each level is reported as the mean of its members.
pub fn check_binary_structure(q: &TransitionMatrix, tol: f64) -> Result<BinaryStructure, OptimalityError> {
    let m = q.as_matrix();
    let (b, v) = (q.outputs(), q.inputs());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..b {
        for j in 0..v {
            let x = m[(i, j)];
            if x <= 0.0 {
                return Err(OptimalityError::NonPositiveEntry { row: i, col: j, value: x });
            }
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }

    if same_level(lo, hi, tol) {
        let mean = m.iter().sum::<f64>() / (b * v) as f64;
        return Ok(BinaryStructure { large: mean, small: mean, positions: vec![vec![0; v]; b] });
    }

    let mut positions = vec![vec![0u8; v]; b];
    let (mut lo_sum, mut lo_n, mut hi_sum, mut hi_n) = (0.0, 0usize, 0.0, 0usize);
    for (i, row) in positions.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let x = m[(i, j)];
            if same_level(x, hi, tol) {
                *cell = 1;
                hi_sum += x;
                hi_n += 1;
            } else if same_level(x, lo, tol) {
                lo_sum += x;
                lo_n += 1;
            } else {
                return Err(OptimalityError::MoreThanTwoValues { small: lo, large: hi, value: x });
            }
        }
    }
    Ok(BinaryStructure { large: hi_sum / hi_n as f64, small: lo_sum / lo_n as f64, positions })
}

/// `large / small` is 1 or `e^eps` within `1e-9` (relative).
pub fn check_ratio(large: f64, small: f64, eps: PrivacyParam) -> bool {
    if !(small > 0.0 && large >= small) {
        return false;
    }
    let ratio = large / small;
    (ratio - 1.0).abs() <= CLUSTER_TOL || (ratio - eps.e_eps()).abs() <= CLUSTER_TOL * eps.e_eps()
}

/// Design read off the positions of the large entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedDesign {
    pub incidence: IncidenceMatrix,
    pub params: DesignParams,
}

pub fn extract_design(positions: &[Vec<u8>]) -> Result<ExtractedDesign, DesignError> {
    let incidence = IncidenceMatrix::from_rows(positions)?;
    let params = verify_design(&incidence)?;
    Ok(ExtractedDesign { incidence, params })
}

/// Outcome of the Gram-structure test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramCheck {
    /// Fitted `a` in `G ~ a I + b J`.
    pub a: f64,
    /// Fitted `b`.
    pub b: f64,
    /// Largest entrywise deviation from the fit.
    pub residual: f64,
    /// `G = a I + b J` within tolerance.
    pub structural: bool,
    /// `(a_q, b_q)` for the row weight, when that weight is a valid subset size.
    pub expected_a: Option<f64>,
    pub expected_b: Option<f64>,
    pub passed: bool,
}

/// Tests `Q' D^-1 Q = a_q I + b_q J` with `D` the output law under uniform
/// input and `q = row_weight`. Entrywise comparison replaces an
/// eigendecomposition: for this matrix family the two are equivalent.
pub fn check_gram_condition(
    q: &TransitionMatrix,
    eps: PrivacyParam,
    row_weight: usize,
) -> Result<GramCheck, MechanismError> {
    let v = q.inputs();
    let nu = induced_distribution(q, &Distribution::uniform(v))?;
    let g = gram_matrix(q, &nu)?;
    let (a, b, residual) = fit_identity_plus_ones(&g);
    let structural = residual <= GRAM_TOL;
    let expected = risk_constants(v, row_weight, eps).ok().map(|rc| (rc.a_q, rc.b_q));
    let passed =
        structural && expected.is_some_and(|(ea, eb)| (a - ea).abs() <= GRAM_TOL && (b - eb).abs() <= GRAM_TOL);
    Ok(GramCheck {
        a,
        b,
        residual,
        structural,
        expected_a: expected.map(|e| e.0),
        expected_b: expected.map(|e| e.1),
        passed,
    })
}

/// One reason a matrix fails a necessary condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Failure {
    TooFewInputs { v: usize },
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    MoreThanTwoValues { value: f64 },
    Ratio { ratio: f64, expected: f64 },
    NonConstantRowWeight { min: usize, max: usize },
    SubsetSize { row_weight: usize, optimal: usize },
    NonConstantColumnWeight { min: usize, max: usize },
    Gram { structural: bool, a: f64, b: f64, expected_a: Option<f64>, expected_b: Option<f64> },
    GramUnavailable { reason: String },
    Design { reason: String },
}

/// Everything the verifier learned about a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub v: usize,
    pub b: usize,
    pub epsilon: f64,
    pub is_binary: bool,
    pub large: Option<f64>,
    pub small: Option<f64>,
    /// `ln(large / small)` when the matrix has two distinct levels.
    pub inferred_epsilon: Option<f64>,
    pub ratio_ok: bool,
    pub row_weight: Option<usize>,
    pub optimal_subset_size: Option<usize>,
    pub subset_size_ok: bool,
    pub column_weight: Option<usize>,
    pub gram_ok: bool,
    pub gram: Option<GramCheck>,
    /// Least-squares style fit of `A'A = c1 I + c2 J` on the position matrix.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub is_bibd: bool,
    pub design: Option<DesignParams>,
    pub lambda_extracted: Option<usize>,
    /// `b <= v`. Reported, never gates optimality.
    pub output_size_ok: bool,
    pub is_sbibd: bool,
    /// `Q = p (A (e^eps - 1) + J')` with `p` the small level, when the
    /// position matrix has constant column weight.
    pub reconstructs: Option<bool>,
    pub is_minimax_optimal: bool,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub cluster_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { cluster_tol: CLUSTER_TOL }
    }
}

pub fn verify_optimal(q: &TransitionMatrix, eps: PrivacyParam) -> VerifierReport {
    verify_optimal_with(q, eps, VerifyOptions::default())
}

pub fn verify_optimal_with(q: &TransitionMatrix, eps: PrivacyParam, opts: VerifyOptions) -> VerifierReport {
    let (b, v) = (q.outputs(), q.inputs());
    let mut report = VerifierReport {
        v,
        b,
        epsilon: eps.epsilon(),
        is_binary: false,
        large: None,
        small: None,
        inferred_epsilon: None,
        ratio_ok: false,
        row_weight: None,
        optimal_subset_size: None,
        subset_size_ok: false,
        column_weight: None,
        gram_ok: false,
        gram: None,
        c1: None,
        c2: None,
        is_bibd: false,
        design: None,
        lambda_extracted: None,
        output_size_ok: b <= v,
        is_sbibd: false,
        reconstructs: None,
        is_minimax_optimal: false,
        failures: Vec::new(),
    };

    match optimal_subset_size(v, eps) {
        Ok(q_opt) => report.optimal_subset_size = Some(q_opt),
        Err(_) => report.failures.push(Failure::TooFewInputs { v }),
    }

    let structure = match check_binary_structure(q, opts.cluster_tol) {
        Ok(s) => s,
        Err(OptimalityError::MoreThanTwoValues { value, .. }) => {
            report.failures.push(Failure::MoreThanTwoValues { value });
            return report;
        }
        Err(OptimalityError::NonPositiveEntry { row, col, value }) => {
            report.failures.push(Failure::NonPositiveEntry { row, col, value });
            return report;
        }
        Err(other) => unreachable!("binary structure check returned {other}"),
    };
    report.is_binary = true;
    report.large = Some(structure.large);
    report.small = Some(structure.small);
    if structure.large > structure.small {
        report.inferred_epsilon = Some((structure.large / structure.small).ln());
    }

    report.ratio_ok = check_ratio(structure.large, structure.small, eps);
    if !report.ratio_ok {
        report.failures.push(Failure::Ratio { ratio: structure.large / structure.small, expected: eps.e_eps() });
    }

    let rows = structure.row_weights();
    let (rmin, rmax) = min_max(&rows);
    if rmin == rmax {
        report.row_weight = Some(rmin);
        if let Some(q_opt) = report.optimal_subset_size {
            report.subset_size_ok = rmin == q_opt;
            if !report.subset_size_ok {
                report.failures.push(Failure::SubsetSize { row_weight: rmin, optimal: q_opt });
            }
        }
    } else {
        report.failures.push(Failure::NonConstantRowWeight { min: rmin, max: rmax });
    }

    let cols = structure.column_weights();
    let (cmin, cmax) = min_max(&cols);
    if cmin == cmax {
        report.column_weight = Some(cmin);
    } else {
        report.failures.push(Failure::NonConstantColumnWeight { min: cmin, max: cmax });
    }

    match report.row_weight {
        Some(k) => match check_gram_condition(q, eps, k) {
            Ok(check) => {
                report.gram_ok = check.passed;
                if !check.passed {
                    report.failures.push(Failure::Gram {
                        structural: check.structural,
                        a: check.a,
                        b: check.b,
                        expected_a: check.expected_a,
                        expected_b: check.expected_b,
                    });
                }
                report.gram = Some(check);
            }
            Err(e) => report.failures.push(Failure::GramUnavailable { reason: e.to_string() }),
        },
        None => report.failures.push(Failure::GramUnavailable { reason: "row weights are not constant".into() }),
    }

    let (c1, c2) = position_gram_fit(&structure.positions);
    report.c1 = Some(c1);
    report.c2 = Some(c2);

    match extract_design(&structure.positions) {
        Ok(extracted) => {
            report.is_bibd = true;
            report.design = Some(extracted.params);
            report.lambda_extracted = Some(extracted.params.lambda);
            report.is_sbibd = extracted.params.is_symmetric();
        }
        Err(e) => report.failures.push(Failure::Design { reason: e.to_string() }),
    }

    if report.column_weight.is_some() {
        let p = structure.small;
        let em1 = eps.e_eps_m1();
        let m = q.as_matrix();
        let worst = structure
            .positions
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &a)| (i, j, a)))
            .map(|(i, j, a)| (m[(i, j)] - p * (a as f64 * em1 + 1.0)).abs())
            .fold(0.0f64, f64::max);
        report.reconstructs = Some(worst <= RECONSTRUCTION_TOL);
    }

    report.is_minimax_optimal =
        report.is_binary && report.ratio_ok && report.subset_size_ok && report.gram_ok && report.is_bibd;
    report
}

fn min_max(xs: &[usize]) -> (usize, usize) {
    (xs.iter().copied().min().unwrap_or(0), xs.iter().copied().max().unwrap_or(0))
}

/// Fits `A'A = c1 I + c2 J`: `c2` is the mean off-diagonal pair count and
/// `c1` the mean diagonal minus `c2`.
fn position_gram_fit(positions: &[Vec<u8>]) -> (f64, f64) {
    let v = positions.first().map_or(0, Vec::len);
    let mut diag = 0usize;
    let mut off = 0usize;
    for row in positions {
        let w: usize = row.iter().map(|&x| x as usize).sum();
        diag += w;
        off += w * w - w;
    }
    let c2 = if v > 1 { off as f64 / (v * (v - 1)) as f64 } else { 0.0 };
    (diag as f64 / v as f64 - c2, c2)
}
