//! File formats: design and mechanism JSON, matrix and results CSV.
//!
//! Floating-point values are written in shortest round-trip form, so reading
//! a file back yields bit-identical numbers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::designs::{
    blocks_from_incidence, incidence_from_blocks, verify_design, DesignError, DesignParams, IncidenceMatrix,
};
use crate::mechanism::{MechanismError, MechanismSpec, TransitionMatrix};
use crate::simulation::{ComparisonRow, SimConfig, Summary, TrialRecord};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("declared parameters {declared} do not match the blocks, which give {actual}")]
    ParamsMismatch { declared: String, actual: DesignParams },
}

/// Design JSON, either as a block list with its parameters or as a dense
/// incidence matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesignDocument {
    Blocks {
        v: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<usize>,
        blocks: Vec<Vec<usize>>,
    },
    Dense {
        incidence: Vec<Vec<u8>>,
    },
}

impl DesignDocument {
    /// Block-list document with the verified parameters filled in.
    pub fn from_design(a: &IncidenceMatrix) -> Result<Self, DesignError> {
        let p = verify_design(a)?;
        Ok(DesignDocument::Blocks {
            v: p.v,
            b: Some(p.b),
            r: Some(p.r),
            k: Some(p.k),
            lambda: Some(p.lambda),
            blocks: blocks_from_incidence(a).blocks,
        })
    }

    /// Dense document; works for any incidence matrix, design or not.
    pub fn dense(a: &IncidenceMatrix) -> Self {
        DesignDocument::Dense { incidence: a.rows().map(<[u8]>::to_vec).collect() }
    }

    pub fn to_incidence(&self) -> Result<IncidenceMatrix, DesignError> {
        match self {
            DesignDocument::Blocks { v, blocks, .. } => incidence_from_blocks(blocks, *v),
            DesignDocument::Dense { incidence } => IncidenceMatrix::from_rows(incidence),
        }
    }

    /// Compares any declared `(b, r, k, lambda)` against the verified ones.
    pub fn check_declared(&self, actual: &DesignParams) -> Result<(), FormatError> {
        if let DesignDocument::Blocks { b, r, k, lambda, .. } = self {
            let declared = [(*b, actual.b), (*r, actual.r), (*k, actual.k), (*lambda, actual.lambda)];
            if declared.iter().any(|(d, a)| d.is_some_and(|d| d != *a)) {
                return Err(FormatError::ParamsMismatch {
                    declared: format!("b={b:?} r={r:?} k={k:?} lambda={lambda:?}"),
                    actual: *actual,
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Mechanism JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismDocument {
    pub epsilon: f64,
    pub design: DesignDocument,
    pub p: f64,
    pub large: f64,
    pub small: f64,
    pub comm_bits: u32,
}

impl MechanismDocument {
    pub fn new(a: &IncidenceMatrix, spec: &MechanismSpec) -> Result<Self, DesignError> {
        Ok(MechanismDocument {
            epsilon: spec.epsilon.epsilon(),
            design: DesignDocument::from_design(a)?,
            p: spec.p,
            large: spec.large,
            small: spec.small,
            comm_bits: spec.comm_bits,
        })
    }
}

/// Summary JSON with the configuration echoed back.
#[derive(Debug, Serialize)]
pub struct SummaryDocument<'a> {
    #[serde(flatten)]
    pub summary: &'a Summary,
    pub config: &'a SimConfig,
}

/// Comma-separated rows, no header.
pub fn write_matrix_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a rectangular numeric CSV. Blank lines are skipped.
pub fn read_matrix_csv(text: &str) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| FormatError::Csv { line: idx + 1, message: format!("{cell:?}: {e}") })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(FormatError::Csv {
                    line: idx + 1,
                    message: format!("{} fields, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FormatError::Csv { line: 0, message: "no data".into() });
    }
    Ok(rows)
}

pub fn tpm_from_csv(text: &str, column_tol: f64) -> Result<TransitionMatrix, FormatError> {
    Ok(TransitionMatrix::from_rows(&read_matrix_csv(text)?, column_tol)?)
}

/// `trial,l2sq_error,seed` with a header line.
pub fn write_results_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial,l2sq_error,seed\n");
    for r in records {
        writeln!(out, "{},{},{}", r.trial, r.l2sq_error, r.seed).unwrap();
    }
    out
}

pub fn write_comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("protocol,v,b,k,mean_n_risk,std_error,theory_bound,comm_bits,minimax_optimal\n");
    for r in rows {
        let se = r.std_error.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.protocol, r.v, r.b, r.k, r.mean_n_risk, se, r.theory_bound, r.comm_bits, r.minimax_optimal
        )
        .unwrap();
    }
    out
}
