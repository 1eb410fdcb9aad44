//! Block-design randomised response for locally differentially private
//! distribution estimation.
//!
//! The crate covers the whole life cycle of a binary-structured local
//! randomiser:
//!
//! - [`designs`] builds and certifies balanced incomplete block designs
//!   (trivial, complete, Sylvester-Hadamard and projective-geometry
//!   constructions).
//! - [`mechanism`] turns a design and a privacy budget into a transition
//!   probability matrix and evaluates the subset-size objective.
//! - [`estimation`] builds the unbiased debiasing matrix and the exact
//!   minimax-risk quantities.
//! - [`optimality`] decides whether an arbitrary transition matrix meets every
//!   necessary condition for minimax optimality and extracts its design.
//! - [`simulation`] is a deterministic Monte Carlo harness that reproduces the
//!   theoretical risk.
//! - [`formats`] holds the JSON and CSV file formats shared with the CLI.
//!
//! ```
//! use ldpbd::{designs, mechanism, estimation, PrivacyParam};
//!
//! let fano = designs::fano_design();
//! let eps = PrivacyParam::from_exp(4.0 / 3.0).unwrap();
//! let (tpm, spec) = mechanism::build_mechanism(&fano, eps).unwrap();
//! assert_eq!(spec.design.k, 3);
//!
//! let uniform = mechanism::Distribution::uniform(7);
//! let bound = estimation::minimax_bound(7, 3, eps, &uniform).unwrap();
//! assert!((bound - 1728.0 / 7.0).abs() < 1e-9);
//! # let _ = tpm;
//! ```

pub mod designs;
pub mod estimation;
pub mod formats;
mod linalg;
pub mod mechanism;
pub mod optimality;
pub mod simulation;

pub use designs::{BlockList, DesignError, DesignParams, IncidenceMatrix, Limits, Polarity};
pub use estimation::{DebiasMatrix, EstimationError, RiskConstants};
pub use mechanism::{Distribution, MechanismError, MechanismSpec, PrivacyParam, TransitionMatrix};
pub use optimality::{VerifierReport, VerifyOptions};
pub use simulation::{DebiasChoice, DesignSpec, SimConfig, SimulationError, Summary, TrialRecord};

/// Equalities that hold by construction (column sums, induced laws).
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Floating comparisons between two independently derived quantities.
pub const DERIVED_TOL: f64 = 1e-10;
