//! Monte Carlo harness for the empirical `n E||mu_hat - mu||^2` risk.
//!
//! Randomness is counter based: trial `t` of an experiment with master seed
//! `s` uses the first word of ChaCha8 stream `t` under key `s` as its seed, and
//! within a trial user `u` consumes words `4u..4u + 4` of the ChaCha8 stream
//! keyed by that seed (one draw for its input, one for its randomised output).
//! Results therefore do not depend on how trials are scheduled across workers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::designs::{
    complete_design_with_limits, fano_design, hadamard_design_with_limits, projective_design_with_limits,
    trivial_design, DesignError, IncidenceMatrix, Limits, Polarity,
};
use crate::estimation::{debias_matrix, empirical_output_law, estimate, minimax_bound, DebiasMatrix, EstimationError};
use crate::mechanism::{
    build_mechanism, induced_distribution, CumulativeTable, Distribution, MechanismError, PrivacyParam,
    TransitionMatrix,
};
use crate::optimality::verify_optimal;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not start worker pool: {0}")]
    WorkerPool(String),
}

/// A named design constructor with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    Fano,
    Trivial {
        v: usize,
    },
    Complete {
        v: usize,
        k: usize,
    },
    Hadamard {
        t: u32,
        polarity: Polarity,
    },
    Projective {
        p: u64,
        t: u32,
    },
    /// A design supplied directly, e.g. read from a file.
    Explicit {
        label: String,
        incidence: IncidenceMatrix,
    },
}

impl DesignSpec {
    pub fn build(&self, limits: &Limits) -> Result<IncidenceMatrix, DesignError> {
        match self {
            DesignSpec::Fano => Ok(fano_design()),
            DesignSpec::Trivial { v } => trivial_design(*v),
            DesignSpec::Complete { v, k } => complete_design_with_limits(*v, *k, limits),
            DesignSpec::Hadamard { t, polarity } => hadamard_design_with_limits(*t, *polarity, limits),
            DesignSpec::Projective { p, t } => projective_design_with_limits(*p, *t, limits),
            DesignSpec::Explicit { incidence, .. } => Ok(incidence.clone()),
        }
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignSpec::Fano => write!(f, "fano"),
            DesignSpec::Trivial { v } => write!(f, "trivial:{v}"),
            DesignSpec::Complete { v, k } => write!(f, "complete:{v}:{k}"),
            DesignSpec::Hadamard { t, polarity } => write!(f, "hadamard:{t}:{polarity}"),
            DesignSpec::Projective { p, t } => write!(f, "projective:{p}:{t}"),
            DesignSpec::Explicit { label, .. } => write!(f, "{label}"),
        }
    }
}

/// Parses `fano`, `trivial:V`, `complete:V:K`, `hadamard:T[:plus|minus]`
/// and `projective:P:T`.
impl FromStr for DesignSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<u64, String> {
            parts
                .get(i)
                .ok_or_else(|| format!("design {s:?} is missing parameter {i}"))?
                .parse::<u64>()
                .map_err(|e| format!("design {s:?}: {e}"))
        };
        let spec = match parts[0] {
            "fano" if parts.len() == 1 => DesignSpec::Fano,
            "trivial" if parts.len() == 2 => DesignSpec::Trivial { v: num(1)? as usize },
            "complete" if parts.len() == 3 => DesignSpec::Complete { v: num(1)? as usize, k: num(2)? as usize },
            "hadamard" if parts.len() == 2 || parts.len() == 3 => DesignSpec::Hadamard {
                t: num(1)? as u32,
                polarity: parts.get(2).map_or(Ok(Polarity::Plus), |p| p.parse())?,
            },
            "projective" if parts.len() == 3 => DesignSpec::Projective { p: num(1)?, t: num(2)? as u32 },
            _ => return Err(format!("unrecognised design {s:?}")),
        };
        Ok(spec)
    }
}

impl Serialize for DesignSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Input law for the simulated users.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLaw {
    Uniform,
    Explicit(Distribution),
}

impl InputLaw {
    pub fn resolve(&self, v: usize) -> Result<Distribution, SimulationError> {
        match self {
            InputLaw::Uniform => Ok(Distribution::uniform(v)),
            InputLaw::Explicit(mu) if mu.len() == v => Ok(mu.clone()),
            InputLaw::Explicit(mu) => Err(SimulationError::InvalidConfig(format!(
                "input law has {} entries but the design has v = {v} points",
                mu.len()
            ))),
        }
    }
}

/// Output weighting used to build the debiasing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DebiasChoice {
    /// The output law under uniform input, fixed for all trials.
    #[default]
    UniformInduced,
    /// The floored empirical output law of each trial.
    Empirical,
}

impl FromStr for DebiasChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform-induced" | "uniform" => Ok(DebiasChoice::UniformInduced),
            "empirical" => Ok(DebiasChoice::Empirical),
            other => Err(format!("unknown debiasing choice {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub design: DesignSpec,
    pub epsilon: f64,
    pub mu: InputLaw,
    /// Users per trial.
    pub n: u64,
    pub trials: usize,
    pub master_seed: u64,
    pub d_choice: DebiasChoice,
    /// Worker threads; 0 uses the global pool.
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub limits: Limits,
}

impl SimConfig {
    pub fn new(design: DesignSpec, epsilon: f64, n: u64, trials: usize, master_seed: u64) -> Self {
        SimConfig {
            design,
            epsilon,
            mu: InputLaw::Uniform,
            n,
            trials,
            master_seed,
            d_choice: DebiasChoice::UniformInduced,
            workers: 0,
            limits: Limits::default(),
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        if self.n == 0 {
            return Err(SimulationError::InvalidConfig("n must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(SimulationError::InvalidConfig("trials must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// `||mu_hat - mu||_2^2`
    pub l2sq_error: f64,
    pub seed: u64,
    #[serde(skip)]
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n: u64,
    pub trials: usize,
    /// `n` times the mean squared error.
    pub mean_n_risk: f64,
    /// Standard error of `mean_n_risk`; undefined for a single trial.
    pub std_error: Option<f64>,
    pub theory_bound: f64,
    pub z_gap: Option<f64>,
    pub error: Option<String>,
}

/// How a trial turns output counts into an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Debiaser {
    Fixed(DebiasMatrix),
    Empirical,
}

/// Seed for trial `trial` of an experiment.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng.next_u64()
}

/// The two uniform draws of user `user` in the trial seeded with `seed`,
/// computed by seeking directly to that user's counter position.
pub fn user_draws(seed: u64, user: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(4 * user as u128);
    (rng.gen(), rng.gen())
}

/// Simulates `n` users drawing inputs from `mu`, randomising them through `q`
/// and estimating `mu` from the output counts.
pub fn run_trial(
    q: &TransitionMatrix,
    debiaser: &Debiaser,
    mu: &Distribution,
    n: u64,
    seed: u64,
    trial: usize,
) -> Result<TrialRecord, SimulationError> {
    if mu.len() != q.inputs() {
        return Err(MechanismError::DimensionMismatch { expected: q.inputs(), found: mu.len() }.into());
    }
    let inputs = CumulativeTable::new(mu.probs());
    let columns: Vec<CumulativeTable> = (0..q.inputs()).map(|j| CumulativeTable::new(&q.column(j))).collect();
    let mut counts = vec![0u64; q.outputs()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let x = inputs.sample(rng.gen());
        let y = columns[x].sample(rng.gen());
        counts[y] += 1;
    }
    let est = match debiaser {
        Debiaser::Fixed(l) => estimate(l, &counts, n)?,
        Debiaser::Empirical => {
            let nu_hat = empirical_output_law(&counts, n)?;
            estimate(&debias_matrix(q, &nu_hat)?, &counts, n)?
        }
    };
    let l2sq_error = est.iter().zip(mu.probs()).map(|(e, m)| (e - m) * (e - m)).sum();
    Ok(TrialRecord { trial, l2sq_error, seed, estimate: est })
}

/// Mean, standard error and z-gap of `n * error` over the records.
pub fn summarise(records: &[TrialRecord], n: u64, theory_bound: f64) -> Summary {
    let t = records.len();
    let scaled: Vec<f64> = records.iter().map(|r| n as f64 * r.l2sq_error).collect();
    let mean = scaled.iter().sum::<f64>() / t as f64;
    let (std_error, error) = if t >= 2 {
        let var = scaled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (t - 1) as f64;
        (Some((var / t as f64).sqrt()), None)
    } else {
        (None, Some("standard error is undefined for a single trial".to_string()))
    };
    let z_gap = std_error.filter(|&se| se > 0.0).map(|se| (mean - theory_bound) / se);
    Summary { n, trials: t, mean_n_risk: mean, std_error, theory_bound, z_gap, error }
}

/// Everything `run_experiment` derives from a configuration before sampling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub incidence: IncidenceMatrix,
    pub tpm: TransitionMatrix,
    pub spec: crate::mechanism::MechanismSpec,
    pub mu: Distribution,
    pub debiaser: Debiaser,
    pub theory_bound: f64,
}

pub fn prepare(config: &SimConfig) -> Result<Prepared, SimulationError> {
    config.validate()?;
    let incidence = config.design.build(&config.limits)?;
    let eps = PrivacyParam::new(config.epsilon)?;
    let (tpm, spec) = build_mechanism(&incidence, eps)?;
    let v = spec.design.v;
    let mu = config.mu.resolve(v)?;
    let debiaser = match config.d_choice {
        DebiasChoice::UniformInduced => {
            let nu = induced_distribution(&tpm, &Distribution::uniform(v))?;
            Debiaser::Fixed(debias_matrix(&tpm, &nu)?)
        }
        DebiasChoice::Empirical => Debiaser::Empirical,
    };
    let theory_bound = minimax_bound(v, spec.design.k, eps, &mu)?;
    Ok(Prepared { incidence, tpm, spec, mu, debiaser, theory_bound })
}

pub fn run_experiment(config: &SimConfig) -> Result<(Summary, Vec<TrialRecord>), SimulationError> {
    let prepared = prepare(config)?;
    let run = || -> Result<Vec<TrialRecord>, SimulationError> {
        (0..config.trials)
            .into_par_iter()
            .map(|t| {
                run_trial(
                    &prepared.tpm,
                    &prepared.debiaser,
                    &prepared.mu,
                    config.n,
                    trial_seed(config.master_seed, t),
                    t,
                )
            })
            .collect()
    };
    let records = if config.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| SimulationError::WorkerPool(e.to_string()))?
            .install(run)?
    };
    Ok((summarise(&records, config.n, prepared.theory_bound), records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub protocol: String,
    pub v: usize,
    pub b: usize,
    pub k: usize,
    pub mean_n_risk: f64,
    pub std_error: Option<f64>,
    pub theory_bound: f64,
    pub comm_bits: u32,
    pub minimax_optimal: bool,
}

/// Runs each configuration and tabulates empirical and theoretical risk,
/// communication cost, and the verifier's verdict.
pub fn compare_protocols(configs: &[SimConfig]) -> Result<Vec<ComparisonRow>, SimulationError> {
    let first = configs.first().ok_or_else(|| SimulationError::InvalidConfig("no protocols to compare".into()))?;
    for c in &configs[1..] {
        if c.epsilon != first.epsilon || c.mu != first.mu || c.n != first.n || c.trials != first.trials {
            return Err(SimulationError::InvalidConfig(format!(
                "{} and {} differ in epsilon, input law, n or trials",
                first.design, c.design
            )));
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut v_seen = None;
    for c in configs {
        let prepared = prepare(c)?;
        let v = prepared.spec.design.v;
        if *v_seen.get_or_insert(v) != v {
            return Err(SimulationError::InvalidConfig(format!(
                "{} has v = {v}, expected {}",
                c.design,
                v_seen.unwrap()
            )));
        }
        let (summary, _) = run_experiment(c)?;
        let verdict = verify_optimal(&prepared.tpm, prepared.spec.epsilon);
        rows.push(ComparisonRow {
            protocol: c.design.to_string(),
            v,
            b: prepared.spec.design.b,
            k: prepared.spec.design.k,
            mean_n_risk: summary.mean_n_risk,
            std_error: summary.std_error,
            theory_bound: summary.theory_bound,
            comm_bits: prepared.spec.comm_bits,
            minimax_optimal: verdict.is_minimax_optimal,
        });
    }
    Ok(rows)
}
