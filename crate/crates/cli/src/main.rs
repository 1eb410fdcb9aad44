//! `ldpbd`: build block designs and their randomised-response mechanisms,
//! compute exact risk, verify optimality of a transition matrix, and run
//! seeded Monte Carlo experiments.
//!
//! Exit codes: 0 on success (or an optimal verdict), 1 when a check fails on
//! well-formed input, 2 on usage or parse errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ldpbd::designs::verify_design;
use ldpbd::estimation::{debias_matrix, minimax_bound, risk_constants};
use ldpbd::formats::{
    tpm_from_csv, write_comparison_csv, write_matrix_csv, write_results_csv, DesignDocument, MechanismDocument,
    SummaryDocument,
};
use ldpbd::mechanism::{build_mechanism, induced_distribution, ldp_ratio, optimal_subset_size};
use ldpbd::optimality::verify_optimal;
use ldpbd::simulation::{compare_protocols, run_experiment, InputLaw};
use ldpbd::{
    DebiasChoice, DesignSpec, Distribution, IncidenceMatrix, Limits, MechanismError, Polarity, PrivacyParam, SimConfig,
    SimulationError,
};

/// Column-sum tolerance when reading a transition matrix from CSV.
const TPM_READ_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "ldpbd", version, about = "Block-design randomised response for private distribution estimation")]
struct Cli {
    /// Row cap for constructed designs.
    #[arg(long, global = true, env = "LDPBD_ROW_LIMIT")]
    row_limit: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct, verify or describe a block design.
    #[command(subcommand)]
    Design(DesignCommand),
    /// Build a mechanism or its debiasing matrix.
    #[command(subcommand)]
    Mech(MechCommand),
    /// Optimal block size for v inputs at privacy level epsilon.
    OptimalK {
        #[arg(long)]
        v: usize,
        #[arg(long)]
        epsilon: f64,
    },
    /// Exact risk constants of a block-design mechanism.
    Risk {
        #[arg(long)]
        v: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        epsilon: f64,
        /// `uniform` or a JSON file holding an array of probabilities.
        #[arg(long, default_value = "uniform")]
        mu: String,
    },
    /// Decide whether a transition matrix is minimax optimal.
    Verify {
        /// CSV file, one row per output.
        #[arg(long)]
        tpm: PathBuf,
        #[arg(long, required_unless_present = "infer_epsilon")]
        epsilon: Option<f64>,
        /// Use the largest within-row ratio of the matrix as e^epsilon.
        #[arg(long, conflicts_with = "epsilon")]
        infer_epsilon: bool,
    },
    /// Monte Carlo risk of one mechanism.
    Simulate {
        #[command(flatten)]
        design: DesignSource,
        #[command(flatten)]
        sim: SimArgs,
        /// Per-trial results CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo risk of several mechanisms side by side.
    Compare {
        /// Repeatable, e.g. `fano`, `trivial:7`, `complete:7:3`.
        #[arg(long = "design", required = true)]
        designs: Vec<String>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DesignCommand {
    /// Emit design JSON for a named construction.
    Build {
        #[command(flatten)]
        design: NamedDesign,
        /// Emit the dense incidence matrix instead of a block list.
        #[arg(long)]
        dense: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a design file and print its parameters.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Parameters plus derived facts about a design file.
    Info {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum MechCommand {
    /// Print the mechanism JSON; write the transition matrix CSV to --out.
    Build {
        #[command(flatten)]
        design: DesignSource,
        #[arg(long)]
        epsilon: f64,
        /// Transition matrix CSV, one row per output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the CSV instead of the JSON.
        #[arg(long)]
        csv: bool,
    },
    /// Print the debiasing matrix under uniform input as CSV.
    Debias {
        #[command(flatten)]
        design: DesignSource,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct NamedDesign {
    /// fano, trivial, complete, hadamard, projective, or a compact form such
    /// as `complete:7:3`.
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    v: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t: Option<u32>,
    #[arg(long)]
    p: Option<u64>,
    #[arg(long, default_value = "plus")]
    polarity: Polarity,
}

#[derive(Args)]
struct DesignSource {
    #[command(flatten)]
    named: NamedDesign,
    /// Design JSON file, as written by `design build`.
    #[arg(long, conflicts_with = "design")]
    design_file: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    epsilon: f64,
    /// `uniform` or a JSON file holding an array of probabilities.
    #[arg(long, default_value = "uniform")]
    mu: String,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 means one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "uniform-induced")]
    d_choice: DebiasChoice,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// An error together with the exit code it maps to.
enum CliError {
    Usage(anyhow::Error),
    Domain(anyhow::Error),
}

type CliResult = Result<ExitCode, CliError>;

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn domain(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Domain(e.into())
}

fn mechanism_err(e: MechanismError) -> CliError {
    match e {
        MechanismError::InvalidEpsilon(_) => usage(e),
        _ => domain(e),
    }
}

fn simulation_err(e: SimulationError) -> CliError {
    match e {
        SimulationError::InvalidConfig(_) | SimulationError::WorkerPool(_) => usage(e),
        SimulationError::Mechanism(MechanismError::InvalidEpsilon(_)) => usage(e),
        _ => domain(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let limits = cli.row_limit.map_or_else(Limits::default, Limits::with_max_rows);
    match run(cli.command, &limits) {
        Ok(code) => code,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, limits: &Limits) -> CliResult {
    match command {
        Command::Design(DesignCommand::Build { design, dense, out }) => design_build(&design, dense, out, limits),
        Command::Design(DesignCommand::Verify { input }) => design_verify(&input, false),
        Command::Design(DesignCommand::Info { input }) => design_verify(&input, true),
        Command::Mech(MechCommand::Build { design, epsilon, out, csv }) => {
            mech_build(&design, epsilon, out, csv, limits)
        }
        Command::Mech(MechCommand::Debias { design, epsilon, out }) => mech_debias(&design, epsilon, out, limits),
        Command::OptimalK { v, epsilon } => {
            let eps = privacy(epsilon)?;
            let q = optimal_subset_size(v, eps).map_err(usage)?;
            emit_json(&json!({ "q": q }), None)
        }
        Command::Risk { v, k, epsilon, mu } => {
            let eps = privacy(epsilon)?;
            let mut consts = risk_constants(v, k, eps).map_err(usage)?;
            let mu = input_law(&mu)?.resolve(v).map_err(usage)?;
            consts.minimax_n_risk = minimax_bound(v, k, eps, &mu).map_err(usage)?;
            emit_json(&consts, None)
        }
        Command::Verify { tpm, epsilon, infer_epsilon } => verify(&tpm, epsilon, infer_epsilon),
        Command::Simulate { design, sim, out } => {
            let config = sim_config(design.resolve(limits)?, &sim, limits)?;
            let (summary, records) = run_experiment(&config).map_err(simulation_err)?;
            if let Some(path) = out {
                write_file(&path, &write_results_csv(&records))?;
            }
            emit_json(&SummaryDocument { summary: &summary, config: &config }, None)
        }
        Command::Compare { designs, sim, format, out } => {
            let mut configs = Vec::with_capacity(designs.len());
            for name in &designs {
                let spec = name.parse::<DesignSpec>().map_err(|e: String| usage(anyhow!(e)))?;
                configs.push(sim_config(prebuilt(spec, limits)?, &sim, limits)?);
            }
            let rows = compare_protocols(&configs).map_err(simulation_err)?;
            let text = match format {
                Format::Csv => write_comparison_csv(&rows),
                Format::Json => to_json(&rows),
            };
            if let Some(path) = out {
                write_file(&path, &text)?;
            }
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn privacy(epsilon: f64) -> Result<PrivacyParam, CliError> {
    PrivacyParam::new(epsilon).map_err(usage)
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(domain)
}

fn to_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable output");
    text.push('\n');
    text
}

/// Prints `value` as JSON, or writes it to `out` when given.
fn emit_json<T: serde::Serialize + ?Sized>(value: &T, out: Option<&Path>) -> CliResult {
    let text = to_json(value);
    match out {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn input_law(mu: &str) -> Result<InputLaw, CliError> {
    if mu == "uniform" {
        return Ok(InputLaw::Uniform);
    }
    let text = read_input(Path::new(mu))?;
    let probs: Vec<f64> = serde_json::from_str(&text).with_context(|| format!("parsing {mu}")).map_err(usage)?;
    Ok(InputLaw::Explicit(Distribution::new(probs).map_err(usage)?))
}

impl NamedDesign {
    fn spec(&self) -> Result<DesignSpec, CliError> {
        let name =
            self.design.as_deref().ok_or_else(|| usage(anyhow!("one of --design or --design-file is required")))?;
        if name.contains(':') {
            return name.parse().map_err(|e: String| usage(anyhow!(e)));
        }
        fn need<T: Copy>(value: Option<T>, flag: &str, name: &str) -> Result<T, CliError> {
            value.ok_or_else(|| usage(anyhow!("--{flag} is required for the {name} design")))
        }
        Ok(match name {
            "fano" => DesignSpec::Fano,
            "trivial" => DesignSpec::Trivial { v: need(self.v, "v", name)? },
            "complete" => DesignSpec::Complete { v: need(self.v, "v", name)?, k: need(self.k, "k", name)? },
            "hadamard" => DesignSpec::Hadamard { t: need(self.t, "t", name)?, polarity: self.polarity },
            "projective" => DesignSpec::Projective { p: need(self.p, "p", name)?, t: need(self.t, "t", name)? },
            other => return Err(usage(anyhow!("unknown design {other:?}"))),
        })
    }
}

/// Builds a named design up front so that bad constructor arguments are
/// reported as usage errors, keeping the name as the label.
fn prebuilt(spec: DesignSpec, limits: &Limits) -> Result<DesignSpec, CliError> {
    let incidence = spec.build(limits).map_err(usage)?;
    Ok(DesignSpec::Explicit { label: spec.to_string(), incidence })
}

/// Reads a design file. Malformed files are usage errors; a well-formed
/// incidence matrix that is not a design is left for the caller to judge.
fn read_design_file(path: &Path) -> Result<(DesignDocument, IncidenceMatrix), CliError> {
    let doc = DesignDocument::from_json(&read_input(path)?).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    let incidence = doc.to_incidence().map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    Ok((doc, incidence))
}

impl DesignSource {
    fn resolve(&self, limits: &Limits) -> Result<DesignSpec, CliError> {
        match &self.design_file {
            Some(path) => {
                let (doc, incidence) = read_design_file(path)?;
                let params = verify_design(&incidence).map_err(domain)?;
                doc.check_declared(&params).map_err(domain)?;
                Ok(DesignSpec::Explicit { label: path.display().to_string(), incidence })
            }
            None => prebuilt(self.named.spec()?, limits),
        }
    }

    fn incidence(&self, limits: &Limits) -> Result<IncidenceMatrix, CliError> {
        self.resolve(limits)?.build(limits).map_err(domain)
    }
}

fn sim_config(design: DesignSpec, sim: &SimArgs, limits: &Limits) -> Result<SimConfig, CliError> {
    let mut config = SimConfig::new(design, sim.epsilon, sim.n, sim.trials, sim.seed);
    config.mu = input_law(&sim.mu)?;
    config.d_choice = sim.d_choice;
    config.workers = sim.workers;
    config.limits = *limits;
    Ok(config)
}

fn design_build(named: &NamedDesign, dense: bool, out: Option<PathBuf>, limits: &Limits) -> CliResult {
    let a = named.spec()?.build(limits).map_err(usage)?;
    let doc = if dense { DesignDocument::dense(&a) } else { DesignDocument::from_design(&a).map_err(usage)? };
    emit_json(&doc, out.as_deref())
}

fn design_verify(input: &Path, info: bool) -> CliResult {
    let (doc, a) = read_design_file(input)?;
    let checked = verify_design(&a)
        .map_err(|e| e.to_string())
        .and_then(|p| doc.check_declared(&p).map(|()| p).map_err(|e| e.to_string()));
    let params = match checked {
        Ok(p) => p,
        Err(reason) => {
            emit_json(&json!({ "is_design": false, "v": a.v(), "b": a.b(), "reason": reason }), None)?;
            return Ok(ExitCode::from(1));
        }
    };
    if !info {
        return emit_json(&params, None);
    }
    emit_json(
        &json!({
            "v": params.v,
            "b": params.b,
            "r": params.r,
            "k": params.k,
            "lambda": params.lambda,
            "symmetric": params.is_symmetric(),
            "comm_bits": params.comm_bits(),
        }),
        None,
    )
}

fn mech_build(design: &DesignSource, epsilon: f64, out: Option<PathBuf>, csv: bool, limits: &Limits) -> CliResult {
    let eps = privacy(epsilon)?;
    let a = design.incidence(limits)?;
    let (q, spec) = build_mechanism(&a, eps).map_err(mechanism_err)?;
    let table = write_matrix_csv(&q.to_rows());
    if let Some(path) = out {
        write_file(&path, &table)?;
    }
    if csv {
        print!("{table}");
        return Ok(ExitCode::SUCCESS);
    }
    emit_json(&MechanismDocument::new(&a, &spec).map_err(domain)?, None)
}

fn mech_debias(design: &DesignSource, epsilon: f64, out: Option<PathBuf>, limits: &Limits) -> CliResult {
    let eps = privacy(epsilon)?;
    let a = design.incidence(limits)?;
    let (q, _) = build_mechanism(&a, eps).map_err(mechanism_err)?;
    let nu = induced_distribution(&q, &Distribution::uniform(a.v())).map_err(domain)?;
    let l = debias_matrix(&q, &nu).map_err(domain)?;
    let table = write_matrix_csv(&l.to_rows());
    match out {
        Some(path) => write_file(&path, &table)?,
        None => print!("{table}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(path: &Path, epsilon: Option<f64>, infer: bool) -> CliResult {
    let q = tpm_from_csv(&read_input(path)?, TPM_READ_TOL).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    let eps = match epsilon {
        Some(e) => privacy(e)?,
        None => {
            debug_assert!(infer);
            let ratio = ldp_ratio(&q).map_err(domain)?;
            PrivacyParam::new(ratio.ln()).map_err(|e| domain(anyhow!("cannot infer epsilon: {e}")))?
        }
    };
    let report = verify_optimal(&q, eps);
    emit_json(&report, None)?;
    Ok(if report.is_minimax_optimal { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
