//! Command line front end: `run`, `reference` and `sweep`.
//!
//! Every subcommand reads a JSON [`ExperimentConfig`]. Worker threads come
//! from `--threads` or the `DEPD_THREADS` environment variable; neither
//! changes the output.

pub mod config;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::ExperimentConfig;
use config::{Precision, ReferenceSpec};
use output::{cast_reference, summarize, write_trace_csv, ReferenceFile, REFERENCE_FORMAT_VERSION};

use crate::engine::{self, EngineError};
use crate::graph::{GraphError, Topology};
use crate::metrics::{self, MetricsError, ReferenceSolution, Trace};
use crate::problem::{LocalProblem, ProblemError};
use crate::scalar::Scalar;

pub const THREADS_ENV: &str = "DEPD_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown algorithm {0:?} (expected one of full, sgd, saga, svrg, lsvrg, sega, asvr)")]
    UnknownAlgorithm(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("reference file: {0}")]
    Reference(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "depd", version, about = "Decentralized stochastic primal-dual experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the run seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to $DEPD_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its trace as CSV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output CSV; defaults to the config's `output`, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the saddle point reference and write it as JSON.
    Reference {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment once per seed, then summarize median gaps.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma separated run seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Directory for `trace_seed<k>.csv` files and `summary.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn main_with_args<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    execute(cli.command)
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.algorithm()?;
    Ok(cfg)
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { common, out } => {
            let cfg = load(&common)?;
            let t = threads(common.threads)?;
            let out = out.or_else(|| cfg.output.clone());
            let csv = match cfg.precision {
                Precision::F64 => run_csv::<f64>(&cfg, t)?,
                Precision::F32 => run_csv::<f32>(&cfg, t)?,
            };
            emit(out.as_deref(), csv.as_bytes())
        }
        Command::Reference { common, out } => {
            let cfg = load(&common)?;
            let topo = cfg.build_topology()?;
            let problems = cfg.build_problems::<f64>(topo.num_nodes())?;
            let r = reference_for(&cfg, &problems, &topo)?;
            let text = serde_json::to_string_pretty(&ReferenceFile::new(r)).map_err(|e| CliError::Reference(e.to_string()))?;
            emit(Some(&out), text.as_bytes())
        }
        Command::Sweep { common, seeds, out } => {
            let cfg = load(&common)?;
            let t = threads(common.threads)?;
            match cfg.precision {
                Precision::F64 => sweep::<f64>(&cfg, &seeds, t, &out),
                Precision::F32 => sweep::<f32>(&cfg, &seeds, t, &out),
            }
        }
    }
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Loads or computes the reference in `f64`.
pub fn reference_for(
    cfg: &ExperimentConfig,
    problems: &[LocalProblem<f64>],
    topo: &Topology,
) -> Result<ReferenceSolution<f64>, CliError> {
    let (tol, max_iters) = match &cfg.reference {
        Some(ReferenceSpec::Load { path }) => return load_reference(path, problems, topo),
        Some(ReferenceSpec::Compute { tol, max_iters }) => (*tol, *max_iters),
        None => (1e-10, 1_000_000),
    };
    Ok(metrics::compute_reference(problems, topo, tol, max_iters)?)
}

pub fn load_reference(
    path: &Path,
    problems: &[LocalProblem<f64>],
    topo: &Topology,
) -> Result<ReferenceSolution<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: ReferenceFile = serde_json::from_str(&text).map_err(|e| CliError::Reference(e.to_string()))?;
    if file.format_version != REFERENCE_FORMAT_VERSION {
        return Err(CliError::Reference(format!(
            "format_version {} is not supported",
            file.format_version
        )));
    }
    file.solution.check_shape(topo)?;
    if let Some(p) = problems.first() {
        if p.dim() != file.solution.x_star.len() {
            return Err(CliError::Reference(format!(
                "dimension {} does not match the data dimension {}",
                file.solution.x_star.len(),
                p.dim()
            )));
        }
    }
    Ok(file.solution)
}

/// Everything a run needs, built once and shared across seeds.
pub struct Prepared<T> {
    pub topology: Topology,
    pub problems: Vec<LocalProblem<T>>,
    pub reference: ReferenceSolution<T>,
}

pub fn prepare<T: Scalar>(cfg: &ExperimentConfig) -> Result<Prepared<T>, CliError> {
    let topology = cfg.build_topology()?;
    let v = topology.num_nodes();
    let problems64 = cfg.build_problems::<f64>(v)?;
    let reference = cast_reference(&reference_for(cfg, &problems64, &topology)?);
    let problems = cfg.build_problems::<T>(v)?;
    Ok(Prepared {
        topology,
        problems,
        reference,
    })
}

pub fn run_prepared<T: Scalar>(
    cfg: &ExperimentConfig,
    prep: &Prepared<T>,
    threads: Option<usize>,
) -> Result<Trace<T>, CliError> {
    let sigma = if cfg.needs_sigma() {
        Some(
            prep.problems
                .iter()
                .map(|p| metrics::sigma_at_reference(p, &prep.reference))
                .collect::<Result<Vec<T>, _>>()?,
        )
    } else {
        None
    };
    let rc = cfg.run_config(threads, sigma)?;
    Ok(engine::run(&prep.problems, &prep.topology, &rc, Some(&prep.reference))?)
}

pub fn run_csv<T: Scalar>(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<String, CliError> {
    let prep = prepare::<T>(cfg)?;
    let trace = run_prepared(cfg, &prep, threads)?;
    Ok(output::trace_csv_string(&trace))
}

fn sweep<T: Scalar>(cfg: &ExperimentConfig, seeds: &[u64], threads: Option<usize>, dir: &Path) -> Result<(), CliError> {
    if seeds.is_empty() {
        return Err(CliError::Config("sweep needs at least one seed".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let prep = prepare::<T>(cfg)?;
    let mut traces = Vec::with_capacity(seeds.len());
    let mut names = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let trace = run_prepared(&c, &prep, threads)?;
        let name = format!("trace_seed{seed}.csv");
        let path = dir.join(&name);
        let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_trace_csv(&trace, std::io::BufWriter::new(file)).map_err(|e| CliError::io(&path, e))?;
        traces.push(trace);
        names.push(name);
    }
    let budgets = cfg.sweep_budgets.clone().unwrap_or_default();
    let summary = summarize(&cfg.algorithm, prep.topology.num_nodes(), seeds, names, &traces, &budgets);
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}
