//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::engine::{RunConfig, StepSize};
use crate::estimators::EstimatorKind;
use crate::graph::Topology;
use crate::problem::{load_libsvm, synth_dataset, Dataset, LabelMode, LocalProblem, LossKind, Regularizer, SynthKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    RandomConnected { nodes: usize, edges: usize, seed: u64 },
    Ring { nodes: usize },
    Complete { nodes: usize },
    Single,
    EdgeList { path: PathBuf, nodes: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthModel {
    Logistic,
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        model: SynthModel,
        dim: usize,
        samples: usize,
        /// Label flip probability (logistic) or target noise scale.
        noise: Option<f64>,
        seed: u64,
    },
    Libsvm {
        path: PathBuf,
        dim: Option<usize>,
        #[serde(default)]
        real_targets: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    Logistic,
    LogisticL2 { tau: f64 },
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerSpec {
    Zero,
    SquaredL2 { weight: f64 },
    L1 { weight: f64 },
    /// Bounds given as one value per coordinate, or a single value for all.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Named(String),
    Uniform(f64),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ReferenceSpec {
    Load { path: PathBuf },
    Compute {
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_ref_iters")]
        max_iters: usize,
    },
}

fn default_tol() -> f64 {
    1e-10
}

fn default_ref_iters() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub data: DataSpec,
    #[serde(default)]
    pub partition_seed: u64,
    pub loss: LossSpec,
    #[serde(default = "default_regularizer")]
    pub regularizer: RegularizerSpec,
    /// Overrides every node's smoothness constant.
    pub smoothness: Option<f64>,
    pub algorithm: String,
    pub rho: f64,
    #[serde(default = "default_eta")]
    pub eta: EtaSpec,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub epochs: Option<usize>,
    pub m1: Option<usize>,
    #[serde(default = "default_max_epoch_len")]
    pub max_epoch_len: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    pub probability: Option<f64>,
    pub early_stop_threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_w1")]
    pub w1_hint: f64,
    pub reference: Option<ReferenceSpec>,
    pub output: Option<PathBuf>,
    #[serde(default = "default_stride")]
    pub log_stride: usize,
    #[serde(default)]
    pub precision: Precision,
    /// Per-node oracle budgets (absolute counts per
    /// node) at which `sweep` reports median gaps.
    pub sweep_budgets: Option<Vec<u64>>,
}

fn default_regularizer() -> RegularizerSpec {
    RegularizerSpec::Zero
}

fn default_eta() -> EtaSpec {
    EtaSpec::Named("auto".into())
}

fn default_iterations() -> usize {
    1000
}

fn default_max_epoch_len() -> usize {
    1000
}

fn default_beta1() -> f64 {
    0.5
}

fn default_w1() -> f64 {
    1.0
}

fn default_stride() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let TopologySpec::EdgeList { path, .. } = &mut self.topology {
            fix(path);
        }
        if let DataSpec::Libsvm { path, .. } = &mut self.data {
            fix(path);
        }
        if let Some(ReferenceSpec::Load { path }) = &mut self.reference {
            fix(path);
        }
        if let Some(p) = &mut self.output {
            fix(p);
        }
    }

    pub fn algorithm(&self) -> Result<EstimatorKind, CliError> {
        EstimatorKind::from_name(&self.algorithm).ok_or_else(|| CliError::UnknownAlgorithm(self.algorithm.clone()))
    }

    pub fn build_topology(&self) -> Result<Topology, CliError> {
        Ok(match &self.topology {
            TopologySpec::RandomConnected { nodes, edges, seed } => Topology::random_connected(*nodes, *edges, *seed)?,
            TopologySpec::Ring { nodes } => Topology::ring(*nodes)?,
            TopologySpec::Complete { nodes } => Topology::complete(*nodes)?,
            TopologySpec::Single => Topology::single(),
            TopologySpec::EdgeList { path, nodes } => Topology::load_edge_list(path, *nodes)?,
        })
    }

    pub fn build_dataset<T: Scalar>(&self) -> Result<Dataset<T>, CliError> {
        Ok(match &self.data {
            DataSpec::Synthetic {
                model,
                dim,
                samples,
                noise,
                seed,
            } => {
                let kind = match (model, noise) {
                    (SynthModel::Logistic, None) => SynthKind::separable_logistic(),
                    (SynthModel::Logistic, Some(p)) => SynthKind::SeparableLogistic { label_noise: *p },
                    (SynthModel::LeastSquares, None) => SynthKind::gaussian_least_squares(),
                    (SynthModel::LeastSquares, Some(s)) => SynthKind::GaussianLeastSquares { noise: *s },
                };
                synth_dataset(*dim, *samples, kind, *seed)?
            }
            DataSpec::Libsvm {
                path,
                dim,
                real_targets,
            } => {
                let mode = if *real_targets { LabelMode::Real } else { LabelMode::Binary };
                load_libsvm(path, *dim, mode)?
            }
        })
    }

    /// One local problem per node over a seeded partition of the dataset.
    pub fn build_problems<T: Scalar>(&self, nodes: usize) -> Result<Vec<LocalProblem<T>>, CliError> {
        let data = self.build_dataset::<T>()?;
        let dim = data.dim();
        let loss = match &self.loss {
            LossSpec::Logistic => LossKind::Logistic,
            LossSpec::LogisticL2 { tau } => LossKind::logistic_l2(T::of(*tau))?,
            LossSpec::LeastSquares => LossKind::LeastSquares,
        };
        let reg = match &self.regularizer {
            RegularizerSpec::Zero => Regularizer::Zero,
            RegularizerSpec::SquaredL2 { weight } => Regularizer::squared_l2(T::of(*weight))?,
            RegularizerSpec::L1 { weight } => Regularizer::l1(T::of(*weight))?,
            RegularizerSpec::Box { lo, hi } => {
                let widen = |v: &[f64]| -> Result<Vec<T>, CliError> {
                    match v.len() {
                        1 => Ok(vec![T::of(v[0]); dim]),
                        n if n == dim => Ok(v.iter().map(|&x| T::of(x)).collect()),
                        n => Err(CliError::Config(format!("box bound has {n} entries, data dimension is {dim}"))),
                    }
                };
                Regularizer::boxed(widen(lo)?, widen(hi)?)?
            }
        };
        data.partition(nodes, self.partition_seed)?
            .into_iter()
            .map(|d| {
                let p = LocalProblem::new(d, loss, reg.clone())?;
                Ok(match self.smoothness {
                    Some(l) => p.with_smoothness(T::of(l))?,
                    None => p,
                })
            })
            .collect()
    }

    /// Engine configuration; `sigma` feeds the SGD step size.
    pub fn run_config<T: Scalar>(&self, threads: Option<usize>, sigma: Option<Vec<T>>) -> Result<RunConfig<T>, CliError> {
        let mut rc = RunConfig::new(self.algorithm()?, T::of(self.rho), self.iterations);
        rc.eta = match &self.eta {
            EtaSpec::Named(s) if s == "auto" => StepSize::Auto,
            EtaSpec::Named(s) => return Err(CliError::Config(format!("unknown step size rule {s:?}"))),
            EtaSpec::Uniform(e) => StepSize::Uniform(T::of(*e)),
            EtaSpec::PerNode(v) => StepSize::PerNode(v.iter().map(|&e| T::of(e)).collect()),
        };
        rc.epochs = self.epochs;
        rc.m1 = self.m1;
        rc.max_epoch_len = self.max_epoch_len;
        rc.beta1 = T::of(self.beta1);
        rc.probability = self.probability.map(T::of);
        rc.early_stop_threshold = self.early_stop_threshold.map(T::of);
        rc.seed = self.seed;
        rc.w1_hint = T::of(self.w1_hint);
        rc.sigma = sigma;
        rc.log_stride = self.log_stride;
        rc.threads = threads;
        Ok(rc)
    }

    /// Whether the run needs `σ_i` from a reference.
    pub fn needs_sigma(&self) -> bool {
        self.algorithm == "sgd" && self.eta == default_eta()
    }
}
