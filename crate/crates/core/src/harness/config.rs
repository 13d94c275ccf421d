use serde::{Deserialize, Serialize};

use crate::aligner::{AlignConfig, AlignMode};
use crate::error::{Error, Result};
use crate::net::{Activation, LossKind, ModelSpec};
use crate::sharing::BasisStrategy;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run depends on. Sub-seeds left unset are derived from
/// `seed`, so overriding `seed` alone reseeds the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub model: ModelSpec,
    pub data: DataSpec,
    pub training: TrainConfig,
    pub sharing: SharingConfig,
    pub baselines: Vec<Baseline>,
    pub ablation: AblationSpec,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            model: ModelSpec {
                layer_dims: vec![4; 5],
                activation: Activation::Tanh,
                loss: LossKind::MeanSquaredError,
            },
            data: DataSpec::default(),
            training: TrainConfig {
                init: Init::TeacherPerturbed { noise: 0.1 },
                weight_decay: 3e-3,
                ..TrainConfig::default()
            },
            sharing: SharingConfig {
                align: AlignConfig {
                    t: Some(4),
                    ..AlignConfig::default()
                },
                ..SharingConfig::default()
            },
            baselines: vec![Baseline::RandomColoring, Baseline::AdjacentPairs, Baseline::NoSharing],
            ablation: AblationSpec::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.data.train_samples == 0 || self.data.eval_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.data.noise >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        if !(self.training.grad_tol > 0.0) {
            return Err(Error::Config("convergence target must be positive".into()));
        }
        if !(self.training.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.training.trace_every == 0 {
            return Err(Error::Config("trace_every must be positive".into()));
        }
        if self.sharing.bases_per_group == 0 || self.sharing.rank == 0 {
            return Err(Error::Config("bases_per_group and rank must be positive".into()));
        }
        self.sharing.align.validate()
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed.wrapping_mul(3).wrapping_add(1))
    }

    pub fn init_seed(&self) -> u64 {
        self.training.seed.unwrap_or(self.seed.wrapping_mul(3).wrapping_add(2))
    }

    pub fn baseline_seed(&self) -> u64 {
        self.seed.wrapping_mul(3).wrapping_add(3)
    }

    /// The alignment settings with the run seed filled in.
    pub fn align_config(&self) -> AlignConfig {
        let mut a = self.sharing.align.clone();
        if self.sharing.align_seed_from_run {
            a.seed = self.seed;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    /// Targets from a random network of the model's own architecture.
    Teacher { gain: f64 },
    /// A teacher whose layers alternate between `clusters` prototypes (layer
    /// `l` uses prototype `l mod clusters`) plus Gaussian variation of size
    /// `spread`. Each prototype has `rank` dominant singular values near
    /// `scale`; the remaining ones equal `tail·scale`.
    PlantedClusters {
        clusters: usize,
        rank: usize,
        scale: f64,
        #[serde(default)]
        tail: f64,
        spread: f64,
    },
    /// Targets equal to the inputs.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub task: Task,
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Standard deviation of target noise (of logit noise for classification).
    pub noise: f64,
    pub seed: Option<u64>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            task: Task::PlantedClusters {
                clusters: 2,
                rank: 2,
                scale: 1.5,
                tail: 0.1,
                spread: 0.05,
            },
            train_samples: 48,
            eval_samples: 200,
            noise: 0.2,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    /// Minibatch SGD with heavy-ball momentum; full batch when `batch_size`
    /// is unset.
    Sgd {
        learning_rate: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        batch_size: Option<usize>,
    },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        batch_size: Option<usize>,
    },
    /// Full-batch gradient descent with Armijo backtracking.
    LineSearch,
    /// Damped Newton on `|H|` (eigenvalues replaced by their magnitude) with
    /// backtracking. Needs the dense Hessian of all weights.
    Newton { damping: f64 },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Init {
    /// Gaussian with standard deviation `gain / sqrt(fan_in)`.
    Random { gain: f64 },
    /// The data's teacher plus Gaussian noise of standard deviation
    /// `noise / sqrt(fan_in)`.
    TeacherPerturbed { noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub steps: usize,
    /// Training stops once the full-batch gradient norm is at most this.
    pub grad_tol: f64,
    pub init: Init,
    pub seed: Option<u64>,
    pub trace_every: usize,
    /// L2 penalty `½·weight_decay·‖θ‖²` added to the training objective only.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Newton { damping: 1e-3 },
            steps: 100,
            grad_tol: 1e-8,
            init: Init::Random { gain: 1.0 },
            seed: None,
            trace_every: 1,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharingConfig {
    /// Candidate bases `K` built for every group of equally shaped layers.
    pub bases_per_group: usize,
    pub rank: usize,
    pub strategy: BasisStrategy,
    pub align: AlignConfig,
    /// Replace `align.seed` by the run seed.
    pub align_seed_from_run: bool,
}

impl Default for SharingConfig {
    fn default() -> Self {
        Self {
            bases_per_group: 2,
            rank: 2,
            strategy: BasisStrategy::SpectralCluster,
            align: AlignConfig::default(),
            align_seed_from_run: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Uniform random basis per layer from the layer's group.
    RandomColoring,
    /// Layers `(0,1)`, `(2,3)`, … of a group share a basis, cycling through
    /// the group's `K` bases.
    AdjacentPairs,
    /// The unshared model.
    NoSharing,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::RandomColoring => "random-coloring",
            Baseline::AdjacentPairs => "adjacent-pairs",
            Baseline::NoSharing => "no-sharing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub t_values: Vec<usize>,
    pub beta_values: Vec<f64>,
    /// Mode used by sweeps.
    pub mode: AlignMode,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            t_values: Vec::new(),
            beta_values: Vec::new(),
            mode: AlignMode::PaperLiteral,
        }
    }
}
