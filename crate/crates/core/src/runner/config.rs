//! Experiment configuration: JSON-backed, with paper-default files shipped in
//! `configs/`. Unknown fields are rejected so config typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::models::ModelKind;
use crate::optim::AdamWHyper;

/// Environment variable overriding the MNIST data directory.
pub const DATA_DIR_ENV: &str = "PLASTICITY_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Scr,
    Mnist,
    Pe,
}

impl std::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Benchmark::Scr => "scr",
            Benchmark::Mnist => "mnist",
            Benchmark::Pe => "pe",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lr: f64,
    /// Layer count (hidden layers for MLP/ERMLP, blocks for the Transformer,
    /// stacked cells for the RNN). Table default per benchmark when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    /// Key/query width; defaults to ceil(d_model / 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_k: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrConfig {
    /// Total feature bits m.
    pub feature_dim: usize,
    /// Slow bits f held fixed within a task (one flips per boundary).
    pub slow_bits: usize,
    pub ltu_hidden: usize,
    pub ltu_beta: f64,
}

impl Default for ScrConfig {
    fn default() -> Self {
        Self {
            feature_dim: 20,
            slow_bits: 15,
            ltu_hidden: 100,
            ltu_beta: 0.7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistConfig {
    pub data_dir: String,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeConfig {
    pub states: usize,
    pub feature_dim: usize,
    pub gamma: f64,
    /// Evaluate MSVE every this many TD updates (1 = after every update).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    1
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            states: 10,
            feature_dim: 4,
            gamma: 0.9,
            eval_every: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub models: Vec<ModelConfig>,
    /// Number of tasks K.
    pub tasks: usize,
    /// Steps (mini-batches) per task N.
    pub steps_per_task: usize,
    /// Mini-batch size b.
    pub batch_size: usize,
    /// Replay capacity n.
    pub buffer_capacity: usize,
    pub seeds: Vec<u64>,
    /// Records per bin when averaging for output.
    pub bin_width: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub adamw: AdamWHyper,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scr: Option<ScrConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist: Option<MnistConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe: Option<PeConfig>,
    /// Save parameter checkpoints every this many tasks (plus at run end).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every_tasks: Option<usize>,
}

fn default_out_dir() -> String {
    "out".to_string()
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self, RunError> {
        let cfg: Self = serde_json::from_str(json)
            .map_err(|e| RunError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let err = |msg: String| Err(RunError::Config(msg));
        if self.models.is_empty() {
            return err("at least one model required".into());
        }
        if self.tasks == 0 || self.steps_per_task == 0 || self.batch_size == 0 {
            return err("tasks, steps_per_task and batch_size must be positive".into());
        }
        if self.buffer_capacity == 0 {
            return err("buffer_capacity must be positive".into());
        }
        if self.seeds.is_empty() {
            return err("at least one seed required".into());
        }
        if self.bin_width == 0 {
            return err("bin_width must be positive".into());
        }
        for m in &self.models {
            if !(m.lr > 0.0) {
                return err(format!("model {}: learning rate must be positive", m.kind));
            }
        }
        match self.benchmark {
            Benchmark::Scr => {
                if self.batch_size != 1 {
                    return err("the regression benchmark uses batch_size 1".into());
                }
                let scr = self.scr_config();
                if scr.slow_bits == 0 || scr.slow_bits >= scr.feature_dim {
                    return err(format!(
                        "slow_bits must satisfy 0 < f < m, got f={}, m={}",
                        scr.slow_bits, scr.feature_dim
                    ));
                }
                if scr.ltu_hidden == 0 {
                    return err("ltu_hidden must be positive".into());
                }
            }
            Benchmark::Mnist => {}
            Benchmark::Pe => {
                if self.batch_size != 1 {
                    return err("policy evaluation uses batch_size 1".into());
                }
                let pe = self.pe_config();
                if !(0.0..1.0).contains(&pe.gamma) {
                    return err(format!("discount must satisfy 0 <= gamma < 1, got {}", pe.gamma));
                }
                if pe.states < 3 {
                    return err("chain needs at least 3 states".into());
                }
                if pe.feature_dim == 0 {
                    return err("feature_dim must be positive".into());
                }
                if pe.eval_every == 0 {
                    return err("eval_every must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn scr_config(&self) -> ScrConfig {
        self.scr.clone().unwrap_or_default()
    }

    pub fn mnist_config(&self) -> MnistConfig {
        self.mnist.clone().unwrap_or_default()
    }

    pub fn pe_config(&self) -> PeConfig {
        self.pe.clone().unwrap_or_default()
    }

    /// MNIST data directory; the environment variable wins over the config.
    pub fn data_dir(&self) -> PathBuf {
        match std::env::var(DATA_DIR_ENV) {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(self.mnist_config().data_dir),
        }
    }

    /// Desk-scale factor: divides the task count, keeping steps per task.
    pub fn apply_scale(&mut self, scale: usize) -> Result<(), RunError> {
        if scale == 0 {
            return Err(RunError::Config("scale must be positive".into()));
        }
        self.tasks = (self.tasks / scale).max(1);
        Ok(())
    }

    /// Canonical-JSON SHA-256, recorded in every output file.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable config");
        crate::tasks::mnist::hex_digest(json.as_bytes())
    }

    /// Model input feature width (before any embedding).
    pub fn input_dim(&self) -> usize {
        match self.benchmark {
            Benchmark::Scr => self.scr_config().feature_dim,
            Benchmark::Mnist => 49,
            Benchmark::Pe => self.pe_config().feature_dim,
        }
    }

    /// Embedding row count fed to replay models.
    pub fn d_model(&self) -> usize {
        match self.benchmark {
            Benchmark::Scr => self.scr_config().feature_dim + 1,
            Benchmark::Mnist => 49 + 10,
            Benchmark::Pe => 2 * self.pe_config().feature_dim + 1,
        }
    }

    /// Readout width of the prediction.
    pub fn output_dim(&self) -> usize {
        match self.benchmark {
            Benchmark::Mnist => 10,
            _ => 1,
        }
    }

    /// How many metric records one task contributes.
    pub fn records_per_task(&self) -> usize {
        match self.benchmark {
            Benchmark::Scr => self.steps_per_task,
            Benchmark::Mnist => 1,
            Benchmark::Pe => {
                let every = self.pe_config().eval_every;
                self.steps_per_task / every
            }
        }
    }
}

/// Table-default (layers, hidden width) per benchmark and model kind.
pub fn default_shape(benchmark: Benchmark, kind: ModelKind, d_model: usize) -> (usize, usize) {
    match (benchmark, kind) {
        (Benchmark::Scr, ModelKind::Mlp | ModelKind::Ermlp) => (2, 20),
        (Benchmark::Scr, ModelKind::Rnn) => (1, 20),
        (Benchmark::Scr, ModelKind::Transformer) => (2, 0),
        (Benchmark::Mnist, ModelKind::Mlp | ModelKind::Ermlp) => (3, 2000),
        (Benchmark::Mnist, ModelKind::Rnn) => (1, d_model),
        (Benchmark::Mnist, ModelKind::Transformer) => (10, 0),
        (Benchmark::Pe, ModelKind::Mlp | ModelKind::Ermlp) => (2, 30),
        (Benchmark::Pe, ModelKind::Rnn) => (6, 9),
        (Benchmark::Pe, ModelKind::Transformer) => (6, 0),
    }
}
