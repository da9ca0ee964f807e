//! Experiment engine: wires tasks, models, replay and optimizers into the
//! three training loops, runs (model, seed) pairs in parallel, and emits CSV
//! plus SVG summaries.
//!
//! Determinism contract: a (config, seed) pair maps to bitwise-identical
//! metrics regardless of thread count. Randomness is split into named
//! ChaCha substreams (task generation / data sampling / per-model init), so
//! every model kind sees exactly the same data stream for a given seed.

pub mod config;
pub mod metrics;
mod mnist;
mod pe;
pub mod plot;
mod scr;

pub use config::{Benchmark, ExperimentConfig, ModelConfig, DATA_DIR_ENV};
pub use metrics::{aggregate, bin_average, AggregateSeries, MetricKind, MetricsSeries};
pub use mnist::evaluate_accuracy;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::grad::GradError;
use crate::models::{
    MlpParams, ModelKind, ModelParams, ReadoutSpec, RnnParams, TransformerParams,
};
use crate::replay::{ReplayError, SlItem, Transition};
use crate::tasks::mnist::DownsampledMnist;
use crate::tasks::TaskError;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::models::CheckpointError),
}

const TASK_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const INIT_STREAM_BASE: u64 = 100;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn kind_index(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Mlp => 0,
        ModelKind::Transformer => 1,
        ModelKind::Rnn => 2,
        ModelKind::Ermlp => 3,
    }
}

pub(crate) fn init_rng(seed: u64, kind: ModelKind) -> ChaCha8Rng {
    stream_rng(seed, INIT_STREAM_BASE + kind_index(kind))
}

/// Instantiate a model for a benchmark from config plus table defaults.
pub fn build_model(cfg: &ExperimentConfig, mc: &ModelConfig, seed: u64) -> ModelParams<f32> {
    let mut rng = init_rng(seed, mc.kind);
    let d_model = cfg.d_model();
    let (def_layers, def_hidden) = config::default_shape(cfg.benchmark, mc.kind, d_model);
    let layers = mc.layers.unwrap_or(def_layers);
    let hidden = mc.hidden_dim.unwrap_or(def_hidden);
    let out = cfg.output_dim();
    match mc.kind {
        ModelKind::Mlp => {
            let mut widths = vec![cfg.input_dim()];
            widths.extend(std::iter::repeat(hidden).take(layers));
            widths.push(out);
            ModelParams::Mlp(MlpParams::init(&mut rng, &widths, crate::grad::Activation::Relu))
        }
        ModelKind::Ermlp => {
            let input = d_model * (cfg.buffer_capacity + 1);
            let mut widths = vec![input];
            widths.extend(std::iter::repeat(hidden).take(layers));
            widths.push(out);
            ModelParams::Ermlp(MlpParams::init(&mut rng, &widths, crate::grad::Activation::Relu))
        }
        ModelKind::Rnn => ModelParams::Rnn(RnnParams::init(&mut rng, d_model, hidden, layers)),
        ModelKind::Transformer => {
            let d_k = mc.d_k.unwrap_or(d_model.div_ceil(2));
            ModelParams::Transformer(TransformerParams::init(&mut rng, d_model, d_k, layers))
        }
    }
}

pub(crate) fn readout_spec(cfg: &ExperimentConfig) -> ReadoutSpec {
    if cfg.output_dim() == 1 {
        ReadoutSpec::scalar()
    } else {
        ReadoutSpec::logits(cfg.output_dim())
    }
}

/// Streaming SHA-256 of the training-example stream; equality across model
/// kinds certifies the "identical data in the same order" protocol.
pub(crate) struct StreamHasher {
    hasher: Sha256,
}

impl StreamHasher {
    pub fn new() -> Self {
        Self {
            hasher: Sha256::new(),
        }
    }

    pub fn floats(&mut self, values: &[f32]) {
        for v in values {
            self.hasher.update(v.to_le_bytes());
        }
    }

    pub fn byte(&mut self, b: u8) {
        self.hasher.update([b]);
    }

    pub fn finish(self) -> String {
        self.hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// FNV-1a over buffer contents; used by the push-after-update ordering tests.
pub(crate) fn fingerprint_sl(buf: &crate::replay::ReplayBuffer<SlItem<f32>>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for item in buf.iter() {
        for v in &item.x {
            eat(&v.to_le_bytes());
        }
        for v in &item.y {
            eat(&v.to_le_bytes());
        }
    }
    h
}

pub(crate) fn fingerprint_pe(buf: &crate::replay::ReplayBuffer<Transition<f32>>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for item in buf.iter() {
        for v in &item.phi {
            eat(&v.to_le_bytes());
        }
        eat(&item.reward.to_le_bytes());
        for v in &item.phi_next {
            eat(&v.to_le_bytes());
        }
    }
    h
}

/// Extra knobs for a single run; tests use the trace hook.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Record an FNV fingerprint of the replay buffer at every forward.
    pub record_buffer_trace: bool,
    /// Where to write parameter checkpoints (periodic per config, plus final).
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub benchmark: Benchmark,
    pub model: ModelKind,
    pub seed: u64,
    pub series: MetricsSeries,
    /// Hex SHA-256 of the training-example stream.
    pub data_hash: String,
    pub buffer_trace: Option<Vec<u64>>,
}

pub(crate) fn maybe_checkpoint(
    options: &RunOptions,
    cfg: &ExperimentConfig,
    model: &ModelParams<f32>,
    seed: u64,
    tasks_done: usize,
) -> Result<(), RunError> {
    let Some(dir) = &options.checkpoint_dir else {
        return Ok(());
    };
    let due_periodic = cfg
        .checkpoint_every_tasks
        .map(|every| every > 0 && tasks_done % every == 0)
        .unwrap_or(false);
    let is_final = tasks_done == cfg.tasks;
    if !(due_periodic || is_final) {
        return Ok(());
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}_seed{}_task{}.ckpt", model.kind(), seed, tasks_done));
    crate::models::save_checkpoint(&path, &model.kind().to_string(), &model.named_params())?;
    Ok(())
}

/// Run one (model, seed) pair.
pub fn run_single(
    cfg: &ExperimentConfig,
    mc: &ModelConfig,
    seed: u64,
    mnist_data: Option<&Arc<DownsampledMnist>>,
    options: &RunOptions,
) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    match cfg.benchmark {
        Benchmark::Scr => scr::run_scr(cfg, mc, seed, options),
        Benchmark::Pe => pe::run_pe(cfg, mc, seed, options),
        Benchmark::Mnist => {
            let data = mnist_data.ok_or_else(|| {
                RunError::Config(
                    "MNIST data not loaded; fetch it with `plasticity fetch-mnist` first".into(),
                )
            })?;
            mnist::run_mnist(cfg, mc, seed, data.clone(), options)
        }
    }
}

/// Load the downsampled dataset for a config (MNIST benchmark only).
pub fn load_mnist_for(cfg: &ExperimentConfig) -> Result<Arc<DownsampledMnist>, RunError> {
    let dir = cfg.data_dir();
    let raw = crate::tasks::mnist::mnist_load(&dir).map_err(|e| {
        RunError::Config(format!(
            "cannot load MNIST from {}: {e}; run `plasticity fetch-mnist --dir {}` first",
            dir.display(),
            dir.display()
        ))
    })?;
    Ok(Arc::new(DownsampledMnist::prepare(&raw)))
}

/// Run every (model, seed) pair of the config, in parallel, outputs in
/// (model-major, seed-minor) order.
pub fn run_all(cfg: &ExperimentConfig, options: &RunOptions) -> Result<Vec<RunOutput>, RunError> {
    cfg.validate()?;
    let mnist_data = match cfg.benchmark {
        Benchmark::Mnist => Some(load_mnist_for(cfg)?),
        _ => None,
    };
    let pairs: Vec<(usize, u64)> = cfg
        .models
        .iter()
        .enumerate()
        .flat_map(|(mi, _)| cfg.seeds.iter().map(move |&s| (mi, s)))
        .collect();
    pairs
        .par_iter()
        .map(|&(mi, seed)| run_single(cfg, &cfg.models[mi], seed, mnist_data.as_ref(), options))
        .collect()
}

/// Aggregated outcome plus where the files went.
pub struct ExperimentOutcome {
    pub outputs: Vec<RunOutput>,
    pub per_model: Vec<(ModelKind, AggregateSeries)>,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

/// Run, aggregate, and emit CSV + SVG into the output directory.
pub fn execute(cfg: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentOutcome, RunError> {
    let outputs = run_all(cfg, options)?;
    let per_model = aggregate_outputs(cfg, &outputs)?;
    let (csv_path, svg_path) = emit_outputs(cfg, &per_model, Path::new(&cfg.out_dir))?;
    Ok(ExperimentOutcome {
        outputs,
        per_model,
        csv_path,
        svg_path,
    })
}

/// Bin each seed series and aggregate across seeds, model by model in config
/// order.
pub fn aggregate_outputs(
    cfg: &ExperimentConfig,
    outputs: &[RunOutput],
) -> Result<Vec<(ModelKind, AggregateSeries)>, RunError> {
    let mut per_model = Vec::new();
    for mc in &cfg.models {
        let binned: Vec<Vec<f64>> = outputs
            .iter()
            .filter(|o| o.model == mc.kind)
            .map(|o| bin_average(&o.series.values, cfg.bin_width))
            .collect();
        if binned.is_empty() {
            return Err(RunError::Config(format!("no runs for model {}", mc.kind)));
        }
        per_model.push((mc.kind, aggregate(&binned)?));
    }
    Ok(per_model)
}

fn metric_kind(benchmark: Benchmark) -> MetricKind {
    match benchmark {
        Benchmark::Scr => MetricKind::TrainMse,
        Benchmark::Mnist => MetricKind::TestAccuracy,
        Benchmark::Pe => MetricKind::Msve,
    }
}

/// Write the combined CSV and the chart; byte-identical across reruns on the
/// same inputs.
pub fn emit_outputs(
    cfg: &ExperimentConfig,
    per_model: &[(ModelKind, AggregateSeries)],
    dir: &Path,
) -> Result<(PathBuf, PathBuf), RunError> {
    std::fs::create_dir_all(dir)?;
    let metric = metric_kind(cfg.benchmark);
    let records_per_task = cfg.records_per_task();
    let total_records = cfg.tasks * records_per_task;

    let mut csv = String::new();
    csv.push_str(&format!("# benchmark={}\n", cfg.benchmark));
    csv.push_str(&format!("# metric={metric}\n"));
    csv.push_str(&format!("# config_sha256={}\n", cfg.hash()));
    csv.push_str(&format!("# bin_width={}\n", cfg.bin_width));
    csv.push_str(&format!("# records_per_task={records_per_task}\n"));
    csv.push_str("# loss_timing=pre_update\n");
    csv.push_str(&format!(
        "# seeds={}\n",
        cfg.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    csv.push_str("benchmark,model,seed_count,bin_index,step_start,step_end,mean,stderr\n");
    for (kind, agg) in per_model {
        for (bin, (m, s)) in agg.mean.iter().zip(&agg.stderr).enumerate() {
            let start = bin * cfg.bin_width;
            let end = ((bin + 1) * cfg.bin_width).min(total_records);
            csv.push_str(&format!(
                "{},{},{},{},{},{},{:.9e},{:.9e}\n",
                cfg.benchmark, kind, agg.seed_count, bin, start, end, m, s
            ));
        }
    }
    let csv_path = dir.join(format!("{}_{}.csv", cfg.benchmark, metric));
    std::fs::write(&csv_path, &csv)?;

    let spec = plot::ChartSpec {
        title: &format!("{} / {}", cfg.benchmark, metric),
        x_label: "task",
        y_label: &metric.to_string(),
        records_per_task: records_per_task as f64,
        bin_width: cfg.bin_width,
    };
    let named: Vec<(String, AggregateSeries)> = per_model
        .iter()
        .map(|(k, a)| (k.to_string(), a.clone()))
        .collect();
    let svg = plot::render_chart(&spec, &named);
    let svg_path = dir.join(format!("{}_{}.svg", cfg.benchmark, metric));
    std::fs::write(&svg_path, svg)?;
    Ok((csv_path, svg_path))
}

/// Re-render the SVG(s) from the CSV(s) found in a directory.
pub fn replot_dir(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut written = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(RunError::Config(format!(
            "no CSV files found in {}",
            dir.display()
        )));
    }
    for csv in entries {
        let parsed = plot::parse_csv(&csv)?;
        let records_per_task: f64 = parsed
            .meta
            .get("records_per_task")
            .and_then(|v| v.parse().ok())
            .unwrap_or(1.0);
        let bin_width: usize = parsed
            .meta
            .get("bin_width")
            .and_then(|v| v.parse().ok())
            .unwrap_or(1);
        let unknown = "unknown".to_string();
        let benchmark = parsed.meta.get("benchmark").unwrap_or(&unknown);
        let metric = parsed.meta.get("metric").unwrap_or(&unknown);
        let spec = plot::ChartSpec {
            title: &format!("{benchmark} / {metric}"),
            x_label: "task",
            y_label: metric,
            records_per_task,
            bin_width,
        };
        let svg = plot::render_chart(&spec, &parsed.per_model);
        let out = csv.with_extension("svg");
        std::fs::write(&out, svg)?;
        written.push(out);
    }
    Ok(written)
}
