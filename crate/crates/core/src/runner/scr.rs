//! Slowly-changing-regression training loop: one example per step, squared
//! loss, losses recorded pre-update, replay items pushed only after the
//! optimizer step.

use super::config::{ExperimentConfig, ModelConfig};
use super::metrics::{MetricKind, MetricsSeries};
use super::{
    build_model, fingerprint_sl, maybe_checkpoint, readout_spec, stream_rng, RunError,
    RunOptions, RunOutput, StreamHasher, DATA_STREAM, TASK_STREAM,
};
use crate::grad::{Matrix, Tape};
use crate::models::ModelKind;
use crate::optim::AdamW;
use crate::replay::{build_sl_embedding, ReplayBuffer, SlItem};
use crate::tasks::ScrState;

/// Learner-facing example stream: just (x, y) pairs, task boundaries hidden.
pub(crate) struct ScrStream {
    state: ScrState,
    task_rng: rand_chacha::ChaCha8Rng,
    data_rng: rand_chacha::ChaCha8Rng,
    steps_per_task: usize,
    step_in_task: usize,
}

impl ScrStream {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self, RunError> {
        let scr = cfg.scr_config();
        let mut task_rng = stream_rng(seed, TASK_STREAM);
        let data_rng = stream_rng(seed, DATA_STREAM);
        let state = ScrState::init(
            &mut task_rng,
            scr.feature_dim,
            scr.slow_bits,
            scr.ltu_hidden,
            scr.ltu_beta,
        )?;
        Ok(Self {
            state,
            task_rng,
            data_rng,
            steps_per_task: cfg.steps_per_task,
            step_in_task: 0,
        })
    }

    pub fn next_example(&mut self) -> (Vec<f32>, f32) {
        if self.step_in_task == self.steps_per_task {
            self.state.advance_task(&mut self.task_rng);
            self.step_in_task = 0;
        }
        self.step_in_task += 1;
        let (bits, y) = self.state.next_example(&mut self.data_rng);
        let x = bits.iter().map(|&b| b as f32).collect();
        (x, y as f32)
    }
}

pub(crate) fn run_scr(
    cfg: &ExperimentConfig,
    mc: &ModelConfig,
    seed: u64,
    options: &RunOptions,
) -> Result<RunOutput, RunError> {
    let total = cfg.tasks * cfg.steps_per_task;
    let mut stream = ScrStream::new(cfg, seed)?;
    let mut model = build_model(cfg, mc, seed);
    let mut opt = AdamW::<f32>::new(mc.lr, cfg.adamw);
    let spec = readout_spec(cfg);
    let replay = mc.kind != ModelKind::Mlp;
    let mut buf: ReplayBuffer<SlItem<f32>> = ReplayBuffer::new(cfg.buffer_capacity)?;

    let mut hasher = StreamHasher::new();
    let mut values = Vec::with_capacity(total);
    let mut trace = options.record_buffer_trace.then(Vec::new);

    for step in 0..total {
        let (x, y) = stream.next_example();
        hasher.floats(&x);
        hasher.floats(&[y]);

        let loss = if replay {
            if let Some(t) = trace.as_mut() {
                t.push(fingerprint_sl(&buf));
            }
            let z = build_sl_embedding(&buf, &x, 1)?;
            let mut tape = Tape::new();
            let zi = tape.input(z);
            let pred = model.predict(&mut tape, zi, spec)?;
            let root = tape.mse(pred, y)?;
            let loss = tape.scalar(root)?;
            let grads = tape.backward(root)?;
            opt.step(&mut model.params_mut(), &grads)?;
            buf.push(SlItem { x, y: vec![y] })?;
            loss
        } else {
            let mut tape = Tape::new();
            let xi = tape.input(Matrix::column(&x));
            let pred = model.predict(&mut tape, xi, spec)?;
            let root = tape.mse(pred, y)?;
            let loss = tape.scalar(root)?;
            let grads = tape.backward(root)?;
            opt.step(&mut model.params_mut(), &grads)?;
            loss
        };
        values.push(loss as f64);

        if (step + 1) % cfg.steps_per_task == 0 {
            maybe_checkpoint(options, cfg, &model, seed, (step + 1) / cfg.steps_per_task)?;
        }
    }

    Ok(RunOutput {
        benchmark: cfg.benchmark,
        model: mc.kind,
        seed,
        series: MetricsSeries {
            kind: MetricKind::TrainMse,
            stride: 1,
            values,
        },
        data_hash: hasher.finish(),
        buffer_trace: trace,
    })
}
