//! Permuted-MNIST training loop. One task = one permutation; each task
//! consumes shuffled training pairs in mini-batches, and test accuracy over
//! the full test set is recorded at task end. Replay models hold the buffer
//! fixed within a mini-batch (pushes happen only after the optimizer step)
//! and evaluate with the latest buffer frozen for the whole test pass.
//!
//! The per-example transformer work inside a mini-batch is processed in
//! fixed-size index chunks whose partial sums are reduced in chunk order, so
//! results are identical whatever the thread count.

use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelConfig};
use super::metrics::{MetricKind, MetricsSeries};
use super::{
    build_model, fingerprint_sl, maybe_checkpoint, readout_spec, stream_rng, RunError,
    RunOptions, RunOutput, StreamHasher, DATA_STREAM, TASK_STREAM,
};
use crate::grad::{GradError, GradientMap, Matrix, Tape};
use crate::models::{ModelKind, ModelParams, ReadoutSpec};
use crate::optim::AdamW;
use crate::replay::{build_sl_embedding, ReplayBuffer, SlItem};
use crate::tasks::mnist::{DownsampledMnist, PermutedMnistTask};

/// Examples per parallel work unit; fixed so the reduction tree (and thus
/// f32 summation order) never depends on the machine.
const EXAMPLE_CHUNK: usize = 25;

fn onehot(label: u8) -> Vec<f32> {
    let mut v = vec![0.0f32; 10];
    v[label as usize] = 1.0;
    v
}

/// First index of the maximal logit.
fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch cross-entropy step for the plain MLP: the whole batch is one
/// `49 x b` matrix, per-column losses are averaged on the tape.
fn mlp_batch_step(
    model: &mut ModelParams<f32>,
    opt: &mut AdamW<f32>,
    batch_x: &[f32],
    labels: &[u8],
) -> Result<f64, RunError> {
    let b = labels.len();
    let d = batch_x.len() / b;
    let mut data = vec![0.0f32; d * b];
    for e in 0..b {
        for i in 0..d {
            data[i * b + e] = batch_x[e * d + i];
        }
    }
    let mut tape = Tape::new();
    let x = tape.input(Matrix::from_vec(d, b, data).expect("batch shape"));
    let logits = model.forward(&mut tape, x)?;
    let mut total = None;
    for (e, &label) in labels.iter().enumerate() {
        let col = tape.slice(logits, 0..10, e..e + 1)?;
        let ce = tape.cross_entropy(col, &onehot(label))?;
        total = Some(match total {
            None => ce,
            Some(t) => tape.add(t, ce)?,
        });
    }
    let mean = tape.scale(total.expect("nonempty batch"), 1.0 / b as f32);
    let loss = tape.scalar(mean)?;
    let grads = tape.backward(mean)?;
    opt.step(&mut model.params_mut(), &grads)?;
    Ok(loss as f64)
}

/// Per-example gradient accumulation for replay models, chunk-parallel with
/// an order-fixed reduction.
fn replay_batch_step(
    model: &mut ModelParams<f32>,
    opt: &mut AdamW<f32>,
    spec: ReadoutSpec,
    buf: &ReplayBuffer<SlItem<f32>>,
    batch_x: &[f32],
    labels: &[u8],
) -> Result<f64, RunError> {
    let b = labels.len();
    let d = batch_x.len() / b;
    let frozen = &*model;
    let chunk_results: Vec<Result<(f64, GradientMap<f32>), GradError>> = (0..b)
        .collect::<Vec<_>>()
        .par_chunks(EXAMPLE_CHUNK)
        .map(|chunk| {
            let mut loss_sum = 0.0f64;
            let mut grad_sum: Option<GradientMap<f32>> = None;
            for &e in chunk {
                let x = &batch_x[e * d..(e + 1) * d];
                let z = build_sl_embedding(buf, x, 10).expect("embedding dims fixed");
                let mut tape = Tape::new();
                let zi = tape.input(z);
                let pred = frozen.predict(&mut tape, zi, spec)?;
                let ce = tape.cross_entropy(pred, &onehot(labels[e]))?;
                loss_sum += tape.scalar(ce)? as f64;
                let grads = tape.backward(ce)?;
                match grad_sum.as_mut() {
                    None => grad_sum = Some(grads),
                    Some(total) => total.accumulate(&grads),
                }
            }
            Ok((loss_sum, grad_sum.expect("nonempty chunk")))
        })
        .collect();

    let mut loss_total = 0.0f64;
    let mut grads_total: Option<GradientMap<f32>> = None;
    for res in chunk_results {
        let (l, g) = res?;
        loss_total += l;
        match grads_total.as_mut() {
            None => grads_total = Some(g),
            Some(total) => total.accumulate(&g),
        }
    }
    let mut grads = grads_total.expect("nonempty batch");
    grads.scale_in_place(1.0 / b as f32);
    opt.step(&mut model.params_mut(), &grads)?;
    Ok(loss_total / b as f64)
}

/// Accuracy of a model over the whole (permuted) test set; replay models use
/// the supplied frozen buffer for every query.
pub fn evaluate_accuracy(
    model: &ModelParams<f32>,
    spec: ReadoutSpec,
    task: &PermutedMnistTask,
    buf: Option<&ReplayBuffer<SlItem<f32>>>,
) -> Result<f64, RunError> {
    let n = task.data().test_count();
    let correct: usize = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(200)
        .map(|chunk| -> Result<usize, RunError> {
            let mut hits = 0usize;
            let mut x = vec![0.0f32; 49];
            for &i in chunk {
                let label = task.test_example(i, &mut x);
                let logits = match buf {
                    Some(buf) => {
                        let z = build_sl_embedding(buf, &x, 10)?;
                        let mut tape = Tape::new();
                        let zi = tape.input(z);
                        let pred = model.predict(&mut tape, zi, spec)?;
                        tape.value(pred).col_vec(0)
                    }
                    None => {
                        let mut tape = Tape::new();
                        let xi = tape.input(Matrix::column(&x));
                        let pred = model.predict(&mut tape, xi, spec)?;
                        tape.value(pred).col_vec(0)
                    }
                };
                if argmax(&logits) == label as usize {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / n as f64)
}

pub(crate) fn run_mnist(
    cfg: &ExperimentConfig,
    mc: &ModelConfig,
    seed: u64,
    data: Arc<DownsampledMnist>,
    options: &RunOptions,
) -> Result<RunOutput, RunError> {
    use rand::seq::SliceRandom;

    let b = cfg.batch_size;
    let train_count = data.train_count();
    if train_count == 0 || data.test_count() == 0 {
        return Err(RunError::Config("empty dataset".into()));
    }
    let mut task_rng = stream_rng(seed, TASK_STREAM);
    let mut data_rng = stream_rng(seed, DATA_STREAM);
    let mut model = build_model(cfg, mc, seed);
    let mut opt = AdamW::<f32>::new(mc.lr, cfg.adamw);
    let spec = readout_spec(cfg);
    let replay = mc.kind != ModelKind::Mlp;
    let mut buf: ReplayBuffer<SlItem<f32>> = ReplayBuffer::new(cfg.buffer_capacity)?;

    let mut hasher = StreamHasher::new();
    let mut accuracies = Vec::with_capacity(cfg.tasks);
    let mut trace = options.record_buffer_trace.then(Vec::new);

    let mut batch_x = vec![0.0f32; 49 * b];
    let mut labels = vec![0u8; b];

    for task_idx in 0..cfg.tasks {
        let task = PermutedMnistTask::generate(data.clone(), &mut task_rng);
        let mut order: Vec<u32> = (0..train_count as u32).collect();
        order.shuffle(&mut data_rng);
        let mut cursor = 0usize;

        for _ in 0..cfg.steps_per_task {
            for e in 0..b {
                if cursor == train_count {
                    order.shuffle(&mut data_rng);
                    cursor = 0;
                }
                let idx = order[cursor] as usize;
                cursor += 1;
                labels[e] = task.train_example(idx, &mut batch_x[e * 49..(e + 1) * 49]);
            }
            for e in 0..b {
                hasher.floats(&batch_x[e * 49..(e + 1) * 49]);
                hasher.byte(labels[e]);
            }

            if replay {
                if let Some(t) = trace.as_mut() {
                    t.push(fingerprint_sl(&buf));
                }
                replay_batch_step(&mut model, &mut opt, spec, &buf, &batch_x, &labels)?;
                for e in 0..b {
                    buf.push(SlItem {
                        x: batch_x[e * 49..(e + 1) * 49].to_vec(),
                        y: onehot(labels[e]),
                    })?;
                }
            } else {
                mlp_batch_step(&mut model, &mut opt, &batch_x, &labels)?;
            }
        }

        let acc = evaluate_accuracy(&model, spec, &task, replay.then_some(&buf))?;
        accuracies.push(acc);
        maybe_checkpoint(options, cfg, &model, seed, task_idx + 1)?;
    }

    Ok(RunOutput {
        benchmark: cfg.benchmark,
        model: mc.kind,
        seed,
        series: MetricsSeries {
            kind: MetricKind::TestAccuracy,
            stride: cfg.steps_per_task as u64,
            values: accuracies,
        },
        data_hash: hasher.finish(),
        buffer_trace: trace,
    })
}
