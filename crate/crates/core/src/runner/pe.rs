//! Continual policy evaluation: a fresh Boyan chain per task, one TD update
//! per observed transition, MSVE against the exact value function recorded
//! after updates (stride `eval_every`). Replay models bootstrap from the
//! embedding pair (Z, Z'); transitions are pushed after the update.

use super::config::{ExperimentConfig, ModelConfig};
use super::metrics::{MetricKind, MetricsSeries};
use super::{
    build_model, fingerprint_pe, maybe_checkpoint, readout_spec, stream_rng, RunError,
    RunOptions, RunOutput, StreamHasher, DATA_STREAM, TASK_STREAM,
};
use crate::grad::{GradError, Matrix, NodeId, Tape};
use crate::models::{ModelKind, ModelParams, ReadoutSpec};
use crate::optim::{td_pseudo_gradient, AdamW};
use crate::replay::{build_pe_embeddings, ReplayBuffer, Transition};
use crate::tasks::boyan::{boyan_generate, BoyanTask};

fn predict_value(
    model: &ModelParams<f32>,
    spec: ReadoutSpec,
    z: &Matrix<f32>,
) -> Result<f32, GradError> {
    let mut tape = Tape::new();
    let zi = tape.input(z.clone());
    let pred = model.predict(&mut tape, zi, spec)?;
    tape.scalar(pred)
}

/// Estimated values for every chain state using the latest buffer contents.
fn estimate_values(
    model: &ModelParams<f32>,
    spec: ReadoutSpec,
    task: &BoyanTask,
    buf: &ReplayBuffer<Transition<f32>>,
    gamma: f32,
    replay: bool,
) -> Result<Vec<f64>, RunError> {
    let mut v_hat = Vec::with_capacity(task.states);
    for s in 0..task.states {
        let phi = task.feature_f32(s);
        let v = if replay {
            let (z, _) = build_pe_embeddings(buf, &phi, &phi, gamma)?;
            predict_value(model, spec, &z)?
        } else {
            predict_value(model, spec, &Matrix::column(&phi))?
        };
        v_hat.push(v as f64);
    }
    Ok(v_hat)
}

pub(crate) fn run_pe(
    cfg: &ExperimentConfig,
    mc: &ModelConfig,
    seed: u64,
    options: &RunOptions,
) -> Result<RunOutput, RunError> {
    let pe = cfg.pe_config();
    let gamma = pe.gamma as f32;
    let mut task_rng = stream_rng(seed, TASK_STREAM);
    let mut data_rng = stream_rng(seed, DATA_STREAM);
    let mut model = build_model(cfg, mc, seed);
    let mut opt = AdamW::<f32>::new(mc.lr, cfg.adamw);
    let spec = readout_spec(cfg);
    let replay = mc.kind != ModelKind::Mlp;
    let mut buf: ReplayBuffer<Transition<f32>> = ReplayBuffer::new(cfg.buffer_capacity)?;

    let mut hasher = StreamHasher::new();
    let mut values = Vec::with_capacity(cfg.tasks * cfg.steps_per_task / pe.eval_every);
    let mut trace = options.record_buffer_trace.then(Vec::new);
    let mut global_step = 0usize;

    for task_idx in 0..cfg.tasks {
        let task = boyan_generate(&mut task_rng, pe.states, pe.feature_dim, pe.gamma)?;
        let mut s = task.sample_start(&mut data_rng);
        for _ in 0..cfg.steps_per_task {
            let (s_next, _) = task.step(s, &mut data_rng);
            let tr = task.transition_item(s, s_next);
            hasher.floats(&tr.phi);
            hasher.floats(&[tr.reward]);
            hasher.floats(&tr.phi_next);

            if replay {
                if let Some(t) = trace.as_mut() {
                    t.push(fingerprint_pe(&buf));
                }
                let (z, zp) = build_pe_embeddings(&buf, &tr.phi, &tr.phi_next, gamma)?;
                let fwd = |tape: &mut Tape<f32>, zi: NodeId| model.predict(tape, zi, spec);
                let (_delta, grads) = td_pseudo_gradient(fwd, &z, &zp, tr.reward, gamma)?;
                opt.step(&mut model.params_mut(), &grads)?;
                buf.push(tr)?;
            } else {
                let z = Matrix::column(&tr.phi);
                let zp = Matrix::column(&tr.phi_next);
                let fwd = |tape: &mut Tape<f32>, zi: NodeId| model.predict(tape, zi, spec);
                let (_delta, grads) = td_pseudo_gradient(fwd, &z, &zp, tr.reward, gamma)?;
                opt.step(&mut model.params_mut(), &grads)?;
            }

            global_step += 1;
            if global_step % pe.eval_every == 0 {
                let v_hat = estimate_values(&model, spec, &task, &buf, gamma, replay)?;
                values.push(task.msve(&v_hat));
            }
            s = s_next;
        }
        maybe_checkpoint(options, cfg, &model, seed, task_idx + 1)?;
    }

    Ok(RunOutput {
        benchmark: cfg.benchmark,
        model: mc.kind,
        seed,
        series: MetricsSeries {
            kind: MetricKind::Msve,
            stride: pe.eval_every as u64,
            values,
        },
        data_hash: hasher.finish(),
        buffer_trace: trace,
    })
}
