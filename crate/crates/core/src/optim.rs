//! AdamW with decoupled weight decay, and the semi-gradient TD pseudo-gradient
//! that feeds it. TD is not gradient descent: the bootstrapped target is
//! evaluated without contributing gradients, and the update is handed to the
//! (minimizing) optimizer as `-delta * grad f(Z)`.

use serde::{Deserialize, Serialize};

use crate::grad::{GradError, GradientMap, Matrix, NodeId, ParamId, Scalar, Tape};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub weight_decay: T,
    t: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(lr: f64, hyper: AdamWHyper) -> Self {
        Self {
            lr: T::from_f64(lr),
            beta1: T::from_f64(hyper.beta1),
            beta2: T::from_f64(hyper.beta2),
            epsilon: T::from_f64(hyper.epsilon),
            weight_decay: T::from_f64(hyper.weight_decay),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update:
    /// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    /// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
    ///
    /// Parameters are taken in canonical order; `grads` must cover them all.
    pub fn step(
        &mut self,
        params: &mut [&mut Matrix<T>],
        grads: &GradientMap<T>,
    ) -> Result<(), GradError> {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to other model");
        self.t += 1;
        // Bias corrections in f64: beta^t underflows gracefully.
        let bc1 = T::from_f64(1.0 - self.beta1.to_f64().powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.to_f64().powi(self.t as i32));

        let one = T::one();
        for (idx, param) in params.iter_mut().enumerate() {
            let g = grads
                .get(ParamId(idx))
                .ok_or(GradError::MissingGradient(idx))?;
            if g.shape() != param.shape() {
                return Err(GradError::ShapeMismatch {
                    op: "adamw_step",
                    lhs_rows: param.rows(),
                    lhs_cols: param.cols(),
                    rhs_rows: g.rows(),
                    rhs_cols: g.cols(),
                });
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let (b1, b2) = (self.beta1, self.beta2);
            for i in 0..param.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (one - b1) * gi;
                let vi = b2 * v.data()[i] + (one - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let theta = param.data()[i];
                param.data_mut()[i] = theta
                    - self.lr * m_hat / (v_hat.sqrt() + self.epsilon)
                    - self.lr * self.weight_decay * theta;
            }
        }
        Ok(())
    }
}

/// Learning-rate / discount pair for TD runs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TdConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl TdConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("discount must satisfy 0 <= gamma < 1, got {}", self.gamma));
        }
        Ok(())
    }
}

/// TD error and pseudo-gradient for one transition.
///
/// `forward` must build the prediction for a given embedding input node and
/// register the model parameters (0..P) on the tape. The target-side forward
/// runs on a throwaway tape, so its parameters receive no gradient; returned
/// grads equal `-delta * grad f(Z)`, sign-flipped for a minimizing optimizer.
pub fn td_pseudo_gradient<T: Scalar>(
    forward: impl Fn(&mut Tape<T>, NodeId) -> Result<NodeId, GradError>,
    z: &Matrix<T>,
    z_next: &Matrix<T>,
    reward: T,
    gamma: T,
) -> Result<(T, GradientMap<T>), GradError> {
    if z.shape() != z_next.shape() {
        return Err(GradError::ShapeMismatch {
            op: "td_pseudo_gradient",
            lhs_rows: z.rows(),
            lhs_cols: z.cols(),
            rhs_rows: z_next.rows(),
            rhs_cols: z_next.cols(),
        });
    }
    // Bootstrapped target: evaluated, never differentiated.
    let v_next = {
        let mut tape = Tape::new();
        let zi = tape.input(z_next.clone());
        let root = forward(&mut tape, zi)?;
        tape.scalar(root)?
    };

    let mut tape = Tape::new();
    let zi = tape.input(z.clone());
    let root = forward(&mut tape, zi)?;
    let v = tape.scalar(root)?;

    let delta = reward + gamma * v_next - v;
    let grads = tape.backward_seeded(root, -delta)?;
    Ok((delta, grads))
}
