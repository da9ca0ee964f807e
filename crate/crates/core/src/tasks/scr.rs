//! Slowly-changing regression: binary feature vectors whose first `f` bits
//! are frozen within a task and flip one at a time at task boundaries, with
//! targets produced by a fixed random linear-threshold-unit network.

use rand::Rng;

use super::TaskError;

/// Target-generating network: one hidden layer of linear threshold units with
/// +-1 input weights, and a +-1-weighted linear output layer (no bias, no
/// output activation).
///
/// Unit i fires (outputs 1) iff `sum_j w_ij x_j > (m+1)*beta - s_i`, where
/// `s_i` counts the unit's -1 input weights.
#[derive(Clone, Debug)]
pub struct LtuNet {
    m: usize,
    input_weights: Vec<i8>,
    output_weights: Vec<i8>,
    thresholds: Vec<f64>,
}

impl LtuNet {
    pub fn init(rng: &mut impl Rng, m: usize, hidden: usize, beta: f64) -> Self {
        let input_weights: Vec<i8> = (0..hidden * m)
            .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
            .collect();
        let output_weights: Vec<i8> = (0..hidden)
            .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
            .collect();
        let thresholds = (0..hidden)
            .map(|i| {
                let s_i = input_weights[i * m..(i + 1) * m]
                    .iter()
                    .filter(|&&w| w == -1)
                    .count();
                (m as f64 + 1.0) * beta - s_i as f64
            })
            .collect();
        Self {
            m,
            input_weights,
            output_weights,
            thresholds,
        }
    }

    /// Test constructor with explicit weights.
    pub fn from_weights(m: usize, beta: f64, input_weights: Vec<i8>, output_weights: Vec<i8>) -> Self {
        assert_eq!(input_weights.len() % m, 0);
        let hidden = input_weights.len() / m;
        assert_eq!(output_weights.len(), hidden);
        let thresholds = (0..hidden)
            .map(|i| {
                let s_i = input_weights[i * m..(i + 1) * m]
                    .iter()
                    .filter(|&&w| w == -1)
                    .count();
                (m as f64 + 1.0) * beta - s_i as f64
            })
            .collect();
        Self {
            m,
            input_weights,
            output_weights,
            thresholds,
        }
    }

    pub fn hidden_units(&self) -> usize {
        self.output_weights.len()
    }

    pub fn input_weights(&self) -> &[i8] {
        &self.input_weights
    }

    pub fn output_weights(&self) -> &[i8] {
        &self.output_weights
    }

    pub fn forward(&self, x: &[u8]) -> f64 {
        assert_eq!(x.len(), self.m);
        let mut y = 0.0;
        for i in 0..self.hidden_units() {
            let w = &self.input_weights[i * self.m..(i + 1) * self.m];
            let mut pre = 0i32;
            for (&wj, &xj) in w.iter().zip(x) {
                if xj != 0 {
                    pre += wj as i32;
                }
            }
            if (pre as f64) > self.thresholds[i] {
                y += self.output_weights[i] as f64;
            }
        }
        y
    }
}

/// Current task state: the frozen slow bits plus the immutable target net.
#[derive(Clone, Debug)]
pub struct ScrState {
    pub m: usize,
    pub f: usize,
    fixed_bits: Vec<u8>,
    pub target_net: LtuNet,
}

impl ScrState {
    /// Samples the initial slow bits uniformly and draws the target network's
    /// +-1 weights. `f` must satisfy `0 < f < m`.
    pub fn init(
        rng: &mut impl Rng,
        m: usize,
        f: usize,
        ltu_hidden: usize,
        ltu_beta: f64,
    ) -> Result<Self, TaskError> {
        if f == 0 || f >= m {
            return Err(TaskError::Config(format!(
                "slow-bit count must satisfy 0 < f < m, got f={f}, m={m}"
            )));
        }
        let fixed_bits: Vec<u8> = (0..f).map(|_| rng.gen_range(0..2u8)).collect();
        let target_net = LtuNet::init(rng, m, ltu_hidden, ltu_beta);
        Ok(Self {
            m,
            f,
            fixed_bits,
            target_net,
        })
    }

    pub fn fixed_bits(&self) -> &[u8] {
        &self.fixed_bits
    }

    /// Draw one example: slow bits as-is, the remaining `m - f` bits fresh
    /// uniform, target from the fixed network.
    pub fn next_example(&self, data_rng: &mut impl Rng) -> (Vec<u8>, f64) {
        let mut x = Vec::with_capacity(self.m);
        x.extend_from_slice(&self.fixed_bits);
        for _ in self.f..self.m {
            x.push(data_rng.gen_range(0..2u8));
        }
        let y = self.target_net.forward(&x);
        (x, y)
    }

    /// Task boundary: toggle exactly one uniformly chosen slow bit.
    pub fn advance_task(&mut self, task_rng: &mut impl Rng) {
        let idx = task_rng.gen_range(0..self.f);
        self.fixed_bits[idx] ^= 1;
    }
}
