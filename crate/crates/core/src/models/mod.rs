//! The four learner architectures: attention-only Transformer, MLP, RNN and
//! ERMLP (an MLP fed the column-flattened embedding), plus the shared readout
//! convention. All forwards are recorded on a [`Tape`] and are differentiable
//! end to end.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{Activation, GradError, Matrix, NodeId, ParamId, Scalar, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Transformer,
    Rnn,
    Ermlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Transformer => "transformer",
            ModelKind::Rnn => "rnn",
            ModelKind::Ermlp => "ermlp",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadoutKind {
    Scalar,
    Logits,
}

/// What to read from the model output: the last `width` entries of the last
/// column, in row order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReadoutSpec {
    pub kind: ReadoutKind,
    pub width: usize,
}

impl ReadoutSpec {
    pub fn scalar() -> Self {
        Self {
            kind: ReadoutKind::Scalar,
            width: 1,
        }
    }

    pub fn logits(width: usize) -> Self {
        Self {
            kind: ReadoutKind::Logits,
            width,
        }
    }
}

/// Slice the last `spec.width` entries of the last column of `z`.
pub fn readout<T: Scalar>(
    tape: &mut Tape<T>,
    z: NodeId,
    spec: ReadoutSpec,
) -> Result<NodeId, GradError> {
    let (rows, cols) = tape.value(z).shape();
    if spec.width == 0 || spec.width > rows {
        return Err(GradError::SliceOutOfBounds {
            row_start: rows.saturating_sub(spec.width),
            row_end: rows,
            col_start: cols - 1,
            col_end: cols,
            rows,
            cols,
        });
    }
    tape.slice(z, rows - spec.width..rows, cols - 1..cols)
}

/// Weights uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)].
pub fn uniform_init<T: Scalar>(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Matrix<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("init shape")
}

// ---------------------------------------------------------------------------
// Transformer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AttnLayer<T> {
    pub w_k: Matrix<T>,
    pub w_q: Matrix<T>,
    pub w_v: Matrix<T>,
}

/// Attention-only residual Transformer: no feed-forward sublayers, no
/// positional encoding, no layer norm, no output layer, no biases, and no
/// 1/sqrt(d_k) logit scaling.
#[derive(Clone, Debug)]
pub struct TransformerParams<T> {
    pub d_model: usize,
    pub d_k: usize,
    pub layers: Vec<AttnLayer<T>>,
}

impl<T: Scalar> TransformerParams<T> {
    pub fn init(rng: &mut impl Rng, d_model: usize, d_k: usize, n_layers: usize) -> Self {
        assert!(n_layers >= 1, "transformer needs at least one layer");
        let layers = (0..n_layers)
            .map(|_| AttnLayer {
                w_k: uniform_init(rng, d_k, d_model, d_model),
                w_q: uniform_init(rng, d_k, d_model, d_model),
                w_v: uniform_init(rng, d_model, d_model, d_model),
            })
            .collect();
        Self {
            d_model,
            d_k,
            layers,
        }
    }

    /// One residual block per layer: `Z <- Z + W_v Z softmax(Zᵀ W_kᵀ W_q Z)`.
    pub fn forward(&self, tape: &mut Tape<T>, z0: NodeId) -> Result<NodeId, GradError> {
        let (rows, cols) = tape.value(z0).shape();
        if rows != self.d_model {
            return Err(GradError::ShapeMismatch {
                op: "transformer_forward",
                lhs_rows: self.d_model,
                lhs_cols: self.d_model,
                rhs_rows: rows,
                rhs_cols: cols,
            });
        }
        let nodes: Vec<(NodeId, NodeId, NodeId)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    tape.param(ParamId(3 * i), &l.w_k),
                    tape.param(ParamId(3 * i + 1), &l.w_q),
                    tape.param(ParamId(3 * i + 2), &l.w_v),
                )
            })
            .collect();
        let mut z = z0;
        for (wk, wq, wv) in nodes {
            let k = tape.matmul(wk, z)?;
            let q = tape.matmul(wq, z)?;
            let kt = tape.transpose(k);
            let logits = tape.matmul(kt, q)?;
            let attn = tape.row_softmax(logits);
            let v = tape.matmul(wv, z)?;
            let mixed = tape.matmul(v, attn)?;
            z = tape.add(z, mixed)?;
        }
        Ok(z)
    }

    pub fn param_count(&self) -> usize {
        self.layers.len() * (2 * self.d_k * self.d_model + self.d_model * self.d_model)
    }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// Input layer, hidden stack, output layer; activation after every layer
/// except the output. Weights are `out x in`, biases `out x 1`.
#[derive(Clone, Debug)]
pub struct MlpParams<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Matrix<T>>,
    pub activation: Activation,
}

impl<T: Scalar> MlpParams<T> {
    /// `widths` = [input, hidden..., output].
    pub fn init(rng: &mut impl Rng, widths: &[usize], activation: Activation) -> Self {
        assert!(widths.len() >= 2, "mlp needs at least input and output widths");
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            weights.push(uniform_init(rng, fan_out, fan_in, fan_in));
            biases.push(Matrix::zeros(fan_out, 1));
        }
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_width(&self) -> usize {
        self.weights.last().expect("nonempty").rows()
    }

    /// Forward of an `in x B` node; bias broadcast over columns is expressed
    /// as `bias * ones(1,B)` so it stays inside the primitive set.
    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId) -> Result<NodeId, GradError> {
        let (rows, batch) = tape.value(x).shape();
        if rows != self.input_width() {
            return Err(GradError::ShapeMismatch {
                op: "mlp_forward",
                lhs_rows: self.input_width(),
                lhs_cols: 1,
                rhs_rows: rows,
                rhs_cols: batch,
            });
        }
        let nodes: Vec<(NodeId, NodeId)> = self
            .weights
            .iter()
            .zip(&self.biases)
            .enumerate()
            .map(|(i, (w, b))| {
                (
                    tape.param(ParamId(2 * i), w),
                    tape.param(ParamId(2 * i + 1), b),
                )
            })
            .collect();
        let ones = if batch > 1 {
            Some(tape.input(Matrix::filled(1, batch, T::one())))
        } else {
            None
        };
        let n_layers = nodes.len();
        let mut h = x;
        for (i, (wn, bn)) in nodes.into_iter().enumerate() {
            let lin = tape.matmul(wn, h)?;
            let biased = match ones {
                Some(o) => {
                    let bcast = tape.matmul(bn, o)?;
                    tape.add(lin, bcast)?
                }
                None => tape.add(lin, bn)?,
            };
            h = if i + 1 < n_layers {
                tape.activation(biased, self.activation)
            } else {
                biased
            };
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .chain(&self.biases)
            .map(|m| m.len())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// RNN
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RnnLayer<T> {
    pub w_ih: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub b_ih: Matrix<T>,
    pub b_hh: Matrix<T>,
}

/// Stacked tanh RNN cells: `h' = tanh(W_ih x + b_ih + W_hh h + b_hh)`,
/// hidden states initialized to zero, columns processed left to right.
#[derive(Clone, Debug)]
pub struct RnnParams<T> {
    pub hidden: usize,
    pub layers: Vec<RnnLayer<T>>,
}

impl<T: Scalar> RnnParams<T> {
    pub fn init(rng: &mut impl Rng, input_dim: usize, hidden: usize, n_layers: usize) -> Self {
        assert!(n_layers >= 1, "rnn needs at least one layer");
        let layers = (0..n_layers)
            .map(|l| {
                let fan_in = if l == 0 { input_dim } else { hidden };
                RnnLayer {
                    w_ih: uniform_init(rng, hidden, fan_in, fan_in),
                    w_hh: uniform_init(rng, hidden, hidden, hidden),
                    b_ih: Matrix::zeros(hidden, 1),
                    b_hh: Matrix::zeros(hidden, 1),
                }
            })
            .collect();
        Self { hidden, layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w_ih.cols()
    }

    /// Returns the final layer's hidden state after the last column.
    pub fn forward(&self, tape: &mut Tape<T>, z: NodeId) -> Result<NodeId, GradError> {
        let (rows, cols) = tape.value(z).shape();
        if rows != self.input_width() {
            return Err(GradError::ShapeMismatch {
                op: "rnn_forward",
                lhs_rows: self.input_width(),
                lhs_cols: 1,
                rhs_rows: rows,
                rhs_cols: cols,
            });
        }
        let nodes: Vec<(NodeId, NodeId, NodeId, NodeId)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    tape.param(ParamId(4 * i), &l.w_ih),
                    tape.param(ParamId(4 * i + 1), &l.w_hh),
                    tape.param(ParamId(4 * i + 2), &l.b_ih),
                    tape.param(ParamId(4 * i + 3), &l.b_hh),
                )
            })
            .collect();
        let mut state: Vec<NodeId> = (0..self.layers.len())
            .map(|_| tape.input(Matrix::zeros(self.hidden, 1)))
            .collect();
        for j in 0..cols {
            let mut x = tape.slice(z, 0..rows, j..j + 1)?;
            for (l, &(w_ih, w_hh, b_ih, b_hh)) in nodes.iter().enumerate() {
                let ih = tape.matmul(w_ih, x)?;
                let ih = tape.add(ih, b_ih)?;
                let hh = tape.matmul(w_hh, state[l])?;
                let hh = tape.add(hh, b_hh)?;
                let pre = tape.add(ih, hh)?;
                state[l] = tape.tanh(pre);
                x = state[l];
            }
        }
        Ok(*state.last().expect("nonempty"))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w_ih.len() + l.w_hh.len() + l.b_ih.len() + l.b_hh.len())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Unified model handle
// ---------------------------------------------------------------------------

/// Total scalar count of an arbitrary parameter list.
pub fn param_count_of<T: Scalar>(mats: &[&Matrix<T>]) -> usize {
    mats.iter().map(|m| m.len()).sum()
}

#[derive(Clone, Debug)]
pub enum ModelParams<T> {
    Mlp(MlpParams<T>),
    Transformer(TransformerParams<T>),
    Rnn(RnnParams<T>),
    /// An MLP that consumes the column-flattened embedding.
    Ermlp(MlpParams<T>),
}

impl<T: Scalar> ModelParams<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Mlp(_) => ModelKind::Mlp,
            ModelParams::Transformer(_) => ModelKind::Transformer,
            ModelParams::Rnn(_) => ModelKind::Rnn,
            ModelParams::Ermlp(_) => ModelKind::Ermlp,
        }
    }

    /// Map an input node (embedding matrix, or raw feature column for the
    /// plain MLP) to the model's output node.
    pub fn forward(&self, tape: &mut Tape<T>, z: NodeId) -> Result<NodeId, GradError> {
        match self {
            ModelParams::Mlp(m) => m.forward(tape, z),
            ModelParams::Transformer(t) => t.forward(tape, z),
            ModelParams::Rnn(r) => r.forward(tape, z),
            ModelParams::Ermlp(m) => {
                let flat = tape.flatten_cols(z);
                m.forward(tape, flat)
            }
        }
    }

    /// Forward plus readout of a single example.
    pub fn predict(
        &self,
        tape: &mut Tape<T>,
        z: NodeId,
        spec: ReadoutSpec,
    ) -> Result<NodeId, GradError> {
        let out = self.forward(tape, z)?;
        readout(tape, out, spec)
    }

    /// Canonical parameter order; matches the `ParamId`s the forwards assign.
    pub fn params(&self) -> Vec<&Matrix<T>> {
        match self {
            ModelParams::Mlp(m) | ModelParams::Ermlp(m) => m
                .weights
                .iter()
                .zip(&m.biases)
                .flat_map(|(w, b)| [w, b])
                .collect(),
            ModelParams::Transformer(t) => t
                .layers
                .iter()
                .flat_map(|l| [&l.w_k, &l.w_q, &l.w_v])
                .collect(),
            ModelParams::Rnn(r) => r
                .layers
                .iter()
                .flat_map(|l| [&l.w_ih, &l.w_hh, &l.b_ih, &l.b_hh])
                .collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        match self {
            ModelParams::Mlp(m) | ModelParams::Ermlp(m) => m
                .weights
                .iter_mut()
                .zip(&mut m.biases)
                .flat_map(|(w, b)| [w, b])
                .collect(),
            ModelParams::Transformer(t) => t
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.w_k, &mut l.w_q, &mut l.w_v])
                .collect(),
            ModelParams::Rnn(r) => r
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.w_ih, &mut l.w_hh, &mut l.b_ih, &mut l.b_hh])
                .collect(),
        }
    }

    /// Overwrite all parameters from a slice in canonical order.
    pub fn assign(&mut self, values: &[Matrix<T>]) {
        let mut slots = self.params_mut();
        assert_eq!(slots.len(), values.len(), "parameter count mismatch");
        for (slot, v) in slots.iter_mut().zip(values) {
            assert_eq!(slot.shape(), v.shape(), "parameter shape mismatch");
            **slot = v.clone();
        }
    }

    pub fn param_count(&self) -> usize {
        param_count_of(&self.params())
    }

    pub fn named_params(&self) -> Vec<(String, &Matrix<T>)> {
        match self {
            ModelParams::Mlp(m) | ModelParams::Ermlp(m) => m
                .weights
                .iter()
                .zip(&m.biases)
                .enumerate()
                .flat_map(|(i, (w, b))| {
                    [
                        (format!("layer{i}.weight"), w),
                        (format!("layer{i}.bias"), b),
                    ]
                })
                .collect(),
            ModelParams::Transformer(t) => t
                .layers
                .iter()
                .enumerate()
                .flat_map(|(i, l)| {
                    [
                        (format!("layer{i}.w_k"), &l.w_k),
                        (format!("layer{i}.w_q"), &l.w_q),
                        (format!("layer{i}.w_v"), &l.w_v),
                    ]
                })
                .collect(),
            ModelParams::Rnn(r) => r
                .layers
                .iter()
                .enumerate()
                .flat_map(|(i, l)| {
                    [
                        (format!("layer{i}.w_ih"), &l.w_ih),
                        (format!("layer{i}.w_hh"), &l.w_hh),
                        (format!("layer{i}.b_ih"), &l.b_ih),
                        (format!("layer{i}.b_hh"), &l.b_hh),
                    ]
                })
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        fn cast_mlp<T: Scalar, U: Scalar>(m: &MlpParams<T>) -> MlpParams<U> {
            MlpParams {
                weights: m.weights.iter().map(Matrix::cast).collect(),
                biases: m.biases.iter().map(Matrix::cast).collect(),
                activation: m.activation,
            }
        }
        match self {
            ModelParams::Mlp(m) => ModelParams::Mlp(cast_mlp(m)),
            ModelParams::Ermlp(m) => ModelParams::Ermlp(cast_mlp(m)),
            ModelParams::Transformer(t) => ModelParams::Transformer(TransformerParams {
                d_model: t.d_model,
                d_k: t.d_k,
                layers: t
                    .layers
                    .iter()
                    .map(|l| AttnLayer {
                        w_k: l.w_k.cast(),
                        w_q: l.w_q.cast(),
                        w_v: l.w_v.cast(),
                    })
                    .collect(),
            }),
            ModelParams::Rnn(r) => ModelParams::Rnn(RnnParams {
                hidden: r.hidden,
                layers: r
                    .layers
                    .iter()
                    .map(|l| RnnLayer {
                        w_ih: l.w_ih.cast(),
                        w_hh: l.w_hh.cast(),
                        b_ih: l.b_ih.cast(),
                        b_hh: l.b_hh.cast(),
                    })
                    .collect(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        uniform_init(rng, r, c, 1)
    }

    // Literal re-implementation of the two attention equations with plain
    // loops and an unnormalized-exponentials softmax; independent of the tape.
    fn naive_transformer(layers: &[(Matrix<f64>, Matrix<f64>, Matrix<f64>)], z0: &Matrix<f64>) -> Matrix<f64> {
        fn mm(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
            let mut out = Matrix::zeros(a.rows(), b.cols());
            for i in 0..a.rows() {
                for j in 0..b.cols() {
                    let mut s = 0.0;
                    for k in 0..a.cols() {
                        s += a.get(i, k) * b.get(k, j);
                    }
                    out.set(i, j, s);
                }
            }
            out
        }
        let mut z = z0.clone();
        for (wk, wq, wv) in layers {
            let logits = mm(&mm(&mm(&z.transposed(), &wk.transposed()), wq), &z);
            let mut soft = Matrix::zeros(logits.rows(), logits.cols());
            for i in 0..logits.rows() {
                let denom: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
                for j in 0..logits.cols() {
                    soft.set(i, j, logits.get(i, j).exp() / denom);
                }
            }
            let attn = mm(&mm(wv, &z), &soft);
            let mut next = z.clone();
            next.add_assign(&attn);
            z = next;
        }
        z
    }

    #[test]
    fn zero_value_weights_make_identity() {
        let mut r = rng(1);
        let mut params = TransformerParams::<f64>::init(&mut r, 4, 2, 3);
        for l in &mut params.layers {
            l.w_v = Matrix::zeros(4, 4);
        }
        let z0 = random_matrix(&mut r, 4, 5);
        let mut tape = Tape::new();
        let zi = tape.input(z0.clone());
        let out = params.forward(&mut tape, zi).unwrap();
        assert_eq!(tape.value(out), &z0, "residual-only path must be exact");
    }

    #[test]
    fn single_token_single_layer_is_analytic() {
        // One token: the 1x1 softmax is exactly 1, so out = z0 + Wv z0.
        let mut r = rng(2);
        let params = TransformerParams::<f64>::init(&mut r, 3, 2, 1);
        let z0 = random_matrix(&mut r, 3, 1);
        let mut tape = Tape::new();
        let zi = tape.input(z0.clone());
        let out = params.forward(&mut tape, zi).unwrap();

        let wv = &params.layers[0].w_v;
        let mut expect = z0.clone();
        expect.add_assign(&crate::grad::mm_nn(wv, &z0));
        assert!(tape.value(out).max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn transformer_matches_naive_oracle() {
        let mut r = rng(3);
        let params = TransformerParams::<f64>::init(&mut r, 3, 2, 2);
        let z0 = random_matrix(&mut r, 3, 4);
        let mut tape = Tape::new();
        let zi = tape.input(z0.clone());
        let out = params.forward(&mut tape, zi).unwrap();

        let layers: Vec<_> = params
            .layers
            .iter()
            .map(|l| (l.w_k.clone(), l.w_q.clone(), l.w_v.clone()))
            .collect();
        let want = naive_transformer(&layers, &z0);
        assert!(tape.value(out).max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn transformer_rejects_wrong_row_count() {
        let mut r = rng(4);
        let params = TransformerParams::<f64>::init(&mut r, 4, 2, 1);
        let z0 = random_matrix(&mut r, 3, 2);
        let mut tape = Tape::new();
        let zi = tape.input(z0);
        assert!(params.forward(&mut tape, zi).is_err());
    }

    #[test]
    fn readout_of_context_permutation_is_invariant() {
        use rand::seq::SliceRandom;
        let mut r = rng(5);
        let params = TransformerParams::<f32>::init(&mut r, 5, 3, 2);
        let z0: Matrix<f32> = random_matrix(&mut r, 5, 7).cast();

        let mut tape = Tape::new();
        let zi = tape.input(z0.clone());
        let out = params.forward(&mut tape, zi).unwrap();
        let ro = readout(&mut tape, out, ReadoutSpec::scalar()).unwrap();
        let base = tape.value(ro).get(0, 0);

        for _ in 0..5 {
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut r);
            let mut permuted = Matrix::zeros(5, 7);
            for (newj, &oldj) in order.iter().enumerate() {
                for i in 0..5 {
                    permuted.set(i, newj, z0.get(i, oldj));
                }
            }
            for i in 0..5 {
                permuted.set(i, 6, z0.get(i, 6));
            }
            let mut tape2 = Tape::new();
            let zi2 = tape2.input(permuted);
            let out2 = params.forward(&mut tape2, zi2).unwrap();
            let ro2 = readout(&mut tape2, out2, ReadoutSpec::scalar()).unwrap();
            let got = tape2.value(ro2).get(0, 0);
            assert!(
                (got - base).abs() < 1e-5,
                "readout changed under context permutation: {} vs {}",
                got,
                base
            );
        }
    }

    #[test]
    fn readout_examples() {
        let mut tape = Tape::<f64>::new();
        let z = tape.input(Matrix::from_rows(&[&[1.0], &[2.0], &[3.0]]));
        let s = readout(&mut tape, z, ReadoutSpec::scalar()).unwrap();
        assert_eq!(tape.value(s).get(0, 0), 3.0);

        // 59x101 with logits width 10 picks rows 49..59 of the last column.
        let mut big = Matrix::zeros(59, 101);
        for i in 0..59 {
            big.set(i, 100, i as f64);
        }
        let zb = tape.input(big);
        let l = readout(&mut tape, zb, ReadoutSpec::logits(10)).unwrap();
        assert_eq!(tape.value(l).shape(), (10, 1));
        assert_eq!(tape.value(l).col_vec(0), (49..59).map(|v| v as f64).collect::<Vec<_>>());

        // scalar equals logits of width 1
        let z2 = tape.input(Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let a = readout(&mut tape, z2, ReadoutSpec::scalar()).unwrap();
        let b = readout(&mut tape, z2, ReadoutSpec::logits(1)).unwrap();
        assert_eq!(tape.value(a), tape.value(b));

        // width too large
        let z3 = tape.input(Matrix::zeros(2, 2));
        assert!(readout(&mut tape, z3, ReadoutSpec::logits(3)).is_err());
    }

    #[test]
    fn mlp_zero_params_give_zero_output() {
        let mut r = rng(6);
        let mut mlp = MlpParams::<f64>::init(&mut r, &[3, 4, 2], Activation::Relu);
        for w in &mut mlp.weights {
            *w = Matrix::zeros(w.rows(), w.cols());
        }
        let mut tape = Tape::new();
        let x = tape.input(Matrix::column(&[1.0, -2.0, 0.5]));
        let out = mlp.forward(&mut tape, x).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_hand_computed_value() {
        // 2 -> 2 -> 1 ReLU net evaluated by hand:
        // h = relu([1*1+2*1+0.5, 3*1+4*1-1]) = [3.5, 6]; out = 3.5 - 6 + 0.25
        let mut mlp = MlpParams::<f64> {
            weights: vec![
                Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]),
                Matrix::from_rows(&[&[1.0, -1.0]]),
            ],
            biases: vec![
                Matrix::column(&[0.5, -1.0]),
                Matrix::column(&[0.25]),
            ],
            activation: Activation::Relu,
        };
        let mut tape = Tape::new();
        let x = tape.input(Matrix::column(&[1.0, 1.0]));
        let out = mlp.forward(&mut tape, x).unwrap();
        assert!((tape.value(out).get(0, 0) - (-2.25)).abs() < 1e-15);

        // tanh variant sanity: output changes but stays finite
        mlp.activation = Activation::Tanh;
        let mut tape2 = Tape::new();
        let x2 = tape2.input(Matrix::column(&[1.0, 1.0]));
        let out2 = mlp.forward(&mut tape2, x2).unwrap();
        assert!(tape2.value(out2).is_finite());
    }

    #[test]
    fn mlp_batched_forward_matches_per_example() {
        let mut r = rng(7);
        let mlp = MlpParams::<f64>::init(&mut r, &[3, 5, 2], Activation::Relu);
        let x1 = Matrix::column(&[0.3, -0.4, 0.9]);
        let x2 = Matrix::column(&[-1.1, 0.2, 0.5]);
        let mut batch = Matrix::zeros(3, 2);
        for i in 0..3 {
            batch.set(i, 0, x1.get(i, 0));
            batch.set(i, 1, x2.get(i, 0));
        }
        let mut tape = Tape::new();
        let b = tape.input(batch);
        let ob = mlp.forward(&mut tape, b).unwrap();

        for (j, x) in [x1, x2].into_iter().enumerate() {
            let mut t = Tape::new();
            let xi = t.input(x);
            let o = mlp.forward(&mut t, xi).unwrap();
            for i in 0..2 {
                assert!((t.value(o).get(i, 0) - tape.value(ob).get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rnn_zero_input_zero_bias_keeps_zero_state() {
        let mut r = rng(8);
        let rnn = RnnParams::<f64>::init(&mut r, 3, 4, 2);
        let mut tape = Tape::new();
        let z = tape.input(Matrix::zeros(3, 5));
        let h = rnn.forward(&mut tape, z).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rnn_single_column_is_one_cell_application() {
        let mut r = rng(9);
        let rnn = RnnParams::<f64>::init(&mut r, 2, 3, 1);
        let x = Matrix::column(&[0.7, -0.3]);
        let mut tape = Tape::new();
        let z = tape.input(x.clone());
        let h = rnn.forward(&mut tape, z).unwrap();

        // hand: tanh(W_ih x + b_ih + W_hh*0 + b_hh)
        let l = &rnn.layers[0];
        let mut pre = crate::grad::mm_nn(&l.w_ih, &x);
        pre.add_assign(&l.b_ih);
        pre.add_assign(&l.b_hh);
        let want = pre.map(f64::tanh);
        assert!(tape.value(h).max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn rnn_two_column_hand_unrolled() {
        let mut r = rng(10);
        let rnn = RnnParams::<f64>::init(&mut r, 2, 2, 1);
        let z = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut tape = Tape::new();
        let zi = tape.input(z.clone());
        let h = rnn.forward(&mut tape, zi).unwrap();

        let l = &rnn.layers[0];
        let step = |x: &Matrix<f64>, hprev: &Matrix<f64>| {
            let mut pre = crate::grad::mm_nn(&l.w_ih, x);
            pre.add_assign(&l.b_ih);
            pre.add_assign(&crate::grad::mm_nn(&l.w_hh, hprev));
            pre.add_assign(&l.b_hh);
            pre.map(f64::tanh)
        };
        let h1 = step(&Matrix::column(&[1.0, 0.0]), &Matrix::zeros(2, 1));
        let h2 = step(&Matrix::column(&[0.0, 1.0]), &h1);
        assert!(tape.value(h).max_abs_diff(&h2) < 1e-15);
    }

    #[test]
    fn rnn_zero_prefix_invariance_depends_on_bias() {
        let mut r = rng(11);
        let mut rnn = RnnParams::<f64>::init(&mut r, 2, 3, 1);
        let z = random_matrix(&mut r, 2, 3);
        let mut padded = Matrix::zeros(2, 5);
        for i in 0..2 {
            for j in 0..3 {
                padded.set(i, j + 2, z.get(i, j));
            }
        }

        let run = |rnn: &RnnParams<f64>, m: &Matrix<f64>| {
            let mut tape = Tape::new();
            let zi = tape.input(m.clone());
            let h = rnn.forward(&mut tape, zi).unwrap();
            tape.value(h).clone()
        };

        // zero biases: prepending zero columns cannot move the state
        assert!(run(&rnn, &z).max_abs_diff(&run(&rnn, &padded)) < 1e-15);

        // nonzero bias: invariance must break
        rnn.layers[0].b_ih = Matrix::filled(3, 1, 0.3);
        assert!(run(&rnn, &z).max_abs_diff(&run(&rnn, &padded)) > 1e-6);
    }

    #[test]
    fn ermlp_consumes_column_flattened_embedding() {
        let mut r = rng(12);
        let mlp = MlpParams::<f64>::init(&mut r, &[4, 3, 1], Activation::Relu);
        let model = ModelParams::Ermlp(mlp.clone());
        let z = Matrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]);

        let mut tape = Tape::new();
        let zi = tape.input(z);
        let out = model.forward(&mut tape, zi).unwrap();

        let mut tape2 = Tape::new();
        let flat = tape2.input(Matrix::column(&[1.0, 2.0, 3.0, 4.0]));
        let out2 = mlp.forward(&mut tape2, flat).unwrap();
        assert_eq!(tape.value(out), tape2.value(out2));

        // zero embedding equals MLP on the zero vector
        let mut tape3 = Tape::new();
        let zz = tape3.input(Matrix::zeros(2, 2));
        let out3 = model.forward(&mut tape3, zz).unwrap();
        let mut tape4 = Tape::new();
        let zv = tape4.input(Matrix::zeros(4, 1));
        let out4 = mlp.forward(&mut tape4, zv).unwrap();
        assert_eq!(tape3.value(out3), tape4.value(out4));
    }

    #[test]
    fn ermlp_input_width_for_replay_embedding() {
        // 21-row embedding over a capacity-100 buffer: 21 * 101 = 2121.
        assert_eq!(21 * 101, 2121);
        let mut r = rng(13);
        let mlp = MlpParams::<f64>::init(&mut r, &[2121, 20, 20, 1], Activation::Relu);
        let model = ModelParams::Ermlp(mlp);
        let mut tape = Tape::new();
        let z = tape.input(Matrix::zeros(21, 101));
        assert!(model.forward(&mut tape, z).is_ok());
    }

    #[test]
    fn param_counts_match_closed_forms() {
        let mut r = rng(14);
        // classification configs
        let mlp = MlpParams::<f32>::init(&mut r, &[49, 2000, 2000, 2000, 10], Activation::Relu);
        assert_eq!(mlp.param_count(), 8_124_010);
        let tf = TransformerParams::<f32>::init(&mut r, 59, 30, 10);
        assert_eq!(tf.param_count(), 70_210);
        assert!((tf.param_count() as f64) / (mlp.param_count() as f64) < 0.01);

        // formula holds for arbitrary shapes
        for (d_model, d_k, layers) in [(3usize, 2usize, 1usize), (8, 4, 5), (21, 11, 2)] {
            let t = TransformerParams::<f32>::init(&mut r, d_model, d_k, layers);
            assert_eq!(
                t.param_count(),
                layers * (2 * d_k * d_model + d_model * d_model)
            );
            assert_eq!(ModelParams::Transformer(t).param_count(), layers * (2 * d_k * d_model + d_model * d_model));
        }

        let empty: [&Matrix<f32>; 0] = [];
        assert_eq!(param_count_of(&empty), 0);
    }

    #[test]
    fn every_architecture_grad_checks() {
        use crate::grad::{grad_check, ParamId};
        let mut r = rng(15);
        let archs: Vec<ModelParams<f64>> = vec![
            ModelParams::Mlp(MlpParams::init(&mut r, &[4, 6, 1], Activation::Relu)),
            ModelParams::Transformer(TransformerParams::init(&mut r, 4, 2, 2)),
            ModelParams::Rnn(RnnParams::init(&mut r, 4, 5, 2)),
            ModelParams::Ermlp(MlpParams::init(&mut r, &[20, 6, 1], Activation::Relu)),
        ];
        for model in archs {
            let z: Matrix<f64> = if matches!(model.kind(), ModelKind::Mlp) {
                random_matrix(&mut r, 4, 1)
            } else {
                random_matrix(&mut r, 4, 5)
            };
            let target = 0.37;
            let proto = model.clone();
            let report = grad_check(
                move |tape: &mut Tape<f64>, ps: &[Matrix<f64>]| {
                    let mut m = proto.clone();
                    m.assign(ps);
                    let zi = tape.input(z.clone());
                    let pred = m.predict(tape, zi, ReadoutSpec::scalar())?;
                    tape.mse(pred, target)
                },
                &model.params().into_iter().cloned().collect::<Vec<_>>(),
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(
                report.passed,
                "{:?}: max rel err {:.3e}",
                model.kind(),
                report.max_rel_error
            );
        }
    }
}
