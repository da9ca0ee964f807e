//! Define-by-run computation tape. A tape is rebuilt for every training step;
//! nodes are appended in topological order, so reverse iteration is a valid
//! backward schedule. Parameter leaves are tagged with stable [`ParamId`]s and
//! receive gradients in a [`GradientMap`].

use std::collections::BTreeMap;
use std::ops::Range;

use super::matrix::{mm_nn, mm_nt, mm_nt_acc, mm_tn, mm_tn_acc, Matrix};
use super::{GradError, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Index of a trainable parameter in the owning model's canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    RowSoftmax(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Slice {
        input: NodeId,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    FlattenCols(NodeId),
    Mse {
        pred: NodeId,
        target: T,
    },
    CrossEntropy {
        logits: NodeId,
        hot: usize,
        probs: Vec<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    param: Option<ParamId>,
}

/// Gradients keyed by parameter id. Keys are exactly the parameter ids
/// registered on the tape that produced the map; parameters not reached from
/// the backward root hold all-zero matrices.
#[derive(Clone, Debug)]
pub struct GradientMap<T> {
    entries: BTreeMap<usize, Matrix<T>>,
}

impl<T: Scalar> GradientMap<T> {
    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.entries.get(&id.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix<T>)> {
        self.entries.iter().map(|(&k, v)| (ParamId(k), v))
    }

    pub fn scale_in_place(&mut self, c: T) {
        for m in self.entries.values_mut() {
            for v in m.data_mut() {
                *v = *v * c;
            }
        }
    }

    /// Elementwise sum of two maps over identical key sets.
    pub fn add(&self, other: &Self) -> Result<Self, GradError> {
        let mut out = self.clone();
        for (k, m) in &other.entries {
            let slot = out
                .entries
                .get_mut(k)
                .ok_or(GradError::MissingGradient(*k))?;
            slot.add_assign(m);
        }
        Ok(out)
    }

    /// Accumulate `other` into `self`, inserting fresh keys as needed.
    pub fn accumulate(&mut self, other: &Self) {
        for (k, m) in &other.entries {
            match self.entries.get_mut(k) {
                Some(slot) => slot.add_assign(m),
                None => {
                    self.entries.insert(*k, m.clone());
                }
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, NodeId)>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> Result<T, GradError> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(GradError::NonScalarNode {
                op: "scalar",
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        Ok(v.get(0, 0))
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        id
    }

    /// Non-trainable leaf (data, constants).
    pub fn input(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf. Ids must be unique per tape.
    pub fn param(&mut self, id: ParamId, value: &Matrix<T>) -> NodeId {
        assert!(
            self.params.iter().all(|(p, _)| *p != id),
            "parameter {:?} registered twice on one tape",
            id
        );
        let node = self.push(value.clone(), Op::Leaf);
        self.nodes[node.0].param = Some(id);
        self.params.push((id, node));
        node
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.params.iter().map(|(p, _)| *p).collect()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        let value = mm_nn(self.value(a), self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transposed();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) != (br, bc) {
            return Err(GradError::ShapeMismatch {
                op: "add",
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let value = self.value(a).scaled(c);
        self.push(value, Op::Scale(a, c))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let value = row_softmax_value(self.value(a));
        self.push(value, Op::RowSoftmax(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.tanh());
        self.push(value, Op::Tanh(a))
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::Tanh => self.tanh(a),
        }
    }

    pub fn slice(
        &mut self,
        a: NodeId,
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> Result<NodeId, GradError> {
        let (r, c) = self.value(a).shape();
        if rows.start >= rows.end || cols.start >= cols.end || rows.end > r || cols.end > c {
            return Err(GradError::SliceOutOfBounds {
                row_start: rows.start,
                row_end: rows.end,
                col_start: cols.start,
                col_end: cols.end,
                rows: r,
                cols: c,
            });
        }
        let src = self.value(a);
        let mut out = Matrix::zeros(rows.end - rows.start, cols.end - cols.start);
        for i in rows.clone() {
            for j in cols.clone() {
                out.set(i - rows.start, j - cols.start, src.get(i, j));
            }
        }
        Ok(self.push(out, Op::Slice { input: a, rows, cols }))
    }

    /// Column-major flatten to a `(rows*cols) x 1` vector: columns are
    /// concatenated top to bottom, left to right.
    pub fn flatten_cols(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let (r, c) = src.shape();
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(src.get(i, j));
            }
        }
        let value = Matrix::from_vec(r * c, 1, data).expect("flatten shape");
        self.push(value, Op::FlattenCols(a))
    }

    /// Squared error `(pred - target)^2` of a scalar node.
    pub fn mse(&mut self, pred: NodeId, target: T) -> Result<NodeId, GradError> {
        let p = self.value(pred);
        if p.shape() != (1, 1) {
            return Err(GradError::NonScalarNode {
                op: "mse",
                rows: p.rows(),
                cols: p.cols(),
            });
        }
        let d = p.get(0, 0) - target;
        let value = Matrix::filled(1, 1, d * d);
        Ok(self.push(value, Op::Mse { pred, target }))
    }

    /// Cross-entropy of a `k x 1` logits node against a one-hot target,
    /// with the softmax applied internally.
    pub fn cross_entropy(&mut self, logits: NodeId, onehot: &[T]) -> Result<NodeId, GradError> {
        let lv = self.value(logits);
        if lv.cols() != 1 {
            return Err(GradError::NonScalarNode {
                op: "cross_entropy logits (expected column vector)",
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        if onehot.len() != lv.rows() {
            return Err(GradError::InvalidOneHot(format!(
                "one-hot length {} does not match {} logits",
                onehot.len(),
                lv.rows()
            )));
        }
        let mut hot = None;
        for (i, &v) in onehot.iter().enumerate() {
            if v == T::one() {
                if hot.is_some() {
                    return Err(GradError::InvalidOneHot("more than one entry set".into()));
                }
                hot = Some(i);
            } else if v != T::zero() {
                return Err(GradError::InvalidOneHot(format!(
                    "entry {} is {} (must be 0 or 1)",
                    i, v
                )));
            }
        }
        let hot = hot.ok_or_else(|| GradError::InvalidOneHot("no entry set".into()))?;

        // Stable log-softmax: -log p_hot = logsumexp(z - max) - (z_hot - max)
        let z: Vec<T> = lv.col_vec(0);
        let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        let mut probs = Vec::with_capacity(z.len());
        for &v in &z {
            let e = (v - max).exp();
            probs.push(e);
            sum = sum + e;
        }
        for p in &mut probs {
            *p = *p / sum;
        }
        let loss = sum.ln() - (z[hot] - max);
        let value = Matrix::filled(1, 1, loss);
        Ok(self.push(value, Op::CrossEntropy { logits, hot, probs }))
    }

    /// Reverse-mode gradients of a scalar root with seed adjoint 1.
    pub fn backward(&self, root: NodeId) -> Result<GradientMap<T>, GradError> {
        self.backward_seeded(root, T::one())
    }

    /// Reverse-mode gradients of `seed * root`. Every registered parameter
    /// gets an entry; parameters the root does not depend on get zeros.
    pub fn backward_seeded(&self, root: NodeId, seed: T) -> Result<GradientMap<T>, GradError> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(GradError::NonScalarRoot {
                rows: rv.rows(),
                cols: rv.cols(),
            });
        }
        let mut adjoints: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        adjoints[root.0] = Some(Matrix::filled(1, 1, seed));

        let mut grads: BTreeMap<usize, Matrix<T>> = BTreeMap::new();

        for idx in (0..=root.0).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if let Some(pid) = node.param {
                        grads.insert(pid.0, g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    match &mut adjoints[a.0] {
                        Some(da) => mm_nt_acc(&g, bv, da),
                        slot @ None => *slot = Some(mm_nt(&g, bv)),
                    }
                    match &mut adjoints[b.0] {
                        Some(db) => mm_tn_acc(av, &g, db),
                        slot @ None => *slot = Some(mm_tn(av, &g)),
                    }
                }
                Op::Transpose(a) => {
                    accumulate(&mut adjoints[a.0], g.transposed());
                }
                Op::Add(a, b) => {
                    if a == b {
                        let mut two_g = g.clone();
                        two_g.add_assign(&g);
                        accumulate(&mut adjoints[a.0], two_g);
                    } else {
                        accumulate(&mut adjoints[a.0], g.clone());
                        accumulate(&mut adjoints[b.0], g);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut adjoints[a.0], g.scaled(*c));
                }
                Op::RowSoftmax(a) => {
                    let s = &node.value;
                    let mut da = Matrix::zeros(s.rows(), s.cols());
                    for i in 0..s.rows() {
                        let srow = s.row(i);
                        let grow = g.row(i);
                        let inner = super::matrix::dot(grow, srow);
                        let out = da.row_mut(i);
                        for j in 0..srow.len() {
                            out[j] = srow[j] * (grow[j] - inner);
                        }
                    }
                    accumulate(&mut adjoints[a.0], da);
                }
                Op::Relu(a) => {
                    let input = &self.nodes[a.0].value;
                    let mut da = g;
                    for (d, &x) in da.data_mut().iter_mut().zip(input.data()) {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut adjoints[a.0], da);
                }
                Op::Tanh(a) => {
                    let out = &node.value;
                    let mut da = g;
                    for (d, &y) in da.data_mut().iter_mut().zip(out.data()) {
                        *d = *d * (T::one() - y * y);
                    }
                    accumulate(&mut adjoints[a.0], da);
                }
                Op::Slice { input, rows, cols } => {
                    let src = &self.nodes[input.0].value;
                    ensure_zero(&mut adjoints[input.0], src.shape());
                    let da = adjoints[input.0].as_mut().expect("just initialized");
                    for i in rows.clone() {
                        for j in cols.clone() {
                            let v = da.get(i, j) + g.get(i - rows.start, j - cols.start);
                            da.set(i, j, v);
                        }
                    }
                }
                Op::FlattenCols(a) => {
                    let src = &self.nodes[a.0].value;
                    let (r, c) = src.shape();
                    ensure_zero(&mut adjoints[a.0], (r, c));
                    let da = adjoints[a.0].as_mut().expect("just initialized");
                    let gd = g.data();
                    for j in 0..c {
                        for i in 0..r {
                            let v = da.get(i, j) + gd[j * r + i];
                            da.set(i, j, v);
                        }
                    }
                }
                Op::Mse { pred, target } => {
                    let p = self.nodes[pred.0].value.get(0, 0);
                    let two = T::one() + T::one();
                    let dp = two * (p - *target) * g.get(0, 0);
                    accumulate(&mut adjoints[pred.0], Matrix::filled(1, 1, dp));
                }
                Op::CrossEntropy { logits, hot, probs } => {
                    let gs = g.get(0, 0);
                    let mut da = Matrix::zeros(probs.len(), 1);
                    for (i, &p) in probs.iter().enumerate() {
                        let y = if i == *hot { T::one() } else { T::zero() };
                        da.set(i, 0, (p - y) * gs);
                    }
                    accumulate(&mut adjoints[logits.0], da);
                }
            }
        }

        // Parameters untouched by the root still get (zero) entries.
        let mut map = GradientMap {
            entries: grads,
        };
        for (pid, node) in &self.params {
            map.entries
                .entry(pid.0)
                .or_insert_with(|| Matrix::zeros(self.nodes[node.0].value.rows(), self.nodes[node.0].value.cols()));
        }
        Ok(map)
    }

    /// Recompute every node from its inputs; test hook for the replay
    /// determinism invariant (results must match recorded values bitwise).
    pub fn replay_forward(&self) -> Vec<Matrix<T>> {
        let mut values: Vec<Matrix<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMul(a, b) => mm_nn(&values[a.0], &values[b.0]),
                Op::Transpose(a) => values[a.0].transposed(),
                Op::Add(a, b) => {
                    let mut m = values[a.0].clone();
                    m.add_assign(&values[b.0]);
                    m
                }
                Op::Scale(a, c) => values[a.0].scaled(*c),
                Op::RowSoftmax(a) => row_softmax_value(&values[a.0]),
                Op::Relu(a) => values[a.0].map(|v| if v > T::zero() { v } else { T::zero() }),
                Op::Tanh(a) => values[a.0].map(|v| v.tanh()),
                Op::Slice { input, rows, cols } => {
                    let src = &values[input.0];
                    let mut out =
                        Matrix::zeros(rows.end - rows.start, cols.end - cols.start);
                    for i in rows.clone() {
                        for j in cols.clone() {
                            out.set(i - rows.start, j - cols.start, src.get(i, j));
                        }
                    }
                    out
                }
                Op::FlattenCols(a) => {
                    let src = &values[a.0];
                    let (r, c) = src.shape();
                    let mut data = Vec::with_capacity(r * c);
                    for j in 0..c {
                        for i in 0..r {
                            data.push(src.get(i, j));
                        }
                    }
                    Matrix::from_vec(r * c, 1, data).expect("flatten shape")
                }
                Op::Mse { pred, target } => {
                    let d = values[pred.0].get(0, 0) - *target;
                    Matrix::filled(1, 1, d * d)
                }
                Op::CrossEntropy { logits, hot, .. } => {
                    let z = values[logits.0].col_vec(0);
                    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                    let sum = z.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
                    Matrix::filled(1, 1, sum.ln() - (z[*hot] - max))
                }
            };
            values.push(v);
        }
        values
    }

    pub fn recorded_values(&self) -> Vec<Matrix<T>> {
        self.nodes.iter().map(|n| n.value.clone()).collect()
    }
}

fn row_softmax_value<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let row = m.row(i);
        let max = row.iter().fold(T::neg_infinity(), |mx, &v| mx.max(v));
        let orow = out.row_mut(i);
        let mut sum = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum = sum + e;
        }
        let inv = T::one() / sum;
        for o in orow.iter_mut() {
            *o = *o * inv;
        }
    }
    out
}

fn accumulate<T: Scalar>(slot: &mut Option<Matrix<T>>, delta: Matrix<T>) {
    match slot {
        Some(m) => m.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

fn ensure_zero<T: Scalar>(slot: &mut Option<Matrix<T>>, shape: (usize, usize)) {
    if slot.is_none() {
        *slot = Some(Matrix::zeros(shape.0, shape.1));
    }
}
