//! Row-major dense matrix plus the three matmul kernels the tape needs
//! (`A·B`, `A·Bᵀ`, `Aᵀ·B`). Kernels keep the inner loops contiguous and use a
//! fixed accumulation order so results are bitwise reproducible; large
//! products are row-partitioned across threads, which does not change any
//! per-element order.

use rayon::prelude::*;

use super::{GradError, Scalar};

/// Products at least this large (rows * cols * inner) run row-parallel.
const PAR_WORK_THRESHOLD: usize = 1 << 23;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, GradError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(GradError::BadDataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Test/config helper; panics on ragged input.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty());
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[T]) -> Self {
        assert!(!values.is_empty());
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_vec(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn transposed(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Self, c: T) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + c * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; test helper.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Dot product with eight independent accumulators; the fixed association
/// order keeps results identical across calls while letting the loop
/// vectorize.
#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        let xb = &x[c * 8..c * 8 + 8];
        let yb = &y[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + xb[l] * yb[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..x.len() {
        s = s + x[i] * y[i];
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(c: T, x: &[T], out: &mut [T]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + c * v;
    }
}

fn nn_rows<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out_rows: &mut [T], i0: usize, i1: usize) {
    let n = b.cols;
    for i in i0..i1 {
        let out_row = &mut out_rows[(i - i0) * n..(i - i0 + 1) * n];
        let a_row = a.row(i);
        for (k, &aik) in a_row.iter().enumerate() {
            axpy(aik, b.row(k), out_row);
        }
    }
}

/// `A · B`
pub fn mm_nn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, b.rows, "mm_nn inner dimension mismatch");
    let mut out = Matrix::zeros(a.rows, b.cols);
    let work = a.rows * a.cols * b.cols;
    if work >= PAR_WORK_THRESHOLD && a.rows > 1 {
        let n = b.cols;
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| nn_rows(a, b, row, i, i + 1));
    } else {
        nn_rows(a, b, &mut out.data[..], 0, a.rows);
    }
    out
}

/// `A · Bᵀ`
pub fn mm_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, b.cols, "mm_nt inner dimension mismatch");
    let mut out = Matrix::zeros(a.rows, b.rows);
    mm_nt_acc(a, b, &mut out);
    out
}

/// `out += A · Bᵀ`
pub(crate) fn mm_nt_acc<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    assert_eq!(a.cols, b.cols);
    assert_eq!(out.shape(), (a.rows, b.rows));
    let n = b.rows;
    let work = a.rows * a.cols * b.rows;
    if work >= PAR_WORK_THRESHOLD && a.rows > 1 {
        out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let a_row = a.row(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o = *o + dot(a_row, b.row(j));
            }
        });
    } else {
        for i in 0..a.rows {
            let a_row = a.row(i);
            let row = &mut out.data[i * n..(i + 1) * n];
            for (j, o) in row.iter_mut().enumerate() {
                *o = *o + dot(a_row, b.row(j));
            }
        }
    }
}

/// `Aᵀ · B`
pub fn mm_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.rows, b.rows, "mm_tn inner dimension mismatch");
    let mut out = Matrix::zeros(a.cols, b.cols);
    mm_tn_acc(a, b, &mut out);
    out
}

/// `out += Aᵀ · B`
pub(crate) fn mm_tn_acc<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(out.shape(), (a.cols, b.cols));
    let n = b.cols;
    let work = a.rows * a.cols * b.cols;
    if work >= PAR_WORK_THRESHOLD && a.cols > 1 {
        // Fixed row blocks; every output row is owned by exactly one block.
        let block = 16usize;
        let a_cols = a.cols;
        out.data
            .par_chunks_mut(block * n)
            .enumerate()
            .for_each(|(bi, rows)| {
                let i0 = bi * block;
                let i1 = (i0 + block).min(a_cols);
                for k in 0..a.rows {
                    let a_row = a.row(k);
                    let b_row = b.row(k);
                    for i in i0..i1 {
                        axpy(a_row[i], b_row, &mut rows[(i - i0) * n..(i - i0 + 1) * n]);
                    }
                }
            });
    } else {
        for k in 0..a.rows {
            let a_row = a.row(k);
            let b_row = b.row(k);
            for i in 0..a.cols {
                axpy(a_row[i], b_row, &mut out.data[i * n..(i + 1) * n]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent triple-loop product used as the oracle for all kernels.
    fn naive_mm(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
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

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(r, c, data).unwrap()
    }

    #[test]
    fn identity_times_matrix() {
        let i2 = Matrix::<f64>::identity(2);
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(mm_nn(&i2, &m), m);
    }

    #[test]
    fn selector_row() {
        let sel = Matrix::from_rows(&[&[1.0, 0.0]]);
        let col = Matrix::from_rows(&[&[5.0], &[7.0]]);
        let out = mm_nn(&sel, &col);
        assert_eq!(out.shape(), (1, 1));
        assert_eq!(out.get(0, 0), 5.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (m, k, n) = (
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
            );
            let a = random(&mut rng, m, k);
            let b = random(&mut rng, k, n);
            let got = mm_nn(&a, &b);
            let want = naive_mm(&a, &b);
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
        // The spec's canonical case.
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        assert!(mm_nn(&a, &b).max_abs_diff(&naive_mm(&a, &b)) < 1e-12);
    }

    #[test]
    fn transposed_kernels_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (m, k, n) = (
                rng.gen_range(1..7),
                rng.gen_range(1..7),
                rng.gen_range(1..7),
            );
            let a = random(&mut rng, m, k);
            let b = random(&mut rng, n, k);
            assert!(mm_nt(&a, &b).max_abs_diff(&naive_mm(&a, &b.transposed())) < 1e-12);
            let a2 = random(&mut rng, k, m);
            let b2 = random(&mut rng, k, n);
            assert!(mm_tn(&a2, &b2).max_abs_diff(&naive_mm(&a2.transposed(), &b2)) < 1e-12);
        }
    }

    #[test]
    fn parallel_path_is_bitwise_equal_to_serial() {
        // Force shapes above/below the threshold and compare exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Matrix<f32> = random(&mut rng, 300, 200).cast();
        let b: Matrix<f32> = random(&mut rng, 200, 300).cast();
        let big = mm_nn(&a, &b); // 18M work: parallel
        let mut serial = Matrix::zeros(300, 300);
        nn_rows(&a, &b, &mut serial.data_mut()[..], 0, 300);
        assert_eq!(big, serial);
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 4, 7);
        assert_eq!(a.transposed().transposed(), a);
    }
}
