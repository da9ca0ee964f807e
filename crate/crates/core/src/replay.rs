//! Fixed-capacity replay buffer holding the most recent training items
//! (oldest evicted first) and the embedding constructions that splice buffer
//! contents together with the current query into one matrix.

use std::collections::VecDeque;

use crate::grad::{Matrix, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("buffer capacity must be positive")]
    ZeroCapacity,
    #[error("item shape mismatch: buffer holds {expected:?}, got {got:?}")]
    ItemShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("query shape mismatch: buffer holds {expected}-dim features, got {got}")]
    QueryShape { expected: usize, got: usize },
}

/// Feature/target pair for supervised replay.
#[derive(Clone, Debug, PartialEq)]
pub struct SlItem<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
}

/// One observed transition for policy-evaluation replay. The reward is a
/// function of the source state.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub phi: Vec<T>,
    pub reward: T,
    pub phi_next: Vec<T>,
}

/// Dimensions used for intra-buffer shape consistency checks.
pub trait ReplayItem {
    fn dims(&self) -> (usize, usize);
}

impl<T> ReplayItem for SlItem<T> {
    fn dims(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }
}

impl<T> ReplayItem for Transition<T> {
    fn dims(&self) -> (usize, usize) {
        (self.phi.len(), self.phi_next.len())
    }
}

/// Keeps the `capacity` most recent items; a push beyond capacity evicts
/// exactly the oldest item.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<I> {
    capacity: usize,
    items: VecDeque<I>,
}

impl<I: ReplayItem + Clone> ReplayBuffer<I> {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: I) -> Result<(), ReplayError> {
        if let Some(first) = self.items.front() {
            if first.dims() != item.dims() {
                return Err(ReplayError::ItemShape {
                    expected: first.dims(),
                    got: item.dims(),
                });
            }
        }
        self.items.push_back(item);
        if self.items.len() > self.capacity {
            self.items.pop_front();
        }
        Ok(())
    }

    /// Oldest-to-newest snapshot; later pushes do not affect it.
    pub fn contents(&self) -> Vec<I> {
        self.items.iter().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &I> {
        self.items.iter()
    }
}

/// Supervised embedding: a `(d_x + d_y) x (n + 1)` matrix whose filled
/// columns stack x over y, left-padded with all-zero columns while the buffer
/// is short, with the query `[x_q; 0]` in the final column.
pub fn build_sl_embedding<T: Scalar>(
    buf: &ReplayBuffer<SlItem<T>>,
    x_query: &[T],
    d_y: usize,
) -> Result<Matrix<T>, ReplayError> {
    let d_x = x_query.len();
    if let Some(item) = buf.items.front() {
        if item.dims() != (d_x, d_y) {
            return Err(ReplayError::ItemShape {
                expected: item.dims(),
                got: (d_x, d_y),
            });
        }
    }
    let n = buf.capacity();
    let mut z = Matrix::zeros(d_x + d_y, n + 1);
    let pad = n - buf.len();
    for (slot, item) in buf.iter().enumerate() {
        let col = pad + slot;
        for (i, &v) in item.x.iter().enumerate() {
            z.set(i, col, v);
        }
        for (i, &v) in item.y.iter().enumerate() {
            z.set(d_x + i, col, v);
        }
    }
    for (i, &v) in x_query.iter().enumerate() {
        z.set(i, n, v);
    }
    Ok(z)
}

/// Policy-evaluation embedding pair: both matrices share the context columns
/// `[phi; gamma*phi_next; reward]` and differ only in the query column, which
/// is `[phi_q; 0; 0]` for Z and `[phi_q_next; 0; 0]` for Z'.
pub fn build_pe_embeddings<T: Scalar>(
    buf: &ReplayBuffer<Transition<T>>,
    phi_q: &[T],
    phi_q_next: &[T],
    gamma: T,
) -> Result<(Matrix<T>, Matrix<T>), ReplayError> {
    let d = phi_q.len();
    if phi_q_next.len() != d {
        return Err(ReplayError::QueryShape {
            expected: d,
            got: phi_q_next.len(),
        });
    }
    if let Some(item) = buf.items.front() {
        if item.dims() != (d, d) {
            return Err(ReplayError::ItemShape {
                expected: item.dims(),
                got: (d, d),
            });
        }
    }
    let n = buf.capacity();
    let rows = 2 * d + 1;
    let mut z = Matrix::zeros(rows, n + 1);
    let pad = n - buf.len();
    for (slot, tr) in buf.iter().enumerate() {
        let col = pad + slot;
        for (i, &v) in tr.phi.iter().enumerate() {
            z.set(i, col, v);
        }
        for (i, &v) in tr.phi_next.iter().enumerate() {
            z.set(d + i, col, gamma * v);
        }
        z.set(2 * d, col, tr.reward);
    }
    let mut zp = z.clone();
    for (i, &v) in phi_q.iter().enumerate() {
        z.set(i, n, v);
    }
    for (i, &v) in phi_q_next.iter().enumerate() {
        zp.set(i, n, v);
    }
    Ok((z, zp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(x: &[f32], y: &[f32]) -> SlItem<f32> {
        SlItem {
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }

    #[test]
    fn push_then_evict_keeps_most_recent() {
        let mut buf = ReplayBuffer::new(100).unwrap();
        for i in 0..101 {
            buf.push(sl(&[i as f32], &[0.0])).unwrap();
        }
        let items = buf.contents();
        assert_eq!(items.len(), 100);
        assert_eq!(items[0].x[0], 1.0, "item #1 evicted");
        assert_eq!(items[99].x[0], 100.0);
        for (k, item) in items.iter().enumerate() {
            assert_eq!(item.x[0], (k + 1) as f32, "arrival order preserved");
        }
    }

    #[test]
    fn push_into_empty() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        assert!(buf.is_empty());
        buf.push(sl(&[1.0], &[2.0])).unwrap();
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn oversized_batch_retains_tail() {
        // batch of 400 into capacity 100: only the last 100 stay
        let mut buf = ReplayBuffer::new(100).unwrap();
        for i in 0..400 {
            buf.push(sl(&[i as f32], &[0.0])).unwrap();
        }
        let items = buf.contents();
        assert_eq!(items.len(), 100);
        assert_eq!(items[0].x[0], 300.0);
        assert_eq!(items[99].x[0], 399.0);
    }

    #[test]
    fn snapshot_is_unaffected_by_later_pushes() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        buf.push(sl(&[1.0], &[0.0])).unwrap();
        buf.push(sl(&[2.0], &[0.0])).unwrap();
        buf.push(sl(&[3.0], &[0.0])).unwrap();
        let snap = buf.contents();
        assert_eq!(snap.len(), 2);
        assert_eq!((snap[0].x[0], snap[1].x[0]), (2.0, 3.0));
        buf.push(sl(&[4.0], &[0.0])).unwrap();
        assert_eq!((snap[0].x[0], snap[1].x[0]), (2.0, 3.0));
    }

    #[test]
    fn rejects_shape_changes() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        buf.push(sl(&[1.0, 2.0], &[0.0])).unwrap();
        assert!(buf.push(sl(&[1.0], &[0.0])).is_err());
    }

    #[test]
    fn sl_embedding_full_left_pad() {
        let buf: ReplayBuffer<SlItem<f64>> = ReplayBuffer::new(3).unwrap();
        let z = build_sl_embedding(&buf, &[1.0, 2.0], 1).unwrap();
        let want = Matrix::from_rows(&[
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, 2.0],
            &[0.0, 0.0, 0.0, 0.0],
        ]);
        assert_eq!(z, want);
    }

    #[test]
    fn sl_embedding_partial_fill() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        buf.push(SlItem {
            x: vec![1.0f64],
            y: vec![2.0],
        })
        .unwrap();
        let z = build_sl_embedding(&buf, &[5.0], 1).unwrap();
        let want = Matrix::from_rows(&[&[0.0, 1.0, 5.0], &[0.0, 2.0, 0.0]]);
        assert_eq!(z, want);
    }

    #[test]
    fn sl_embedding_classification_shape() {
        let mut buf = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            let mut y = vec![0.0f32; 10];
            y[i % 10] = 1.0;
            buf.push(sl(&vec![0.5; 49], &y)).unwrap();
        }
        let z = build_sl_embedding(&buf, &vec![0.25; 49], 10).unwrap();
        assert_eq!(z.shape(), (59, 101));
    }

    #[test]
    fn sl_embedding_fill_levels_property() {
        // for all fill levels k <= n: n-k zero columns, then items in arrival
        // order, then the query column
        let n = 6;
        let mut buf: ReplayBuffer<SlItem<f64>> = ReplayBuffer::new(n).unwrap();
        for k in 0..=n + 3 {
            let z = build_sl_embedding(&buf, &[9.5], 1).unwrap();
            let expect_items: Vec<f64> = if k <= n {
                (0..k).map(|i| i as f64).collect()
            } else {
                (k - n..k).map(|i| i as f64).collect()
            };
            let pad = n - expect_items.len();
            for col in 0..pad {
                assert_eq!(z.get(0, col), 0.0);
                assert_eq!(z.get(1, col), 0.0);
            }
            for (slot, &v) in expect_items.iter().enumerate() {
                assert_eq!(z.get(0, pad + slot), v);
                assert_eq!(z.get(1, pad + slot), -v);
            }
            assert_eq!(z.get(0, n), 9.5);
            assert_eq!(z.get(1, n), 0.0, "query target block zeroed");

            buf.push(SlItem {
                x: vec![k as f64],
                y: vec![-(k as f64)],
            })
            .unwrap();
        }
    }

    #[test]
    fn pe_embeddings_structure() {
        let mut buf: ReplayBuffer<Transition<f64>> = ReplayBuffer::new(3).unwrap();
        buf.push(Transition {
            phi: vec![1.0, 2.0],
            reward: 0.5,
            phi_next: vec![3.0, 4.0],
        })
        .unwrap();
        let gamma = 0.9;
        let (z, zp) = build_pe_embeddings(&buf, &[7.0, 8.0], &[9.0, 10.0], gamma).unwrap();
        assert_eq!(z.shape(), (5, 4));

        // shared context column (after one pad column... pad = 2 here)
        for m in [&z, &zp] {
            assert_eq!(m.col_vec(2), vec![1.0, 2.0, gamma * 3.0, gamma * 4.0, 0.5]);
            assert_eq!(m.col_vec(0), vec![0.0; 5]);
            assert_eq!(m.col_vec(1), vec![0.0; 5]);
        }
        assert_eq!(z.col_vec(3), vec![7.0, 8.0, 0.0, 0.0, 0.0]);
        assert_eq!(zp.col_vec(3), vec![9.0, 10.0, 0.0, 0.0, 0.0]);

        // Z and Z' differ only in the last column
        for i in 0..5 {
            for j in 0..3 {
                assert_eq!(z.get(i, j), zp.get(i, j));
            }
        }
    }

    #[test]
    fn pe_embeddings_gamma_zero_blanks_next_block() {
        let mut buf: ReplayBuffer<Transition<f64>> = ReplayBuffer::new(2).unwrap();
        buf.push(Transition {
            phi: vec![1.0],
            reward: 2.0,
            phi_next: vec![3.0],
        })
        .unwrap();
        let (z, _) = build_pe_embeddings(&buf, &[4.0], &[5.0], 0.0).unwrap();
        assert_eq!(z.get(1, 1), 0.0, "gamma * phi_next row zeroed");
        assert_eq!(z.get(2, 1), 2.0, "reward row untouched");
    }

    #[test]
    fn pe_embeddings_empty_buffer() {
        let buf: ReplayBuffer<Transition<f64>> = ReplayBuffer::new(2).unwrap();
        let (z, zp) = build_pe_embeddings(&buf, &[1.0], &[2.0], 0.9).unwrap();
        for j in 0..2 {
            assert_eq!(z.col_vec(j), vec![0.0; 3]);
            assert_eq!(zp.col_vec(j), vec![0.0; 3]);
        }
        assert_eq!(z.col_vec(2), vec![1.0, 0.0, 0.0]);
        assert_eq!(zp.col_vec(2), vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn boyan_style_row_count() {
        // feature dim 4 stacks to 4 + 4 + 1 = 9 rows
        let buf: ReplayBuffer<Transition<f32>> = ReplayBuffer::new(100).unwrap();
        let (z, _) =
            build_pe_embeddings(&buf, &[0.0; 4], &[0.0; 4], 0.9f32).unwrap();
        assert_eq!(z.shape(), (9, 101));
    }

    #[test]
    fn build_is_deterministic() {
        let mut a: ReplayBuffer<SlItem<f32>> = ReplayBuffer::new(4).unwrap();
        let mut b: ReplayBuffer<SlItem<f32>> = ReplayBuffer::new(4).unwrap();
        for i in 0..7 {
            let item = sl(&[i as f32, 0.5 * i as f32], &[1.0 / (1.0 + i as f32)]);
            a.push(item.clone()).unwrap();
            b.push(item).unwrap();
        }
        let za = build_sl_embedding(&a, &[0.1, 0.2], 1).unwrap();
        let zb = build_sl_embedding(&b, &[0.1, 0.2], 1).unwrap();
        assert_eq!(za, zb);
    }
}
