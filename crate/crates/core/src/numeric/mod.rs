//! Shared numeric kernels: dense matrix container, vector math, IoU geometry,
//! minimum-cost assignment and constrained agglomerative clustering.

pub mod assignment;
pub mod clustering;

use crate::types::BBox;
use crate::{Error, Real, Result};

pub use assignment::{min_cost_assignment, CostMatrix};
pub use clustering::{constrained_agglomerative, ClusterResult, Linkage, MergeStep};

/// Dense row-major matrix. Plain container, no linear algebra attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Intersection-over-union of two boxes; 0 when disjoint.
pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let ix = a.x.max(b.x);
    let iy = a.y.max(b.y);
    let ix2 = a.right().min(b.right());
    let iy2 = a.bottom().min(b.bottom());
    let iw = (ix2 - ix).max(T::zero());
    let ih = (iy2 - iy).max(T::zero());
    let inter = iw * ih;
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Dot product without a dimension check; callers validate once up front.
pub(crate) fn dot_unchecked<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Real>(v: &[T]) -> T {
    dot_unchecked(v, v).sqrt()
}

/// L2-normalize in place. Returns `false` (leaving `v` untouched) when the
/// norm is too small to divide by. Vectors that are already unit within
/// 1e-12 are left bit-identical, which makes normalization idempotent.
pub fn normalize<T: Real>(v: &mut [T]) -> bool {
    let n = norm(v);
    if n <= T::from_f64(1e-12).unwrap() {
        return false;
    }
    if (n - T::one()).abs() <= T::from_f64(1e-12).unwrap() {
        return true;
    }
    for x in v.iter_mut() {
        *x = *x / n;
    }
    true
}

/// Arithmetic mean of equally sized vectors.
pub fn mean_vector<T: Real>(rows: &[&[T]]) -> Vec<T> {
    assert!(!rows.is_empty());
    let dim = rows[0].len();
    let mut out = vec![T::zero(); dim];
    for row in rows {
        debug_assert_eq!(row.len(), dim);
        for (o, &x) in out.iter_mut().zip(row.iter()) {
            *o = *o + x;
        }
    }
    let count = T::from_usize(rows.len()).unwrap();
    for o in out.iter_mut() {
        *o = *o / count;
    }
    out
}

/// Cosine similarity of two unit vectors (their dot product), clamped to
/// `[-1, 1]` against floating-point drift.
pub fn cosine<T: Real>(f: &[T], g: &[T]) -> Result<T> {
    if f.len() != g.len() {
        return Err(Error::Dimension(format!(
            "cosine: {} vs {}",
            f.len(),
            g.len()
        )));
    }
    Ok(dot_unchecked(f, g).min(T::one()).max(-T::one()))
}
