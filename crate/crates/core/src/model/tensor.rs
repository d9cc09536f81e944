//! Dense row-major matrices and the handful of kernels the network needs.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type: `f32` for training and storage, `f64` for
/// gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Default
        + Debug
        + Send
        + Sync
        + 'static
{
}

#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eight independent partial sums so the loop vectorizes; the summation
/// order is fixed, so results stay deterministic.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (kk, &av) in a.row(i).iter().enumerate() {
            if av != T::zero() {
                axpy(av, b.row(kk), orow);
            }
        }
    }
    out
}

/// `a · b + bias` with `bias` broadcast over rows.
pub fn affine<T: Scalar>(a: &Mat<T>, w: &Mat<T>, bias: &Mat<T>) -> Mat<T> {
    let mut out = matmul(a, w);
    for i in 0..out.rows {
        for (o, &b) in out.row_mut(i).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    out
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_bt<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.cols, "matmul_bt inner dimensions");
    matmul(a, &transpose(b))
}

pub fn transpose<T: Scalar>(m: &Mat<T>) -> Mat<T> {
    let mut out = Mat::zeros(m.cols, m.rows);
    for i in 0..m.rows {
        for (j, &x) in m.row(i).iter().enumerate() {
            out.data[j * m.rows + i] = x;
        }
    }
    out
}

/// `out += aᵀ · b` for `a: m×p`, `b: m×q`.
pub fn add_at_b<T: Scalar>(out: &mut Mat<T>, a: &Mat<T>, b: &Mat<T>) {
    assert_eq!(a.rows, b.rows, "add_at_b shared dimension");
    assert_eq!((out.rows, out.cols), (a.cols, b.cols), "add_at_b output shape");
    for r in 0..a.rows {
        let br = b.row(r);
        for (p, &av) in a.row(r).iter().enumerate() {
            if av != T::zero() {
                axpy(av, br, out.row_mut(p));
            }
        }
    }
}

/// `out += column sums of g` (bias gradients).
pub fn add_col_sums<T: Scalar>(out: &mut Mat<T>, g: &Mat<T>) {
    for r in 0..g.rows {
        for (o, &x) in out.data.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_products() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(matmul(&a, &b).data, vec![58.0, 64.0, 139.0, 154.0]);

        let bt = Mat::from_vec(2, 3, vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        assert_eq!(matmul_bt(&a, &bt).data, vec![58.0, 64.0, 139.0, 154.0]);

        // aᵀ·a
        let mut out = Mat::zeros(3, 3);
        add_at_b(&mut out, &a, &a);
        assert_eq!(out.data, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);

        let bias = Mat::from_vec(1, 2, vec![1.0, -1.0]);
        assert_eq!(affine(&a, &b, &bias).data, vec![59.0, 63.0, 140.0, 153.0]);

        let mut sums = Mat::zeros(1, 3);
        add_col_sums(&mut sums, &a);
        assert_eq!(sums.data, vec![5.0, 7.0, 9.0]);
    }
}
