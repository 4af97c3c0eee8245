//! Dense row-major `f64` matrices and the strided GEMM wrapper the rest of
//! the crate builds on.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A dense, row-major 2-D array of `f64`.
///
/// Every activation in the models is a matrix: token streams are stored as
/// `[batch * tokens, width]`, scalars as `[1, 1]`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length does not match {rows}x{cols}"
        );
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Same data, new shape. Panics if the element count differs.
    pub fn reshape(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len(), "reshape changes element count");
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            MatRef::new(&self.data, self.cols as isize, 1),
            MatRef::new(&other.data, other.cols as isize, 1),
            0.0,
            MatMut::new(&mut out.data, other.cols as isize, 1),
        );
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// A strided read-only view used as a GEMM operand.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub(crate) fn new(data: &'a [f64], row_stride: isize, col_stride: isize) -> Self {
        Self {
            data,
            row_stride,
            col_stride,
        }
    }

    /// The same storage read as its transpose.
    pub(crate) fn t(self) -> Self {
        Self {
            data: self.data,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

pub(crate) struct MatMut<'a> {
    data: &'a mut [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> MatMut<'a> {
    pub(crate) fn new(data: &'a mut [f64], row_stride: isize, col_stride: isize) -> Self {
        Self {
            data,
            row_stride,
            col_stride,
        }
    }
}

fn max_offset(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize
}

/// `c = alpha * a[m,k] * b[k,n] + beta * c[m,n]` over strided views.
///
/// Every view is bounds-checked against its slice before the call.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: MatMut<'_>,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(max_offset(m, k, a.row_stride, a.col_stride) < a.data.len());
        assert!(max_offset(k, n, b.row_stride, b.col_stride) < b.data.len());
    }
    assert!(max_offset(m, n, c.row_stride, c.col_stride) < c.data.len());
    // SAFETY: all three views were bounds-checked above for the requested
    // extents, strides are non-negative, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.data.as_mut_ptr(),
            c.row_stride,
            c.col_stride,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive_loops() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 1.0);
        let b = Matrix::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.25);
        let got = a.matmul(&b);
        for r in 0..3 {
            for c in 0..2 {
                let want: f64 = (0..4).map(|k| a.get(r, k) * b.get(k, c)).sum();
                assert!((got.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_view_gemm() {
        let a = Matrix::from_fn(2, 3, |r, c| (r + 2 * c) as f64);
        let mut out = Matrix::zeros(3, 3);
        gemm(
            3,
            2,
            3,
            1.0,
            MatRef::new(a.data(), 3, 1).t(),
            MatRef::new(a.data(), 3, 1),
            0.0,
            MatMut::new(out.data_mut(), 3, 1),
        );
        assert_eq!(out, a.transpose().matmul(&a));
    }
}
