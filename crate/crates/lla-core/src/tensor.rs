//! Dense row-major matrix/vector substrate and the structural operators the
//! rest of the crate is written in: `rsum` (row sums), `bcast` (column
//! broadcast), `brsum` (their composition) and `tril` (causal masking).
//!
//! Row-major storage is deliberate: every blocked algorithm in this crate
//! iterates over row slices, so query-block parallelism is row-block
//! slicing.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Length-indexed column of `f64`s. Entries are finite except where a masked
/// logit is explicitly `-inf`.
pub type Vector = Vec<f64>;

/// Dense `rows x cols` matrix of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row-major data. Errors if the length is not `rows*cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                got: (data.len(), 1),
                what: "Matrix::from_vec",
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows (test/convenience path).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Copy of the row range `[start, end)` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other^T`: rows of both operands are dotted, which is the
    /// cache-friendly orientation for row-major storage.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                expected: (other.rows, self.cols),
                got: (other.rows, other.cols),
                what: "matmul_nt",
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self * other`, accumulated row-wise (axpy pattern).
    pub fn matmul_nn(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: (self.cols, other.cols),
                got: (other.rows, other.cols),
                what: "matmul_nn",
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                axpy(aik, other.row(k), o);
            }
        }
        Ok(out)
    }

    /// `self^T * other`, accumulated row-wise.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                expected: (self.rows, other.cols),
                got: (other.rows, other.cols),
                what: "matmul_tn",
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for (i, &aki) in a.iter().enumerate() {
                axpy(aki, b, out.row_mut(i));
            }
        }
        Ok(out)
    }

    /// Hadamard product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                expected: (self.rows, self.cols),
                got: (other.rows, other.cols),
                what: "hadamard",
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Max-norm distance to another matrix of the same shape.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max(crate::math::abs(a - b)))
    }
}

/// Row sums: `rsum(X)[i] = sum_j X[i,j]`.
pub fn rsum(x: &Matrix) -> Vector {
    (0..x.rows()).map(|i| x.row(i).iter().sum()).collect()
}

/// Column broadcast: `bcast(v, cols)[i,j] = v[i]`.
pub fn bcast(v: &[f64], cols: usize) -> Matrix {
    let mut out = Matrix::zeros(v.len(), cols);
    for (i, &vi) in v.iter().enumerate() {
        out.row_mut(i).fill(vi);
    }
    out
}

/// `brsum(X) = bcast(rsum(X))` with the input's column count.
pub fn brsum(x: &Matrix) -> Matrix {
    bcast(&rsum(x), x.cols())
}

/// Lower-triangular part of a square matrix; entries above the diagonal are
/// zeroed. Use [`tril_neg_inf`] instead when masking logits before
/// exponentiation.
pub fn tril(x: &Matrix) -> Result<Matrix> {
    if x.rows() != x.cols() {
        return Err(Error::NotSquare {
            rows: x.rows(),
            cols: x.cols(),
        });
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for v in row.iter_mut().skip(i + 1) {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Causal mask for logits: entries above the diagonal are set to `-inf` so a
/// subsequent `exp` turns them into exact zeros.
pub fn tril_neg_inf(x: &Matrix) -> Result<Matrix> {
    if x.rows() != x.cols() {
        return Err(Error::NotSquare {
            rows: x.rows(),
            cols: x.cols(),
        });
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for v in row.iter_mut().skip(i + 1) {
            *v = f64::NEG_INFINITY;
        }
    }
    Ok(out)
}

#[inline(always)]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`.
#[inline(always)]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean norm.
#[inline(always)]
pub fn norm2(x: &[f64]) -> f64 {
    crate::math::sqrt(dot(x, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rsum_definition() {
        let x = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(rsum(&x), vec![3.0, 7.0]);
        let z = Matrix::zeros(2, 2);
        assert_eq!(rsum(&z), vec![0.0, 0.0]);
    }

    #[test]
    fn bcast_definition() {
        let m = bcast(&[1.0, 2.0], 3);
        assert_eq!(m, Matrix::from_rows(&[&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]]));
        let one = bcast(&[0.0], 1);
        assert_eq!(one, Matrix::from_rows(&[&[0.0]]));
    }

    #[test]
    fn brsum_definition() {
        let x = Matrix::from_rows(&[&[1.0, 2.0]]);
        assert_eq!(brsum(&x), Matrix::from_rows(&[&[3.0, 3.0]]));
        let eye = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(brsum(&eye), Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
    }

    #[test]
    fn tril_definition_and_idempotence() {
        let x = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let t = tril(&x).unwrap();
        assert_eq!(t, Matrix::from_rows(&[&[1.0, 0.0], &[3.0, 4.0]]));
        assert_eq!(tril(&t).unwrap(), t);
        let one = Matrix::from_rows(&[&[5.0]]);
        assert_eq!(tril(&one).unwrap(), one);
    }

    #[test]
    fn tril_rejects_non_square() {
        let x = Matrix::zeros(2, 3);
        assert!(matches!(tril(&x), Err(Error::NotSquare { .. })));
        assert!(matches!(tril_neg_inf(&x), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn tril_neg_inf_exps_to_zero() {
        let x = Matrix::from_rows(&[&[0.0, 9.0], &[1.0, 0.0]]);
        let t = tril_neg_inf(&x).unwrap();
        assert_eq!(crate::math::exp(t.get(0, 1)), 0.0);
        assert_eq!(t.get(1, 0), 1.0);
    }
}
