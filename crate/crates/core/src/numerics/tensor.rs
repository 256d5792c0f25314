//! Row-major dense matrices of `f64`.

use serde::{Deserialize, Serialize};

use super::NumericsError;

/// A dense row-major matrix. Vectors are represented as `n x 1` or `1 x n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
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

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Shape {
                op: "from_vec",
                detail: format!("{} values for a {rows}x{cols} tensor", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumericsError::Shape {
                    op: "from_rows",
                    detail: format!("row {i} has {} columns, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
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

    pub fn into_data(self) -> Vec<f64> {
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

    /// The single entry of a `1 x 1` tensor.
    pub fn item(&self) -> Result<f64, NumericsError> {
        if self.shape() != (1, 1) {
            return Err(NumericsError::Shape {
                op: "item",
                detail: format!("expected 1x1, got {}x{}", self.rows, self.cols),
            });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::Shape {
                op: "matmul",
                detail: format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(Op::N, self, Op::N, other, &mut out, 0.0);
        Ok(out)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    N,
    T,
}

/// `out = beta * out + op(a) * op(b)`; shapes are the caller's responsibility.
pub(crate) fn gemm(ta: Op, a: &Tensor, tb: Op, b: &Tensor, out: &mut Tensor, beta: f64) {
    let (m, k) = match ta {
        Op::N => (a.rows, a.cols),
        Op::T => (a.cols, a.rows),
    };
    let n = match tb {
        Op::N => b.cols,
        Op::T => b.rows,
    };
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            out.data.fill(0.0);
        } else {
            out.data.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    let (rsa, csa) = match ta {
        Op::N => (a.cols as isize, 1),
        Op::T => (1, a.cols as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (b.cols as isize, 1),
        Op::T => (1, b.cols as isize),
    };
    // SAFETY: strides describe in-bounds views of `a`, `b` and `out`, whose
    // dimensions were validated above (m x k, k x n, m x n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_is_noop() {
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 4.0, -1.0]]).unwrap();
        let y = Tensor::identity(2).matmul(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn transposed_gemm_matches_explicit_transpose() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]]).unwrap();
        let mut out = Tensor::zeros(2, 2);
        gemm(Op::T, &a, Op::T, &b, &mut out, 0.0);
        let expect = a.transpose().matmul(&b.transpose()).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::zeros(2, 3);
        let err = a.matmul(&Tensor::zeros(2, 3)).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }
}
