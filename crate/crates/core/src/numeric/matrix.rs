use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.values)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major values, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::from_vec(n_rows, n_cols, values)
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
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                if (a - b).abs() > tol * a.abs().max(b.abs()).max(1.0) {
                    return false;
                }
            }
        }
        true
    }

    /// Standard matrix product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "matmul dimension mismatch: {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out);
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::invalid(format!(
                "matvec dimension mismatch: {}x{} · {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.values.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            values: self.values[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

/// `c ← alpha · op(a) · op(b) + beta · c`, where `op` optionally transposes.
///
/// Panics on shape mismatch; callers validate shapes.
pub(crate) fn gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) {
    let (m, k) = if trans_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if trans_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: shapes and strides describe the owned buffers exactly; the
    // output buffer does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.values.as_ptr(),
            rsa,
            csa,
            b.values.as_ptr(),
            rsb,
            csb,
            beta,
            c.values.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;

    fn naive_product(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn random(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
        let v = (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Matrix::from_vec(r, c, v).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn random_product_matches_triple_loop() {
        let mut rng = SeededRng::new(11);
        let a = random(&mut rng, 5, 7);
        let b = random(&mut rng, 7, 3);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_product(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_gemm_variants() {
        let mut rng = SeededRng::new(3);
        let a = random(&mut rng, 4, 6);
        let b = random(&mut rng, 4, 5);
        let mut c = Matrix::zeros(6, 5);
        gemm(1.0, &a, true, &b, false, 0.0, &mut c);
        let expect = naive_product(&a.transpose(), &b);
        for (x, y) in c.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let d = random(&mut rng, 5, 6);
        let mut e = Matrix::zeros(4, 5);
        gemm(2.0, &a, false, &d, true, 0.0, &mut e);
        let expect = naive_product(&a, &d.transpose());
        for (x, y) in e.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - 2.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&Matrix::zeros(2, 2)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn associativity_on_random_triples() {
        let mut rng = SeededRng::new(99);
        for _ in 0..20 {
            let a = random(&mut rng, 4, 5);
            let b = random(&mut rng, 5, 6);
            let c = random(&mut rng, 6, 3);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }
}
