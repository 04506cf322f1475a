//! Dense row-major matrices and the handful of linear-algebra kernels the
//! codecs need: products, Gram–Schmidt orthogonalization and norms.
//!
//! Storage is `f32`; every reduction (dot products, norms) accumulates in
//! `f64` in plain sequential order so results do not depend on loop
//! scheduling.

use std::fmt;

use thiserror::Error;

use crate::rng::Rng;

/// Squared-norm ratio under which a column is treated as linearly dependent
/// on the columns before it.
pub const DEGENERATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {op} of {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("non-finite entry produced by {0}")]
    NonFinite(&'static str),
    #[error("orthogonalize needs rows >= cols, got {rows}x{cols}")]
    TooWide { rows: usize, cols: usize },
}

/// Dense row-major matrix of finite `f32` values.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 64 {
            f.debug_struct("Matrix")
                .field("rows", &self.rows)
                .field("cols", &self.cols)
                .field("data", &self.data)
                .finish()
        } else {
            write!(f, "Matrix {{ rows: {}, cols: {}, .. }}", self.rows, self.cols)
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(TensorError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or non-finite input;
    /// meant for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data).expect("invalid matrix literal")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data).expect("from_fn produced non-finite values")
    }

    /// Internal constructor for kernels whose output shape is known correct.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f32> {
        (0..self.rows).map(|i: usize| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self, TensorError> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(TensorError::NonFinite(op))
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0f32; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_parts(self.cols, self.rows, out)
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != rhs.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut acc = vec![0.0f64; n];
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let lhs_row = self.row(i);
            for (p, &a) in lhs_row.iter().enumerate().take(k) {
                if a == 0.0 {
                    continue;
                }
                let a = a as f64;
                for (slot, &b) in acc.iter_mut().zip(rhs.row(p)) {
                    *slot += a * b as f64;
                }
            }
            out.extend(acc.iter().map(|&v| v as f32));
        }
        Matrix::from_parts(m, n, out).check_finite("matmul")
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn transpose_matmul(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        if self.rows != rhs.rows {
            return Err(TensorError::ShapeMismatch {
                op: "transpose_matmul",
                lhs: (self.cols, self.rows),
                rhs: rhs.shape(),
            });
        }
        let (k, m, n) = (self.rows, self.cols, rhs.cols);
        let mut acc = vec![0.0f64; m * n];
        for p in 0..k {
            let a_row = self.row(p);
            let b_row = rhs.row(p);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let a = a as f64;
                let slot = &mut acc[i * n..(i + 1) * n];
                for (s, &b) in slot.iter_mut().zip(b_row) {
                    *s += a * b as f64;
                }
            }
        }
        Matrix::from_parts(m, n, acc.into_iter().map(|v| v as f32).collect())
            .check_finite("transpose_matmul")
    }

    /// `self · rhsᵀ` without materialising the transpose.
    pub fn matmul_transpose(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != rhs.cols {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_transpose",
                lhs: self.shape(),
                rhs: (rhs.cols, rhs.rows),
            });
        }
        let mut out = Vec::with_capacity(self.rows * rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.push(dot(a, rhs.row(j)) as f32);
            }
        }
        Matrix::from_parts(self.rows, rhs.rows, out).check_finite("matmul_transpose")
    }

    fn zip_with(
        &self,
        rhs: &Matrix,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Matrix, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::from_parts(self.rows, self.cols, data).check_finite(op)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f32) -> Result<Matrix, TensorError> {
        let data = self.data.iter().map(|&v| v * s).collect();
        Matrix::from_parts(self.rows, self.cols, data).check_finite("scale")
    }

    /// Sum of squared entries, accumulated in `f64`.
    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    /// `‖self − rhs‖²_F` computed in `f64` without rounding the difference to `f32`.
    pub fn dist_sq(&self, rhs: &Matrix) -> Result<f64, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "dist_sq",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum())
    }

    /// Contiguous block of rows `[start, start + count)`.
    pub fn row_block(&self, start: usize, count: usize) -> Matrix {
        assert!(count > 0 && start + count <= self.rows, "row block out of range");
        Matrix::from_parts(
            count,
            self.cols,
            self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        )
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyShape { rows: 0, cols: 0 })?;
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "vstack",
                    lhs: first.shape(),
                    rhs: p.shape(),
                });
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix::from_parts(rows, cols, data))
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Result of [`orthogonalize`]: the orthonormal factor plus how many columns
/// had to be replaced because they were (numerically) dependent.
#[derive(Debug, Clone)]
pub struct Orthonormalized {
    pub q: Matrix,
    pub replaced_columns: usize,
}

/// Modified Gram–Schmidt with one re-orthogonalization pass.
///
/// A column whose residual squared norm falls below [`DEGENERATE_TOLERANCE`]
/// times its original squared norm (or is exactly zero) is replaced by a
/// fresh Gaussian direction drawn from `rng`, orthogonalized against the
/// columns already accepted.
pub fn orthogonalize(m: &Matrix, rng: &mut Rng) -> Result<Orthonormalized, TensorError> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(TensorError::TooWide { rows, cols });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut replaced = 0;
    for j in 0..cols {
        let mut v: Vec<f64> = (0..rows).map(|i| m.get(i, j) as f64).collect();
        let original: f64 = v.iter().map(|x| x * x).sum();
        let mut residual = project_out(&mut v, &basis);
        if original == 0.0 || residual <= DEGENERATE_TOLERANCE * original {
            // Dependent column: draw a replacement direction.
            replaced += 1;
            let mut attempts = 0;
            loop {
                attempts += 1;
                assert!(attempts < 64, "could not find an independent direction");
                v = (0..rows).map(|_| rng.gaussian()).collect();
                let fresh: f64 = v.iter().map(|x| x * x).sum();
                residual = project_out(&mut v, &basis);
                if residual > DEGENERATE_TOLERANCE * fresh {
                    break;
                }
            }
        }
        let inv = 1.0 / residual.sqrt();
        v.iter_mut().for_each(|x| *x *= inv);
        basis.push(v);
    }
    let mut data = vec![0.0f32; rows * cols];
    for (j, col) in basis.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            data[i * cols + j] = x as f32;
        }
    }
    Ok(Orthonormalized {
        q: Matrix::from_parts(rows, cols, data),
        replaced_columns: replaced,
    })
}

/// Two MGS sweeps removing the span of `basis` from `v`; returns the squared
/// norm of what remains.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for q in basis {
            let c: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
    }
    v.iter().map(|x| x * x).sum()
}

/// Matrix of i.i.d. `N(0, stddev²)` entries.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, stddev: f64) -> Matrix {
    assert!(stddev > 0.0, "stddev must be positive");
    Matrix::from_fn(rows, cols, |_, _| (rng.gaussian() * stddev) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn max_gram_deviation(q: &Matrix) -> f64 {
        let g = q.transpose_matmul(q).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) as f64 - target).abs());
            }
        }
        worst
    }

    #[test]
    fn identity_times_m_is_m() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(
            a.matmul(&b).unwrap(),
            Matrix::from_rows(&[[3.0], [7.0]])
        );
    }

    #[test]
    fn zero_times_m_is_zero() {
        let m = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]);
        assert_eq!(Matrix::zeros(3, 2).matmul(&m).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        let err = a.matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "matmul", .. }));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(TensorError::BadLength { .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f32::NAN]),
            Err(TensorError::NonFinite(_))
        ));
        assert!(matches!(
            Matrix::new(0, 2, vec![]),
            Err(TensorError::EmptyShape { .. })
        ));
    }

    #[test]
    fn transpose_products_agree_with_explicit_transpose() {
        let mut rng = Rng::seed_from(4);
        let a = gaussian_matrix(&mut rng, 5, 3, 1.0);
        let b = gaussian_matrix(&mut rng, 5, 4, 1.0);
        let c = gaussian_matrix(&mut rng, 2, 3, 1.0);
        assert_eq!(
            a.transpose_matmul(&b).unwrap(),
            a.transpose().matmul(&b).unwrap()
        );
        let lhs = a.matmul_transpose(&c).unwrap();
        let rhs = a.matmul(&c.transpose()).unwrap();
        assert!(lhs.dist_sq(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn orthogonalize_normalizes_single_column() {
        let mut rng = Rng::seed_from(0);
        let out = orthogonalize(&Matrix::from_rows(&[[3.0], [4.0]]), &mut rng).unwrap();
        assert_eq!(out.replaced_columns, 0);
        assert!((out.q.get(0, 0) - 0.6).abs() < 1e-7);
        assert!((out.q.get(1, 0) - 0.8).abs() < 1e-7);
    }

    #[test]
    fn orthogonalize_keeps_orthonormal_input() {
        let mut rng = Rng::seed_from(1);
        let q0 = orthogonalize(&gaussian_matrix(&mut rng, 8, 3, 1.0), &mut rng)
            .unwrap()
            .q;
        let q1 = orthogonalize(&q0, &mut rng).unwrap().q;
        assert!(max_gram_deviation(&q1) < 1e-5);
        for j in 0..3 {
            let d: f64 = dot(&q0.column(j), &q1.column(j));
            assert!((d.abs() - 1.0).abs() < 1e-5, "column {j} changed direction");
        }
    }

    #[test]
    fn orthogonalize_replaces_duplicate_column() {
        let mut rng = Rng::seed_from(2);
        let m = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [0.5, 0.5]]);
        let out = orthogonalize(&m, &mut rng).unwrap();
        assert_eq!(out.replaced_columns, 1);
        assert!(max_gram_deviation(&out.q) < 1e-5);
    }

    #[test]
    fn orthogonalize_handles_zero_input() {
        let mut rng = Rng::seed_from(3);
        let out = orthogonalize(&Matrix::zeros(6, 3), &mut rng).unwrap();
        assert_eq!(out.replaced_columns, 3);
        assert!(max_gram_deviation(&out.q) < 1e-5);
    }

    #[test]
    fn orthogonalize_rejects_wide_input() {
        let mut rng = Rng::seed_from(3);
        assert!(matches!(
            orthogonalize(&Matrix::zeros(2, 3), &mut rng),
            Err(TensorError::TooWide { .. })
        ));
    }

    #[test]
    fn frob_norm_examples() {
        assert_eq!(Matrix::zeros(3, 3).frob_norm_sq(), 0.0);
        assert_eq!(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).frob_norm_sq(), 30.0);
        assert_eq!(Matrix::from_rows(&[[0.0], [1.0], [0.0]]).frob_norm_sq(), 1.0);
    }

    #[test]
    fn gaussian_matrix_is_deterministic() {
        let a = gaussian_matrix(&mut Rng::seed_from(99), 4, 2, 1.0);
        let b = gaussian_matrix(&mut Rng::seed_from(99), 4, 2, 1.0);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn gaussian_matrix_moments() {
        let m = gaussian_matrix(&mut Rng::seed_from(5), 100, 100, 1.0);
        let mean = m.data().iter().map(|&v| v as f64).sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.05, "mean {mean}");

        let m = gaussian_matrix(&mut Rng::seed_from(6), 100, 100, 2.0);
        let mean = m.data().iter().map(|&v| v as f64).sum::<f64>() / 1e4;
        let var = m
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (1e4 - 1.0);
        assert!((var - 4.0).abs() < 0.4, "variance {var}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn orthogonalize_random_inputs(seed in any::<u64>(), rows in 2usize..24, frac in 0.1f64..1.0) {
            let cols = ((rows as f64 * frac).ceil() as usize).clamp(1, rows);
            let mut rng = Rng::seed_from(seed);
            let m = gaussian_matrix(&mut rng, rows, cols, 3.0);
            let q = orthogonalize(&m, &mut rng).unwrap().q;
            prop_assert!(max_gram_deviation(&q) < 1e-4);
        }

        #[test]
        fn matmul_is_associative(seed in any::<u64>(), a in 1usize..8, b in 1usize..8, c in 1usize..8, d in 1usize..8) {
            let mut rng = Rng::seed_from(seed);
            let x = gaussian_matrix(&mut rng, a, b, 1.0);
            let y = gaussian_matrix(&mut rng, b, c, 1.0);
            let z = gaussian_matrix(&mut rng, c, d, 1.0);
            let left = x.matmul(&y).unwrap().matmul(&z).unwrap();
            let right = x.matmul(&y.matmul(&z).unwrap()).unwrap();
            let rel = left.dist_sq(&right).unwrap().sqrt() / left.frob_norm_sq().sqrt().max(1e-12);
            prop_assert!(rel < 1e-3);
        }

        #[test]
        fn self_distance_is_zero(seed in any::<u64>(), r in 1usize..10, c in 1usize..10) {
            let m = gaussian_matrix(&mut Rng::seed_from(seed), r, c, 5.0);
            prop_assert_eq!(m.sub(&m).unwrap().frob_norm_sq(), 0.0);
        }
    }
}
