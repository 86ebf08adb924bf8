//! Dense column-major `f64` matrices.
//!
//! Weight matrices store one neuron per column; a column is a contiguous
//! slice, which keeps column-wise operations (normalization, quantization,
//! per-column dot products) cache-friendly and lets every reduction run in
//! a fixed ascending index order for bit-level reproducibility.

use crate::error::{Error, Result};

/// Norm threshold below which a column or input vector counts as degenerate.
pub const EPSILON_NORM: f64 = 1e-12;

/// Dense matrix of 64-bit reals in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from column-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadShape {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from a slice of columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        assert!(!columns.is_empty(), "need at least one column");
        let rows = columns[0].len();
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::DimensionMismatch {
                    context: "from_columns",
                    expected: rows,
                    actual: col.len(),
                });
            }
            let _ = j;
            data.extend_from_slice(col);
        }
        Ok(Matrix {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[col * self.rows + row] = value;
    }

    /// Column `j` as a contiguous slice.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        debug_assert!(j < self.cols);
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        debug_assert!(j < self.cols);
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// `out[j] = sum_i W[i,j] * x[i]`, i.e. `Wᵀx`, accumulated in ascending
    /// row order per column.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "matvec",
                expected: self.rows,
                actual: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.cols);
        for j in 0..self.cols {
            let col = self.col(j);
            let mut acc = 0.0;
            for i in 0..self.rows {
                acc += col[i] * x[i];
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// `out[i] = sum_j W[i,j] * v[j]`, i.e. `Wv`, accumulated in ascending
    /// column order per row.
    pub fn matvec_rows(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matvec_rows",
                expected: self.cols,
                actual: v.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for j in 0..self.cols {
            let col = self.col(j);
            let vj = v[j];
            for i in 0..self.rows {
                out[i] += col[i] * vj;
            }
        }
        Ok(out)
    }

    /// Divides every column by its L2 norm. A column with norm at or below
    /// [`EPSILON_NORM`] is reported as degenerate.
    pub fn renormalize_columns(&self) -> Result<Matrix> {
        let mut out = self.clone();
        out.renormalize_columns_in_place()?;
        Ok(out)
    }

    pub fn renormalize_columns_in_place(&mut self) -> Result<()> {
        for j in 0..self.cols {
            let norm = l2_norm(self.col(j));
            if norm <= EPSILON_NORM {
                return Err(Error::DegenerateColumn {
                    col: j,
                    norm,
                    eps: EPSILON_NORM,
                });
            }
            let inv = 1.0 / norm;
            for v in self.col_mut(j) {
                *v *= inv;
            }
        }
        Ok(())
    }

    /// Elementwise map into a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Elementwise product into a new matrix.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// Frobenius norm, summed in ascending index order.
    pub fn frobenius_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        Ok(())
    }
}

/// L2 norm accumulated in ascending index order.
pub fn l2_norm(v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &x in v {
        acc += x * x;
    }
    acc.sqrt()
}

/// Dot product accumulated in ascending index order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}
