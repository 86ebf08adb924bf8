//! Ternary quantization: threshold selection, sign/scale projection, the
//! scaled straight-through estimator, and similarity diagnostics.
//!
//! A quantized matrix keeps one sign pattern in {-1, 0, +1} plus a
//! per-column scale `alpha = 1/sqrt(nnz)`, which makes every reconstructed
//! column unit-norm and lets the forward pass run as additions followed by
//! a single multiply per column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Quantized counterpart of a weight matrix: per-entry signs plus
/// per-column scales.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryColumnSet {
    rows: usize,
    cols: usize,
    /// Column-major signs in {-1, 0, +1}.
    signs: Vec<i8>,
    /// `alphas[j] = 1 / sqrt(nonzeros in column j)`.
    alphas: Vec<f64>,
}

impl TernaryColumnSet {
    /// Assembles a set from raw parts, checking that every column has at
    /// least one nonzero sign and a positive finite scale.
    pub fn from_parts(rows: usize, cols: usize, signs: Vec<i8>, alphas: Vec<f64>) -> Result<Self> {
        assert_eq!(signs.len(), rows * cols, "sign buffer length mismatch");
        assert_eq!(alphas.len(), cols, "alpha buffer length mismatch");
        for j in 0..cols {
            let nnz = signs[j * rows..(j + 1) * rows]
                .iter()
                .filter(|&&s| s != 0)
                .count();
            if nnz == 0 {
                return Err(Error::AllZeroColumn { col: j, delta: 0.0 });
            }
            if !(alphas[j].is_finite() && alphas[j] > 0.0) {
                return Err(Error::NonFinite {
                    context: "ternary column scale",
                });
            }
        }
        Ok(TernaryColumnSet {
            rows,
            cols,
            signs,
            alphas,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    #[inline]
    pub fn sign(&self, row: usize, col: usize) -> i8 {
        self.signs[col * self.rows + row]
    }

    /// Signs of column `j` as a contiguous slice.
    #[inline]
    pub fn sign_col(&self, j: usize) -> &[i8] {
        &self.signs[j * self.rows..(j + 1) * self.rows]
    }

    /// Dense reconstruction `alpha_j * sign[i,j]`.
    pub fn reconstruct(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            let alpha = self.alphas[j];
            let signs = self.sign_col(j);
            let col = out.col_mut(j);
            for i in 0..self.rows {
                col[i] = alpha * f64::from(signs[i]);
            }
        }
        out
    }

    /// `out[j] = alpha_j * (sum over +1 rows of x[i] - sum over -1 rows)`,
    /// accumulated in ascending row order. This is the canonical ternary
    /// forward: additions only, one multiply per column.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "ternary matvec",
                expected: self.rows,
                actual: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.cols);
        for j in 0..self.cols {
            let signs = self.sign_col(j);
            let mut acc = 0.0;
            for i in 0..self.rows {
                match signs[i] {
                    1 => acc += x[i],
                    -1 => acc -= x[i],
                    _ => {}
                }
            }
            out.push(self.alphas[j] * acc);
        }
        Ok(out)
    }

    /// `out[i] = sum_j alpha_j * sign[i,j] * v[j]`, accumulated in
    /// ascending column order per row.
    pub fn matvec_rows(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "ternary matvec_rows",
                expected: self.cols,
                actual: v.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for j in 0..self.cols {
            let scaled = self.alphas[j] * v[j];
            let signs = self.sign_col(j);
            for i in 0..self.rows {
                match signs[i] {
                    1 => out[i] += scaled,
                    -1 => out[i] -= scaled,
                    _ => {}
                }
            }
        }
        Ok(out)
    }

    /// Fraction of zero signs.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.signs.iter().filter(|&&s| s == 0).count();
        zeros as f64 / self.signs.len() as f64
    }

    /// Nonzero count of column `j`.
    pub fn nnz(&self, j: usize) -> usize {
        self.sign_col(j).iter().filter(|&&s| s != 0).count()
    }
}

/// Threshold that zeroes the `floor(t * m * n)` smallest-magnitude entries.
///
/// With 1-based indexing into the ascending sort of `|W|`, the returned
/// value is the `idx`-th smallest magnitude (0 when `idx` floors to zero),
/// so quantizing with it realizes exactly that sparsity when magnitudes
/// are distinct, and at least that much under ties.
pub fn threshold_from_sparsity(w: &Matrix, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::SparsityOutOfRange { t });
    }
    threshold_from_magnitudes(w.data().iter().map(|v| v.abs()).collect(), t)
}

/// Same rule over magnitudes pooled from several matrices (global scope).
pub fn threshold_from_sparsity_global(mats: &[&Matrix], t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::SparsityOutOfRange { t });
    }
    let mut mags = Vec::new();
    for m in mats {
        mags.extend(m.data().iter().map(|v| v.abs()));
    }
    threshold_from_magnitudes(mags, t)
}

fn threshold_from_magnitudes(mut mags: Vec<f64>, t: f64) -> Result<f64> {
    let idx = (t * mags.len() as f64).floor() as usize;
    if idx == 0 {
        return Ok(0.0);
    }
    mags.sort_unstable_by(f64::total_cmp);
    Ok(mags[idx - 1])
}

/// Sign pattern of `Ternary(W, delta)`: +1 above `delta`, -1 below
/// `-delta`, 0 in between (inclusive). Infallible; column validity is the
/// caller's concern.
pub fn ternary_signs(w: &Matrix, delta: f64) -> Vec<i8> {
    debug_assert!(delta >= 0.0);
    w.data()
        .iter()
        .map(|&v| {
            if v > delta {
                1
            } else if v < -delta {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// Full ternary projection with per-column scales.
///
/// A column whose entries all fall inside `[-delta, delta]` has no scale
/// and is reported as an error; training loops must treat that as a fatal
/// misconfiguration of the threshold.
pub fn ternary_quantize(w: &Matrix, delta: f64) -> Result<TernaryColumnSet> {
    let rows = w.rows();
    let signs = ternary_signs(w, delta);
    let mut alphas = Vec::with_capacity(w.cols());
    for j in 0..w.cols() {
        let nnz = signs[j * rows..(j + 1) * rows]
            .iter()
            .filter(|&&s| s != 0)
            .count();
        if nnz == 0 {
            return Err(Error::AllZeroColumn { col: j, delta });
        }
        alphas.push(1.0 / (nnz as f64).sqrt());
    }
    Ok(TernaryColumnSet {
        rows,
        cols: w.cols(),
        signs,
        alphas,
    })
}

/// Gradient re-scaling factor `S = 1 - W .* W`.
///
/// Entries of `W` must lie in [-1, 1] (guaranteed by unit-norm columns);
/// anything outside by more than 1e-9 indicates a broken norm invariant
/// upstream and is reported as an error.
pub fn rescale_factor(w: &Matrix) -> Result<Matrix> {
    for j in 0..w.cols() {
        for i in 0..w.rows() {
            let v = w.get(i, j);
            if v.abs() > 1.0 + 1e-9 {
                return Err(Error::WeightOutOfDomain {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(w.map(|v| (1.0 - v * v).clamp(0.0, 1.0)))
}

/// Straight-through backward: `grad ⊙ (1 - W ⊙ W)`.
pub fn ste_backward(grad_wrt_quantized: &Matrix, w: &Matrix) -> Result<Matrix> {
    if grad_wrt_quantized.rows() != w.rows() || grad_wrt_quantized.cols() != w.cols() {
        return Err(Error::DimensionMismatch {
            context: "ste_backward",
            expected: w.rows() * w.cols(),
            actual: grad_wrt_quantized.rows() * grad_wrt_quantized.cols(),
        });
    }
    let s = rescale_factor(w)?;
    grad_wrt_quantized.hadamard(&s)
}

/// Mean of the weight gradient over positions where the full-precision
/// weight is exactly nonzero; 0 when no such position exists.
pub fn delta_gradient(grad_w: &Matrix, w: &Matrix) -> Result<f64> {
    if grad_w.rows() != w.rows() || grad_w.cols() != w.cols() {
        return Err(Error::DimensionMismatch {
            context: "delta_gradient",
            expected: w.rows() * w.cols(),
            actual: grad_w.rows() * grad_w.cols(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (g, v) in grad_w.data().iter().zip(w.data().iter()) {
        if *v != 0.0 {
            sum += g;
            count += 1;
        }
    }
    if count == 0 {
        Ok(0.0)
    } else {
        Ok(sum / count as f64)
    }
}

/// How the learnable threshold moves on its averaged gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaUpdateMode {
    /// Plain gradient descent, clamped at zero.
    SgdLiteral,
    /// Monotone increase by the gradient magnitude.
    MonotoneAbs,
}

impl Default for DeltaUpdateMode {
    fn default() -> Self {
        DeltaUpdateMode::SgdLiteral
    }
}

/// One threshold update step.
pub fn update_delta(delta_bar: f64, g: f64, lr_delta: f64, mode: DeltaUpdateMode) -> f64 {
    debug_assert!(delta_bar >= 0.0 && lr_delta >= 0.0);
    match mode {
        DeltaUpdateMode::SgdLiteral => (delta_bar - lr_delta * g).max(0.0),
        DeltaUpdateMode::MonotoneAbs => delta_bar + lr_delta * g.abs(),
    }
}

/// Average cosine similarity between the columns of `w` and their ternary
/// reconstructions.
pub fn mean_cosine_similarity(w: &Matrix, t: &TernaryColumnSet) -> Result<f64> {
    if w.rows() != t.rows() || w.cols() != t.cols() {
        return Err(Error::DimensionMismatch {
            context: "mean_cosine_similarity",
            expected: w.rows() * w.cols(),
            actual: t.rows() * t.cols(),
        });
    }
    let mut total = 0.0;
    for j in 0..w.cols() {
        let col = w.col(j);
        let signs = t.sign_col(j);
        let mut acc = 0.0;
        for i in 0..w.rows() {
            match signs[i] {
                1 => acc += col[i],
                -1 => acc -= col[i],
                _ => {}
            }
        }
        total += t.alphas[j] * acc;
    }
    Ok(total / w.cols() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::l2_norm;
    use crate::rng::Rng;

    fn random_unit_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
        Matrix::from_vec(rows, cols, data)
            .unwrap()
            .renormalize_columns()
            .unwrap()
    }

    #[test]
    fn threshold_half_of_four() {
        let w = Matrix::from_vec(2, 2, vec![0.1, -0.4, 0.2, 0.3]).unwrap();
        let delta = threshold_from_sparsity(&w, 0.5).unwrap();
        assert_eq!(delta, 0.2);
        let signs = ternary_signs(&w, delta);
        let zeros = signs.iter().filter(|&&s| s == 0).count();
        assert_eq!(zeros, 2);
    }

    #[test]
    fn threshold_floors_to_zero() {
        let w = Matrix::from_vec(2, 2, vec![0.1, 0.4, 0.2, 0.3]).unwrap();
        assert_eq!(threshold_from_sparsity(&w, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn threshold_tie_inflation() {
        let w = Matrix::from_vec(2, 2, vec![0.5, -0.5, 0.5, 0.5]).unwrap();
        let delta = threshold_from_sparsity(&w, 0.5).unwrap();
        assert_eq!(delta, 0.5);
        let signs = ternary_signs(&w, delta);
        assert!(signs.iter().all(|&s| s == 0));
    }

    #[test]
    fn threshold_rejects_bad_t() {
        let w = Matrix::zeros(2, 2);
        assert!(threshold_from_sparsity(&w, 0.0).is_err());
        assert!(threshold_from_sparsity(&w, 1.0).is_err());
    }

    #[test]
    fn quantize_hand_column() {
        let w = Matrix::from_vec(3, 1, vec![0.6, 0.8, 0.0]).unwrap();
        let t = ternary_quantize(&w, 0.5).unwrap();
        assert_eq!(t.signs(), &[1, 1, 0]);
        assert!((t.alphas()[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quantize_negative_column() {
        let w = Matrix::from_vec(2, 1, vec![-0.8, 0.6]).unwrap();
        let t = ternary_quantize(&w, 0.7).unwrap();
        assert_eq!(t.signs(), &[-1, 0]);
        assert_eq!(t.alphas()[0], 1.0);
    }

    #[test]
    fn quantize_all_zero_column_errors() {
        let w = Matrix::from_vec(2, 1, vec![0.1, 0.2]).unwrap();
        match ternary_quantize(&w, 0.5) {
            Err(Error::AllZeroColumn { col: 0, .. }) => {}
            other => panic!("expected all-zero-column error, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_columns_unit_norm() {
        let mut rng = Rng::from_seed(11);
        for _ in 0..200 {
            let rows = 2 + rng.next_below(16);
            let cols = 1 + rng.next_below(8);
            let w = random_unit_matrix(&mut rng, rows, cols);
            let t = match ternary_quantize(&w, threshold_from_sparsity(&w, 0.3).unwrap()) {
                Ok(t) => t,
                Err(Error::AllZeroColumn { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let rec = t.reconstruct();
            for j in 0..cols {
                assert!((l2_norm(rec.col(j)) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monotone_nnz_in_delta() {
        let mut rng = Rng::from_seed(13);
        let w = random_unit_matrix(&mut rng, 12, 6);
        let d1 = threshold_from_sparsity(&w, 0.3).unwrap();
        let d2 = threshold_from_sparsity(&w, 0.6).unwrap();
        assert!(d1 <= d2);
        let s1 = ternary_signs(&w, d1);
        let s2 = ternary_signs(&w, d2);
        for j in 0..6 {
            let nnz1 = s1[j * 12..(j + 1) * 12].iter().filter(|&&s| s != 0).count();
            let nnz2 = s2[j * 12..(j + 1) * 12].iter().filter(|&&s| s != 0).count();
            assert!(nnz1 >= nnz2);
        }
    }

    #[test]
    fn rescale_factor_values() {
        let w = Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.5]).unwrap();
        let s = rescale_factor(&w).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0, 0.75]);
    }

    #[test]
    fn rescale_factor_domain_error() {
        let w = Matrix::from_vec(1, 1, vec![1.5]).unwrap();
        assert!(rescale_factor(&w).is_err());
    }

    #[test]
    fn ste_backward_cases() {
        let g = Matrix::from_vec(1, 3, vec![2.0, 2.0, 2.0]).unwrap();
        let w0 = Matrix::zeros(1, 3);
        assert_eq!(ste_backward(&g, &w0).unwrap().data(), g.data());
        let w1 = Matrix::from_vec(1, 3, vec![1.0, -1.0, 1.0]).unwrap();
        assert_eq!(ste_backward(&g, &w1).unwrap().data(), &[0.0, 0.0, 0.0]);
        let wh = Matrix::from_vec(1, 3, vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(ste_backward(&g, &wh).unwrap().data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn ste_backward_bounded_by_grad() {
        let mut rng = Rng::from_seed(17);
        let w = random_unit_matrix(&mut rng, 8, 4);
        let g = Matrix::from_vec(8, 4, (0..32).map(|_| rng.normal()).collect()).unwrap();
        let out = ste_backward(&g, &w).unwrap();
        for (o, gi) in out.data().iter().zip(g.data().iter()) {
            assert!(o.abs() <= gi.abs() + 1e-15);
        }
    }

    #[test]
    fn delta_gradient_hand_average() {
        let w = Matrix::from_vec(2, 2, vec![0.5, 0.5, -0.5, 0.0]).unwrap();
        let g = Matrix::from_vec(2, 2, vec![0.2, 0.6, -0.4, 99.0]).unwrap();
        let d = delta_gradient(&g, &w).unwrap();
        assert!((d - (0.2 - 0.4 + 0.6) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn delta_gradient_degenerate() {
        let w = Matrix::zeros(2, 2);
        let g = Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(delta_gradient(&g, &w).unwrap(), 0.0);
        let g0 = Matrix::zeros(2, 2);
        let w1 = Matrix::from_vec(2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(delta_gradient(&g0, &w1).unwrap(), 0.0);
    }

    #[test]
    fn update_delta_modes() {
        assert_eq!(update_delta(0.1, 0.0, 0.4, DeltaUpdateMode::SgdLiteral), 0.1);
        assert_eq!(update_delta(0.1, 0.5, 0.4, DeltaUpdateMode::SgdLiteral), 0.0);
        let v = update_delta(0.1, -0.5, 0.2, DeltaUpdateMode::MonotoneAbs);
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cosine_fixed_point_is_one() {
        // Ternary-valued unit columns quantize to themselves.
        let a = 1.0 / 2f64.sqrt();
        let w = Matrix::from_vec(4, 2, vec![a, a, 0.0, 0.0, 0.0, -a, 0.0, a]).unwrap();
        let t = ternary_quantize(&w, 0.1).unwrap();
        let sim = mean_cosine_similarity(&w, &t).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let w = Matrix::from_vec(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let t = TernaryColumnSet::from_parts(3, 1, vec![0, 1, 0], vec![1.0]).unwrap();
        assert_eq!(mean_cosine_similarity(&w, &t).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_value() {
        let w = Matrix::from_vec(2, 1, vec![0.8, 0.6]).unwrap();
        let t = ternary_quantize(&w, 0.7).unwrap();
        assert_eq!(t.signs(), &[1, 0]);
        let sim = mean_cosine_similarity(&w, &t).unwrap();
        assert!((sim - 0.8).abs() < 1e-15);
    }

    #[test]
    fn scale_identity_matches_dense_within_tolerance() {
        let mut rng = Rng::from_seed(23);
        for _ in 0..100 {
            let rows = 3 + rng.next_below(12);
            let cols = 1 + rng.next_below(6);
            let w = random_unit_matrix(&mut rng, rows, cols);
            let t = match ternary_quantize(&w, threshold_from_sparsity(&w, 0.4).unwrap()) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let x: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
            let fast = t.matvec(&x).unwrap();
            let dense = t.reconstruct().matvec(&x).unwrap();
            for (a, b) in fast.iter().zip(dense.iter()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
