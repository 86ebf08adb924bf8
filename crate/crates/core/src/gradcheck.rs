//! Central finite-difference gradient oracle.
//!
//! Used by the test suites to validate every analytic gradient in the
//! crate; it only ever evaluates the scalar objective, never the gradient
//! path it checks.

use crate::matrix::Matrix;

/// Default perturbation step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Entrywise central difference `(f(W + h e_ij) - f(W - h e_ij)) / 2h`.
pub fn finite_diff_grad(f: impl Fn(&Matrix) -> f64, w: &Matrix, h: f64) -> Matrix {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    let mut probe = w.clone();
    for j in 0..w.cols() {
        for i in 0..w.rows() {
            let orig = probe.get(i, j);
            probe.set(i, j, orig + h);
            let plus = f(&probe);
            probe.set(i, j, orig - h);
            let minus = f(&probe);
            probe.set(i, j, orig);
            grad.set(i, j, (plus - minus) / (2.0 * h));
        }
    }
    grad
}

/// Relative Frobenius error between an analytic gradient and its oracle.
pub fn relative_error(analytic: &Matrix, oracle: &Matrix) -> f64 {
    let mut diff = 0.0;
    for (a, b) in analytic.data().iter().zip(oracle.data().iter()) {
        diff += (a - b) * (a - b);
    }
    diff.sqrt() / oracle.frobenius_norm().max(1e-12)
}
