//! Small dense helpers shared by the rules and risk estimators.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative rank cutoff `max(rows, cols) · ε · s_max`.
pub(crate) fn rank_tolerance(rows: usize, cols: usize, s_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * s_max
}

/// `X Xᵀ`.
pub(crate) fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x * x.transpose()
}

/// `Xᵀ X`.
pub(crate) fn cross(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

/// Adds `shift` to the diagonal and factors.
pub(crate) fn shifted_cholesky(mut m: DMatrix<f64>, shift: f64) -> Result<Cholesky<f64, Dyn>> {
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    Cholesky::new(m).ok_or_else(|| Error::Linalg("matrix is not positive definite".into()))
}

/// Orthonormal basis (`d × rank`) of the span of the rows of `x` (`n × d`),
/// from a column-pivoted QR of `xᵀ`.
pub(crate) fn row_space_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    if n == 0 {
        return DMatrix::zeros(d, 0);
    }
    let qr = x.transpose().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let r00 = r[(0, 0)].abs();
    let tol = rank_tolerance(n, d, r00);
    let rank = (0..k).take_while(|&i| r[(i, i)].abs() > tol).count();
    qr.q().columns(0, rank).into_owned()
}

/// `Σ_j w_j (1 − ‖Q_{j·}‖²)`: the weighted trace of `I − P` where `P = QQᵀ`.
/// Each diagonal entry of `I − P` is clamped at zero against rounding.
pub(crate) fn weighted_residual_trace(q: &DMatrix<f64>, w: &[f64]) -> f64 {
    w.iter()
        .enumerate()
        .map(|(j, wj)| wj * (1.0 - q.row(j).norm_squared()).max(0.0))
        .sum()
}

/// Pairwise summation, so the reduction order depends only on the length.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Scales column `j` of `x` by `c[j]`.
pub(crate) fn scale_columns(x: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, cj) in c.iter().enumerate() {
        out.column_mut(j).scale_mut(*cj);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_space_detects_rank() {
        let x = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, 1.0, 2.0, 4.0, 0.0, 2.0, 0.0, 1.0, 1.0, 0.0]);
        let q = row_space_basis(&x);
        assert_eq!(q.ncols(), 2);
        let p = &q * q.transpose();
        for i in 0..3 {
            let row = x.row(i).transpose();
            assert!((&p * &row - &row).norm() < 1e-12);
        }
    }

    #[test]
    fn residual_trace_of_full_projection_is_zero() {
        let x = DMatrix::<f64>::identity(3, 3);
        let q = row_space_basis(&x);
        assert!(weighted_residual_trace(&q, &[1.0, 2.0, 3.0]).abs() < 1e-15);
    }

    #[test]
    fn residual_trace_is_never_negative() {
        let x = DMatrix::from_row_slice(4, 3, &[0.3, 1.7, -2.2, 1.1, 0.4, 0.9, -0.6, 2.5, 0.1, 1.3, -0.8, 0.7]);
        let q = row_space_basis(&x);
        assert_eq!(q.ncols(), 3);
        assert!(weighted_residual_trace(&q, &[1.0, 0.5, 0.25]) >= 0.0);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }
}
