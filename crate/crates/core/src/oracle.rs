//! Exact, non-private sliding-window reference answers.
//!
//! Keeps the raw rows of the window, which costs `O(Wd)` space but leaves
//! nothing to trust except textbook linear algebra.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{loewner_tol, psd_dominates, top_k_right_subspace, Matrix, Projection, SymMatrix};

#[derive(Debug, Clone)]
pub struct WindowBuffer {
    window: usize,
    d: usize,
    rows: VecDeque<Vec<f64>>,
    cov: SymMatrix,
    since_recompute: usize,
}

impl WindowBuffer {
    pub fn new(window: usize, d: usize) -> Self {
        WindowBuffer {
            window,
            d,
            rows: VecDeque::with_capacity(window + 1),
            cov: SymMatrix::zeros(d),
            since_recompute: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        self.cov.add_assign(&SymMatrix::outer(row));
        self.rows.push_back(row.to_vec());
        if self.rows.len() > self.window {
            let old = self.rows.pop_front().expect("non-empty");
            self.cov = self.cov.sub(&SymMatrix::outer(&old));
        }
        self.since_recompute += 1;
        // Bounds cancellation drift of the running sum.
        if self.since_recompute >= self.window.max(1) {
            self.cov = self.recompute_covariance();
            self.since_recompute = 0;
        }
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// `A_W` as an `n×d` matrix, oldest row first.
    pub fn matrix(&self) -> Matrix {
        let n = self.rows.len();
        let m = DMatrix::from_fn(n, self.d, |i, j| self.rows[i][j]);
        Matrix::from_dmatrix(m).expect("rows are finite")
    }

    /// `A_WᵀA_W` from the running sum.
    pub fn exact_covariance(&self) -> SymMatrix {
        self.cov.clone()
    }

    pub fn recompute_covariance(&self) -> SymMatrix {
        let mut acc = SymMatrix::zeros(self.d);
        for r in &self.rows {
            acc.add_assign(&SymMatrix::outer(r));
        }
        acc
    }
}

/// Optimal rank-`k` projection of the window and its cost
/// `OPT = ‖A_W(I − P*)‖_F`.
pub fn exact_pca(buf: &WindowBuffer, k: usize) -> Result<(Projection, f64)> {
    if k == 0 || k > buf.dim() {
        return Err(invalid(format!("rank {k} must be in 1..={}", buf.dim())));
    }
    let a = buf.matrix();
    let p = if a.rows() == 0 {
        Projection::coordinates(buf.dim(), &(0..k).collect::<Vec<_>>())?
    } else {
        Projection::from_basis(&top_k_right_subspace(&a, k)?)?
    };
    let opt = a.projection_residual(&p);
    Ok((p, opt))
}

/// Minimum-norm least-squares `X = argmin ‖A X − B‖_F` where each buffered
/// row is `(a | b)` with `b` the last `p` entries.
pub fn exact_regress(buf: &WindowBuffer, p: usize) -> Result<Matrix> {
    let width = buf.dim();
    if p == 0 || p >= width {
        return Err(invalid(format!("response width {p} must be in 1..{width}")));
    }
    let d = width - p;
    let full = buf.matrix().into_dmatrix();
    let a = full.columns(0, d).into_owned();
    let b = full.columns(d, p).into_owned();
    if a.nrows() == 0 {
        return Matrix::from_dmatrix(DMatrix::zeros(d, p));
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let x = svd
        .solve(&b, 1e-10 * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| invalid(e.to_string()))?;
    Matrix::from_dmatrix(x)
}

/// `‖A X − B‖²_F` for the same row layout as [`exact_regress`].
pub fn regression_cost(buf: &WindowBuffer, x: &Matrix) -> f64 {
    let d = x.rows();
    let p = x.cols();
    let full = buf.matrix().into_dmatrix();
    let a = full.columns(0, d);
    let b = full.columns(d, p);
    (a * x.as_dmatrix() - b).norm_squared()
}

/// `‖A_W x‖²`.
pub fn exact_variance(buf: &WindowBuffer, x: &[f64]) -> Result<f64> {
    if x.len() != buf.dim() {
        return Err(Error::DimensionMismatch {
            expected: buf.dim(),
            got: x.len(),
        });
    }
    Ok(buf
        .rows()
        .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().powi(2))
        .sum())
}

/// `mult_lo·A + add_lo·I ⪯ S ⪯ mult_hi·A + add_hi·I` with the default
/// Loewner tolerance of each side.
pub fn sandwich_check(
    s: &SymMatrix,
    a_cov: &SymMatrix,
    mult_lo: f64,
    mult_hi: f64,
    add_lo: f64,
    add_hi: f64,
) -> Result<bool> {
    let lo = a_cov.scale(mult_lo).shift(add_lo);
    let hi = a_cov.scale(mult_hi).shift(add_hi);
    Ok(psd_dominates(&lo, s, loewner_tol(s))? && psd_dominates(s, &hi, loewner_tol(&hi))?)
}

/// [`sandwich_check`] with an explicit absolute tolerance on both sides.
pub fn sandwich_check_with_tol(
    s: &SymMatrix,
    a_cov: &SymMatrix,
    mult_lo: f64,
    mult_hi: f64,
    add_lo: f64,
    add_hi: f64,
    tol: f64,
) -> Result<bool> {
    let lo = a_cov.scale(mult_lo).shift(add_lo);
    let hi = a_cov.scale(mult_hi).shift(add_hi);
    Ok(psd_dominates(&lo, s, tol)? && psd_dominates(s, &hi, tol)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn covariance_tracks_window() {
        let mut buf = WindowBuffer::new(3, 2);
        assert_eq!(buf.exact_covariance(), SymMatrix::zeros(2));
        buf.push(&[1.0, 0.0]).unwrap();
        assert_eq!(buf.exact_covariance(), SymMatrix::diag(&[1.0, 0.0]));
        let mut rng = Rng::new(3, 0);
        for _ in 0..50 {
            let row = [rng.uniform() - 0.5, rng.uniform() - 0.5];
            buf.push(&row).unwrap();
            let diff = buf.exact_covariance().sub(&buf.recompute_covariance());
            assert!(diff.frobenius() <= 1e-10 * buf.recompute_covariance().frobenius().max(1.0));
        }
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn pca_of_rank_k_input_is_exact() {
        let mut buf = WindowBuffer::new(10, 3);
        for k in 0..6 {
            let c = (k as f64 + 1.0) / 10.0;
            buf.push(&[c, 2.0 * c / 3.0, 0.0]).unwrap();
        }
        let (_, opt) = exact_pca(&buf, 1).unwrap();
        assert!(opt < 1e-12);
    }

    #[test]
    fn regress_consistent_system() {
        let mut buf = WindowBuffer::new(10, 3);
        buf.push(&[0.5, 0.0, 0.5]).unwrap();
        buf.push(&[0.0, 0.4, 0.8]).unwrap();
        let x = exact_regress(&buf, 1).unwrap();
        assert!((x.get(0, 0) - 1.0).abs() < 1e-12 && (x.get(1, 0) - 2.0).abs() < 1e-12);
        assert!(regression_cost(&buf, &x) < 1e-20);
    }

    #[test]
    fn variance_along_axis_is_column_norm() {
        let mut buf = WindowBuffer::new(10, 2);
        buf.push(&[0.3, 0.4]).unwrap();
        buf.push(&[0.6, 0.0]).unwrap();
        assert!((exact_variance(&buf, &[1.0, 0.0]).unwrap() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn sandwich_examples() {
        let a = SymMatrix::diag(&[2.0, 1.0]);
        assert!(sandwich_check(&a, &a, 1.0, 1.0, 0.0, 0.0).unwrap());
        assert!(!sandwich_check(&a.scale(2.0), &a, 1.0, 1.5, 0.0, 0.0).unwrap());
        assert!(sandwich_check(&a.shift(1.0), &a, 1.0, 1.0, 0.0, 1.0).unwrap());
    }
}
