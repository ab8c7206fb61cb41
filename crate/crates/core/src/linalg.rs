//! Dense real linear algebra used by every other module.
//!
//! Storage and the raw factorizations come from `nalgebra`; this module adds
//! the validated newtypes ([`Matrix`], [`SymMatrix`], [`Projection`]), a
//! deterministic eigen/singular-vector ordering and sign convention, and the
//! Loewner-order test that drives checkpoint compaction.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Relative symmetry tolerance accepted by [`SymMatrix::from_row_major`].
const SYMMETRY_TOL: f64 = 1e-12;
/// Relative cutoff below which singular values count as zero in [`pinv`].
const PINV_CUTOFF: f64 = 1e-10;
/// Relative floor used wherever an exact Loewner comparison is meant.
pub const LOEWNER_REL_TOL: f64 = 1e-9;

/// General dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix(DMatrix<f64>);

/// Symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Matrix(DMatrix::identity(n, n))
    }

    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if rows * cols != entries.len() {
            return Err(invalid(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Matrix::from_dmatrix(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::from_row_major(rows.len(), cols, &flat)
    }

    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if !all_finite(&m) {
            return Err(invalid("matrix has non-finite entries"));
        }
        Ok(Matrix(m))
    }

    /// Outer product `col · rowᵀ`.
    pub fn outer(col: &[f64], row: &[f64]) -> Self {
        Matrix(DMatrix::from_fn(col.len(), row.len(), |i, j| col[i] * row[j]))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub(crate) fn as_dmatrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.0.len());
        for i in 0..self.rows() {
            out.extend(self.0.row(i).iter());
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix(self.0.transpose())
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                got: other.rows(),
            });
        }
        Ok(Matrix(&self.0 * &other.0))
    }

    /// `AᵀA`.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::symmetrize(self.0.tr_mul(&self.0))
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix(&self.0 * s)
    }

    /// `‖A(I − P)‖_F`.
    pub fn projection_residual(&self, p: &Projection) -> f64 {
        let d = self.cols();
        let comp = DMatrix::identity(d, d) - p.matrix().as_dmatrix();
        (&self.0 * comp).norm()
    }
}

impl SymMatrix {
    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn diag(values: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn from_row_major(d: usize, entries: &[f64]) -> Result<Self> {
        let m = Matrix::from_row_major(d, d, entries)?.0;
        SymMatrix::from_dmatrix(m)
    }

    /// Validates finiteness and symmetry (to `1e-12·max(1, ‖S‖_F)`).
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid("symmetric matrix must be square"));
        }
        if !all_finite(&m) {
            return Err(invalid("matrix has non-finite entries"));
        }
        let tol = SYMMETRY_TOL * m.norm().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > tol {
            return Err(invalid(format!("matrix is not symmetric (max |S-Sᵀ| = {asym:e})")));
        }
        Ok(SymMatrix::symmetrize(m))
    }

    /// Averages with the transpose; for results of products that are
    /// symmetric in exact arithmetic.
    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    /// `a aᵀ` for a row `a`.
    pub fn outer(a: &[f64]) -> Self {
        SymMatrix(DMatrix::from_fn(a.len(), a.len(), |i, j| a[i] * a[j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        // Symmetric, so column-major storage is already row-major.
        self.0.as_slice().to_vec()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// Eigenvalues sorted descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add_assign(&mut self, other: &SymMatrix) {
        self.0 += &other.0;
    }

    /// `S + s·I`.
    pub fn shift(&self, s: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += s;
        }
        SymMatrix(m)
    }

    /// `xᵀ S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        v.dot(&(&self.0 * &v))
    }

    /// Principal submatrix / block `[rows, cols]` as a general matrix.
    pub fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Matrix {
        Matrix(self.0.view((r0, c0), (nr, nc)).into_owned())
    }

    /// Zeroes negative eigenvalues.
    pub fn clip_psd(&self) -> SymMatrix {
        let e = self.0.clone().symmetric_eigen();
        let vals = e.eigenvalues.map(|x| x.max(0.0));
        SymMatrix::symmetrize(&e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose())
    }

    /// `F` with `FᵀF = S`, clamping negative eigenvalues to zero.
    pub fn psd_factor(&self) -> Matrix {
        let e = self.0.clone().symmetric_eigen();
        let roots = e.eigenvalues.map(|x| x.max(0.0).sqrt());
        Matrix(DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose())
    }
}

/// Eigen-decomposition with eigenvalues descending and eigenvectors as
/// columns, each sign-normalized.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Flips `v` so that its first non-negligible coordinate is positive.
fn normalize_sign(mut v: DVector<f64>) -> DVector<f64> {
    let scale = v.amax();
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

fn columns_sorted(values: &[f64], vectors: &DMatrix<f64>) -> Eigen {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let cols: Vec<DVector<f64>> = order
        .iter()
        .map(|&i| normalize_sign(vectors.column(i).into_owned()))
        .collect();
    Eigen {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: if cols.is_empty() {
            DMatrix::zeros(vectors.nrows(), 0)
        } else {
            DMatrix::from_columns(&cols)
        },
    }
}

pub fn sym_eigen(s: &SymMatrix) -> Result<Eigen> {
    if !all_finite(&s.0) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let e = s.0.clone().symmetric_eigen();
    let values: Vec<f64> = e.eigenvalues.iter().copied().collect();
    Ok(columns_sorted(&values, &e.eigenvectors))
}

/// `tol` floor for comparisons against `b`: `1e-9·max(1, ‖b‖)`.
///
/// Uses the Frobenius norm as a cheap upper bound on the spectral norm.
pub fn loewner_tol(b: &SymMatrix) -> f64 {
    LOEWNER_REL_TOL * b.frobenius().max(1.0)
}

/// `A ⪯ B` up to `tol`, i.e. `λ_min(B − A) ≥ −tol`.
pub fn psd_dominates(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(invalid("tolerance must be non-negative"));
    }
    let mut diff = &b.0 - &a.0;
    // A successful Cholesky of B − A + tol·I settles the common case cheaply;
    // failures fall through to the eigenvalue test, which is exact at the
    // boundary.
    let mut shifted = diff.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += tol;
    }
    if tol > 0.0 && shifted.cholesky().is_some() {
        return Ok(true);
    }
    diff = SymMatrix::symmetrize(diff).0;
    let min = diff.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    Ok(min >= -tol || diff.nrows() == 0)
}

/// Orthonormal basis (as `d×k` columns) of the top-`k` right singular
/// subspace of `a`, ordered by singular value, sign-normalized.
pub fn top_k_right_subspace(a: &Matrix, k: usize) -> Result<Matrix> {
    let d = a.cols();
    if k == 0 || k > d {
        return Err(invalid(format!("rank {k} must be in 1..={d}")));
    }
    let svd = a.0.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]).then(x.cmp(&y)));

    let mut cols: Vec<DVector<f64>> = order
        .iter()
        .take(k)
        .map(|&i| normalize_sign(v_t.row(i).transpose()))
        .collect();

    if cols.len() < k {
        // Fewer rows than requested rank: complete with directions from the
        // orthogonal complement of the computed basis.
        let basis = DMatrix::from_columns(&cols);
        let comp = SymMatrix::symmetrize(DMatrix::identity(d, d) - &basis * basis.transpose());
        let e = sym_eigen(&comp)?;
        for j in 0..(k - cols.len()) {
            cols.push(e.vectors.column(j).into_owned());
        }
    }
    Ok(Matrix(DMatrix::from_columns(&cols)))
}

/// Moore–Penrose pseudoinverse of a symmetric matrix.
pub fn pinv(s: &SymMatrix) -> SymMatrix {
    let e = s.0.clone().symmetric_eigen();
    let smax = e.eigenvalues.amax();
    let cutoff = PINV_CUTOFF * smax;
    let inv = e
        .eigenvalues
        .map(|x| if x.abs() > cutoff && x != 0.0 { 1.0 / x } else { 0.0 });
    SymMatrix::symmetrize(&e.eigenvectors * DMatrix::from_diagonal(&inv) * e.eigenvectors.transpose())
}

/// Best rank-`k` approximation `[X]_k` via truncated SVD.
pub fn truncate_rank(x: &Matrix, k: usize) -> Result<Matrix> {
    let r = x.rows().min(x.cols());
    if k > r {
        return Err(invalid(format!("rank {k} exceeds min dimension {r}")));
    }
    let svd = x.0.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut out = DMatrix::zeros(x.rows(), x.cols());
    for &i in order.iter().take(k) {
        out += sv[i] * u.column(i) * v_t.row(i);
    }
    Ok(Matrix(out))
}

fn is_orthonormal(gram: &DMatrix<f64>) -> bool {
    let n = gram.nrows();
    (gram - DMatrix::identity(n, n)).amax() <= 1e-8
}

/// Minimizer of `‖C X R − F‖_F` over rank-`k` `X`, which is `[CᵀFRᵀ]_k`
/// when `C` has orthonormal columns and `R` orthonormal rows.
pub fn solve_rank_constrained(c: &Matrix, r: &Matrix, f: &Matrix, k: usize) -> Result<Matrix> {
    if c.rows() != f.rows() || r.cols() != f.cols() {
        return Err(invalid(format!(
            "non-conforming shapes C {}x{}, R {}x{}, F {}x{}",
            c.rows(),
            c.cols(),
            r.rows(),
            r.cols(),
            f.rows(),
            f.cols()
        )));
    }
    if !is_orthonormal(&c.0.tr_mul(&c.0)) {
        return Err(invalid("C must have orthonormal columns"));
    }
    if !is_orthonormal(&(&r.0 * r.0.transpose())) {
        return Err(invalid("R must have orthonormal rows"));
    }
    let inner = Matrix(c.0.tr_mul(&f.0) * r.0.transpose());
    truncate_rank(&inner, k)
}

/// Orthogonal projection matrix of a given rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    rank: usize,
    p: SymMatrix,
}

const PROJECTION_TOL: f64 = 1e-8;

impl Projection {
    /// `V Vᵀ` for a basis `V` with orthonormal columns.
    pub fn from_basis(v: &Matrix) -> Result<Self> {
        if !is_orthonormal(&v.0.tr_mul(&v.0)) {
            return Err(invalid("basis columns are not orthonormal"));
        }
        let p = SymMatrix::symmetrize(&v.0 * v.0.transpose());
        Ok(Projection { rank: v.cols(), p })
    }

    /// Validates idempotence, `{0,1}` spectrum and trace.
    pub fn from_matrix(p: SymMatrix) -> Result<Self> {
        let d = p.dim();
        let sq = &p.0 * &p.0;
        if (&sq - &p.0).amax() > PROJECTION_TOL {
            return Err(invalid("P² ≠ P"));
        }
        let vals = p.eigenvalues();
        if vals.iter().any(|&x| x.abs() > PROJECTION_TOL && (x - 1.0).abs() > PROJECTION_TOL) {
            return Err(invalid("eigenvalues of P are not in {0, 1}"));
        }
        let trace = p.trace();
        let rank = trace.round();
        if (trace - rank).abs() > PROJECTION_TOL || rank < 0.0 || rank > d as f64 {
            return Err(invalid(format!("trace {trace} is not an integer rank")));
        }
        Ok(Projection { rank: rank as usize, p })
    }

    /// Projection onto the listed coordinate axes.
    pub fn coordinates(d: usize, coords: &[usize]) -> Result<Self> {
        let mut diag = vec![0.0; d];
        for &c in coords {
            if c >= d {
                return Err(invalid(format!("coordinate {c} out of range for dimension {d}")));
            }
            diag[c] = 1.0;
        }
        Projection::from_matrix(SymMatrix::diag(&diag))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.p
    }

    /// `I − P`.
    pub fn complement(&self) -> SymMatrix {
        SymMatrix::identity(self.dim()).sub(&self.p)
    }

    /// `tr((I − P) G (I − P))` for a Gram matrix `G = AᵀA`, which equals
    /// `‖A(I − P)‖²_F`.
    pub fn residual_sq_from_gram(&self, g: &SymMatrix) -> f64 {
        let c = self.complement();
        (&c.0 * &g.0 * &c.0).trace()
    }
}
