//! Queries answered from a histogram's summary.
//!
//! Everything here is post-processing of checkpoint 1, so it costs no
//! additional privacy budget.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::histogram::{Histogram, Mode, Params, Summary};
use crate::linalg::{pinv, top_k_right_subspace, Matrix, Projection, SymMatrix};

/// `C = ÃᵀÃ − σ²I` (σ = 0 outside jl mode), optionally with negative
/// eigenvalues zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAnswer {
    pub c: SymMatrix,
    pub sigma_shift: f64,
    pub clipped: bool,
}

pub fn spectral_approx(h: &Histogram, clip: bool) -> Result<SpectralAnswer> {
    let shift = h.sigma() * h.sigma();
    let c = h.summary_covariance()?.shift(-shift);
    let c = if clip { c.clip_psd() } else { c };
    Ok(SpectralAnswer {
        c,
        sigma_shift: shift,
        clipped: clip,
    })
}

/// A matrix `Ã` with `ÃᵀÃ` equal to the summary covariance: the sketch
/// itself in jl mode, a PSD square root otherwise.
pub fn summary_factor(h: &Histogram) -> Result<Matrix> {
    Ok(match h.current_summary()? {
        Summary::Sketch(s) => s,
        Summary::Cov(c) => c.psd_factor(),
    })
}

/// Sketch rank used for rank-`k` PCA: `⌈(k + ln(1/β))/η⌉`.
pub fn pca_rank(k: usize, eta: f64, beta: f64) -> usize {
    ((k as f64 + (1.0 / beta).ln()) / eta).ceil() as usize
}

fn check_rank(h: &Histogram, k: usize) -> Result<()> {
    let p: &Params = h.params();
    if k == 0 || k > p.d {
        return Err(invalid(format!("rank {k} must be in 1..={}", p.d)));
    }
    let want = pca_rank(k, p.eta, p.beta);
    if p.mode == Mode::Jl && p.r != want {
        log::warn!("histogram built with r = {} but rank-{k} PCA expects r = {want}", p.r);
    }
    Ok(())
}

/// Rank-`k` projection minimizing `‖Ã(I − P)‖_F`.
pub fn pca(h: &Histogram, k: usize) -> Result<Projection> {
    check_rank(h, k)?;
    let a = summary_factor(h)?;
    Projection::from_basis(&top_k_right_subspace(&a, k)?)
}

/// A non-private solver for `min_{P ∈ Π} ‖Ã(I − P)‖_F` over some class `Π`
/// of rank-`k` projections.
pub trait ProjectionSolver {
    fn name(&self) -> &str;

    /// Declared approximation factor `γ ≥ 1`; infinite when the solver is a
    /// heuristic without a guarantee.
    fn gamma(&self) -> f64;

    fn solve(&self, a: &Matrix, k: usize) -> Result<SymMatrix>;
}

/// Unconstrained rank-`k` projection (γ = 1).
#[derive(Debug, Clone, Copy, Default)]
pub struct SvdSolver;

impl ProjectionSolver for SvdSolver {
    fn name(&self) -> &str {
        "svd"
    }

    fn gamma(&self) -> f64 {
        1.0
    }

    fn solve(&self, a: &Matrix, k: usize) -> Result<SymMatrix> {
        Ok(Projection::from_basis(&top_k_right_subspace(a, k)?)?.matrix().clone())
    }
}

/// Projection onto the `k` coordinates with largest `(ÃᵀÃ)_ii`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SparseSolver;

impl ProjectionSolver for SparseSolver {
    fn name(&self) -> &str {
        "sparse"
    }

    fn gamma(&self) -> f64 {
        f64::INFINITY
    }

    fn solve(&self, a: &Matrix, k: usize) -> Result<SymMatrix> {
        let g = a.gram();
        let d = g.dim();
        if k == 0 || k > d {
            return Err(invalid(format!("rank {k} must be in 1..={d}")));
        }
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&x, &y| g.get(y, y).total_cmp(&g.get(x, x)).then(x.cmp(&y)));
        Ok(Projection::coordinates(d, &idx[..k])?.matrix().clone())
    }
}

/// Rank-one projection onto a non-negative direction found by power
/// iteration on `ÃᵀÃ` with negative coordinates clamped to zero.
#[derive(Debug, Clone, Copy)]
pub struct NonNegativeSolver {
    pub iterations: usize,
}

impl Default for NonNegativeSolver {
    fn default() -> Self {
        NonNegativeSolver { iterations: 200 }
    }
}

impl ProjectionSolver for NonNegativeSolver {
    fn name(&self) -> &str {
        "nonneg"
    }

    fn gamma(&self) -> f64 {
        f64::INFINITY
    }

    fn solve(&self, a: &Matrix, k: usize) -> Result<SymMatrix> {
        if k != 1 {
            return Err(invalid("the non-negative solver supports k = 1 only"));
        }
        let g = a.gram();
        let d = g.dim();
        let gm = g.as_dmatrix();
        let mut x = nalgebra::DVector::from_element(d, 1.0 / (d as f64).sqrt());
        for _ in 0..self.iterations {
            let next = (gm * &x).map(|v| v.max(0.0));
            let n = next.norm();
            if n == 0.0 {
                break;
            }
            x = next / n;
        }
        if (gm * &x).map(|v| v.max(0.0)).norm() == 0.0 {
            // No direction with positive mass: fall back to the heaviest axis.
            let best = (0..d)
                .max_by(|&i, &j| g.get(i, i).total_cmp(&g.get(j, j)).then(j.cmp(&i)))
                .unwrap_or(0);
            x = nalgebra::DVector::zeros(d);
            x[best] = 1.0;
        }
        Ok(SymMatrix::outer(x.as_slice()))
    }
}

/// Runs `solver` on the summary and validates its answer as a rank-`k`
/// projection.
pub fn constrained_pca(h: &Histogram, k: usize, solver: &dyn ProjectionSolver) -> Result<Projection> {
    check_rank(h, k)?;
    let a = summary_factor(h)?;
    let raw = solver.solve(&a, k)?;
    if raw.dim() != h.params().d {
        return Err(Error::Contract(format!(
            "{} returned a {}x{} matrix",
            solver.name(),
            raw.dim(),
            raw.dim()
        )));
    }
    let p = Projection::from_matrix(raw).map_err(|e| Error::Contract(format!("{}: {e}", solver.name())))?;
    if p.rank() != k {
        return Err(Error::Contract(format!(
            "{} returned rank {} instead of {k}",
            solver.name(),
            p.rank()
        )));
    }
    Ok(p)
}

pub fn solver_by_name(name: &str) -> Result<Box<dyn ProjectionSolver>> {
    match name {
        "svd" => Ok(Box::new(SvdSolver)),
        "sparse" => Ok(Box::new(SparseSolver)),
        "nonneg" => Ok(Box::new(NonNegativeSolver::default())),
        other => Err(invalid(format!("unknown solver {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionAnswer {
    pub x: Matrix,
    pub objective: f64,
}

/// `tr(XᵀS_AA X − 2XᵀS_AB + S_BB)` for the `(d+p)`-dimensional summary `s`.
pub fn regression_objective(s: &SymMatrix, x: &Matrix) -> f64 {
    let d = x.rows();
    let p = x.cols();
    let saa = s.block(0, d, 0, d);
    let sab = s.block(0, d, d, p);
    let sbb = s.block(d, p, d, p);
    let xm = x.as_dmatrix();
    (xm.transpose() * saa.as_dmatrix() * xm).trace() - 2.0 * (xm.transpose() * sab.as_dmatrix()).trace()
        + sbb.as_dmatrix().trace()
}

/// Regression of the last `p` columns on the first `d` from the joint
/// summary: `X = S_AA^† S_AB`.
pub fn regress(h: &Histogram, p: usize) -> Result<RegressionAnswer> {
    if h.mode() == Mode::Jl {
        return Err(invalid("regression needs a wishart or exact summary"));
    }
    let width = h.params().d;
    if p == 0 || p >= width {
        return Err(invalid(format!("response width {p} must be in 1..{width}")));
    }
    let s = h.summary_covariance()?;
    let d = width - p;
    let saa = SymMatrix::symmetrize(s.block(0, d, 0, d).into_dmatrix());
    let sab = s.block(0, d, d, p);
    let x = Matrix::from_dmatrix(pinv(&saa).as_dmatrix() * sab.as_dmatrix())?;
    let objective = regression_objective(&s, &x);
    Ok(RegressionAnswer { x, objective })
}

const UNIT_TOL: f64 = 1e-8;

/// `xᵀCx` for a unit vector `x`.
pub fn directional_variance(c: &SymMatrix, x: &[f64]) -> Result<f64> {
    if x.len() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            got: x.len(),
        });
    }
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(invalid(format!("query vector has norm {n}, expected 1")));
    }
    Ok(c.quad_form(x))
}

/// `√(e_Sᵀ C e_S)` with the radicand clamped at 0.
pub fn cut_query(c: &SymMatrix, set: &[usize]) -> Result<f64> {
    if set.is_empty() {
        return Err(invalid("cut set must be nonempty"));
    }
    let d = c.dim();
    let mut e = vec![0.0; d];
    for &i in set {
        if i >= d {
            return Err(invalid(format!("index {i} out of range for dimension {d}")));
        }
        e[i] = 1.0;
    }
    Ok(c.quad_form(&e).max(0.0).sqrt())
}

/// Sketch rank used for `q` directional queries: `⌈log₂ q⌉ + 1`.
pub fn bounded_query_rank(q: usize) -> usize {
    (q.max(1) as f64).log2().ceil() as usize + 1
}

/// A jl-mode histogram sized for at most `q` directional-variance queries.
#[derive(Debug, Clone)]
pub struct BoundedQueryVariance {
    hist: Histogram,
    limit: usize,
    used: usize,
}

impl BoundedQueryVariance {
    /// `params.mode` and `params.r` are overridden.
    pub fn new(params: Params, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(invalid("query bound must be ≥ 1"));
        }
        let params = Params {
            mode: Mode::Jl,
            r: bounded_query_rank(q),
            ..params
        };
        Ok(BoundedQueryVariance {
            hist: Histogram::new(params)?,
            limit: q,
            used: 0,
        })
    }

    pub fn histogram(&self) -> &Histogram {
        &self.hist
    }

    pub fn ingest(&mut self, row: &[f64]) -> Result<()> {
        self.hist.ingest(row)
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.used
    }

    /// `xᵀ ÃᵀÃ x`; refuses once `q` queries have been answered.
    pub fn query(&mut self, x: &[f64]) -> Result<f64> {
        if self.used >= self.limit {
            return Err(Error::BudgetExhausted { limit: self.limit });
        }
        let c = self.hist.summary_covariance()?;
        let v = directional_variance(&c, x)?;
        self.used += 1;
        Ok(v)
    }
}

/// A query answer as emitted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Scalar(f64),
    Matrix { rows: usize, cols: usize, data: Vec<f64> },
}

impl Answer {
    pub fn matrix(m: &Matrix) -> Self {
        Answer::Matrix {
            rows: m.rows(),
            cols: m.cols(),
            data: m.to_row_major(),
        }
    }

    pub fn sym(s: &SymMatrix) -> Self {
        Answer::Matrix {
            rows: s.dim(),
            cols: s.dim(),
            data: s.to_row_major(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
    pub params: serde_json::Value,
    pub answer: Answer,
    pub mode: String,
    #[serde(with = "crate::snapshot::extended_float")]
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::PrivacyBudget;

    fn exact(d: usize, window: u64) -> Histogram {
        let b = PrivacyBudget::new(1.0, 1e-4).unwrap();
        Histogram::new(Params::new(Mode::Exact, window, 0.25, 4, d, b, 0)).unwrap()
    }

    #[test]
    fn pca_picks_dominant_axis() {
        let mut h = exact(3, 16);
        for _ in 0..5 {
            h.ingest(&[1.0, 0.0, 0.0]).unwrap();
        }
        h.ingest(&[0.0, 1.0, 0.0]).unwrap();
        let p = pca(&h, 1).unwrap();
        assert!((p.matrix().get(0, 0) - 1.0).abs() < 1e-10);
        let full = pca(&h, 3).unwrap();
        assert!((full.matrix().as_dmatrix() - nalgebra::DMatrix::identity(3, 3)).amax() < 1e-10);
        assert!(pca(&h, 4).is_err());
    }

    #[test]
    fn zero_stream_spectral_is_shifted() {
        let b = PrivacyBudget::new(1.0, 1e-4).unwrap();
        let mut h = Histogram::new(Params::new(Mode::Jl, 4, 0.25, 1, 2, b, 0)).unwrap();
        h.ingest(&[0.0, 0.0]).unwrap();
        let raw = spectral_approx(&h, false).unwrap();
        let s2 = h.sigma() * h.sigma();
        let expect = h.phi().unwrap().gram().scale(s2).shift(-s2);
        assert!(raw.c.sub(&expect).frobenius() < 1e-9 * s2);
        let clipped = spectral_approx(&h, true).unwrap();
        assert!(clipped.c.min_eigenvalue() >= -1e-10 * clipped.c.spectral_norm().max(1.0));
    }

    #[test]
    fn regression_consistent_system() {
        let mut h = exact(3, 8);
        h.ingest(&[0.5, 0.0, 0.5]).unwrap();
        h.ingest(&[0.0, 0.4, 0.8]).unwrap();
        let ans = regress(&h, 1).unwrap();
        assert!((ans.x.get(0, 0) - 1.0).abs() < 1e-10);
        assert!((ans.x.get(1, 0) - 2.0).abs() < 1e-10);
        assert!(ans.objective.abs() < 1e-12);
        assert!(regress(&h, 0).is_err());
    }

    #[test]
    fn variance_and_cut() {
        let c = SymMatrix::from_row_major(2, &[2.0, 0.5, 0.5, 3.0]).unwrap();
        assert_eq!(directional_variance(&c, &[0.0, 1.0]).unwrap(), 3.0);
        assert!(directional_variance(&c, &[1.0, 1.0]).is_err());
        assert!((cut_query(&c, &[0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(cut_query(&c, &[2]).is_err());
        assert!(cut_query(&c, &[]).is_err());
        assert_eq!(cut_query(&SymMatrix::diag(&[-1.0, 0.0]), &[0]).unwrap(), 0.0);
    }

    #[test]
    fn builtin_solvers_meet_their_contracts() {
        let mut h = exact(4, 16);
        for row in [[0.5, -0.5, 0.1, 0.0], [0.2, 0.7, -0.1, 0.3], [-0.6, 0.1, 0.2, 0.1]] {
            h.ingest(&row).unwrap();
        }
        let sp = constrained_pca(&h, 2, &SparseSolver).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| sp.matrix().get(i, i)).collect();
        assert_eq!(diag.iter().filter(|&&v| v > 0.5).count(), 2);
        let nn = constrained_pca(&h, 1, &NonNegativeSolver::default()).unwrap();
        let e = crate::linalg::sym_eigen(nn.matrix()).unwrap();
        assert!(e.vectors.column(0).iter().all(|&v| v >= -1e-12));
        let svd = constrained_pca(&h, 2, &SvdSolver).unwrap();
        assert_eq!(svd, pca(&h, 2).unwrap());
    }

    struct Broken;

    impl ProjectionSolver for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn gamma(&self) -> f64 {
            1.0
        }
        fn solve(&self, a: &Matrix, _k: usize) -> Result<SymMatrix> {
            Ok(SymMatrix::identity(a.cols()).scale(0.5))
        }
    }

    #[test]
    fn broken_solver_is_a_contract_error() {
        let mut h = exact(2, 4);
        h.ingest(&[0.6, 0.8]).unwrap();
        assert!(matches!(constrained_pca(&h, 1, &Broken), Err(Error::Contract(_))));
    }

    #[test]
    fn bounded_queries_refuse_after_limit() {
        assert_eq!(bounded_query_rank(1), 1);
        assert_eq!(bounded_query_rank(8), 4);
        let b = PrivacyBudget::new(1.0, 1e-4).unwrap();
        let mut bq = BoundedQueryVariance::new(Params::new(Mode::Exact, 4, 0.25, 9, 2, b, 1), 2).unwrap();
        assert_eq!(bq.histogram().params().r, 2);
        bq.ingest(&[1.0, 0.0]).unwrap();
        bq.query(&[1.0, 0.0]).unwrap();
        bq.query(&[0.0, 1.0]).unwrap();
        assert!(matches!(bq.query(&[1.0, 0.0]), Err(Error::BudgetExhausted { limit: 2 })));
    }
}
