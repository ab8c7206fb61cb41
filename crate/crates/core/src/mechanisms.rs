//! Privacy noise: the regularized Gaussian sketch and the Wishart mechanism.
//!
//! All logarithms in noise formulas are natural.

use std::borrow::Cow;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::rng::Rng;

/// Largest accuracy parameter accepted by [`SketchConfig`].
pub const ETA_MAX: f64 = 0.375;

/// `(ε, δ)`. `ε = +∞` is accepted as the non-private limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta must be in (0, 1), got {delta}")));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `ln(4/δ)`.
    pub fn log_term(&self) -> f64 {
        (4.0 / self.delta).ln()
    }

    /// Even split across `parts` sequential releases.
    pub fn split(&self, parts: usize) -> PrivacyBudget {
        let n = parts.max(1) as f64;
        PrivacyBudget {
            epsilon: self.epsilon / n,
            delta: self.delta / n,
        }
    }
}

/// Gaussian sketch shape: `m = ⌈4r/η⌉` rows with entry variance `η/(4r)`,
/// so that `E[ΦᵀΦ] = I` up to the ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    r: usize,
    eta: f64,
}

impl SketchConfig {
    pub fn new(r: usize, eta: f64) -> Result<Self> {
        if r == 0 {
            return Err(invalid("rank parameter r must be ≥ 1"));
        }
        if !(eta > 0.0 && eta <= ETA_MAX) {
            return Err(invalid(format!("eta must be in (0, 3/8], got {eta}")));
        }
        Ok(SketchConfig { r, eta })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rows(&self) -> usize {
        (4.0 * self.r as f64 / self.eta).ceil() as usize
    }

    pub fn entry_variance(&self) -> f64 {
        self.eta / (4.0 * self.r as f64)
    }

    pub fn entry_std(&self) -> f64 {
        self.entry_variance().sqrt()
    }
}

/// `σ = (16√(r ln(4/δ)) + ln(4/δ)) / ε`.
pub fn compute_sigma(r: usize, budget: &PrivacyBudget) -> f64 {
    sigma_from_log_term(r, budget.epsilon(), budget.log_term())
}

/// [`compute_sigma`] with `ln(4/δ)` supplied directly.
pub fn sigma_from_log_term(r: usize, epsilon: f64, log_term: f64) -> f64 {
    (16.0 * (r as f64 * log_term).sqrt() + log_term) / epsilon
}

/// Threshold `(4√(r ln(4/δ)) + ln(4/δ)) / ε` above which the sketch
/// mechanism is private; [`compute_sigma`] always clears it.
pub fn jl_threshold(r: usize, budget: &PrivacyBudget) -> f64 {
    let l = budget.log_term();
    (4.0 * (r as f64 * l).sqrt() + l) / budget.epsilon()
}

/// `τ = ⌈d + 28 ln(4/δ)/ε²⌉`.
pub fn wishart_dof(d: usize, budget: &PrivacyBudget) -> u64 {
    let extra = 28.0 * budget.log_term() / (budget.epsilon() * budget.epsilon());
    (d as f64 + extra).ceil() as u64
}

pub fn draw_shared_phi(cfg: &SketchConfig, d: usize, rng: &mut Rng) -> Matrix {
    let m = cfg.rows();
    let std = cfg.entry_std();
    // Row-major draw order keeps the stream layout independent of storage.
    let entries = rng.gaussian_vec(m * d, std);
    Matrix::from_row_major(m, d, &entries).expect("finite Gaussian draws")
}

/// `g·a` with `g ∈ R^m` i.i.d. N(0, η/(4r)). The row must already be valid.
pub fn draw_row_sketch(a: &[f64], cfg: &SketchConfig, rng: &mut Rng) -> Matrix {
    let g = rng.gaussian_vec(cfg.rows(), cfg.entry_std());
    Matrix::outer(&g, a)
}

/// `GᵀG` with `G` a `τ×d` matrix of standard Gaussians.
pub fn wishart_sample(d: usize, tau: u64, rng: &mut Rng) -> SymMatrix {
    let tau = tau as usize;
    let g = rng.gaussian_vec(tau * d, 1.0);
    let g = DMatrix::from_row_slice(tau, d, &g);
    SymMatrix::symmetrize(g.tr_mul(&g))
}

/// What to do with a row whose Euclidean norm exceeds 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormPolicy {
    #[default]
    Reject,
    Clip,
}

/// Rows this far above unit norm are treated as rounding noise.
const NORM_SLACK: f64 = 1e-12;

/// Validates a stream row of dimension `d`, clipping to the unit ball when
/// the policy allows.
pub fn check_row<'a>(a: &'a [f64], d: usize, policy: NormPolicy) -> Result<Cow<'a, [f64]>> {
    if a.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.len(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(invalid("row has non-finite entries"));
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1.0 + NORM_SLACK {
        return Ok(Cow::Borrowed(a));
    }
    match policy {
        NormPolicy::Reject => Err(Error::NormViolation { norm }),
        NormPolicy::Clip => {
            log::warn!("clipping row of norm {norm} to the unit ball");
            Ok(Cow::Owned(a.iter().map(|x| x / norm).collect()))
        }
    }
}
