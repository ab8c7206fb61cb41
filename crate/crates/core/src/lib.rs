//! Differentially private summaries of a sliding window over a stream of
//! vectors.
//!
//! Rows `a_t ∈ R^d` with `‖a_t‖₂ ≤ 1` arrive one at a time. A
//! [`Histogram`](histogram::Histogram) keeps a handful of privatized
//! checkpoints from which the covariance `A_WᵀA_W` of the last `W` rows can be
//! approximated at any time, within a multiplicative `(1 ± O(η))` factor and an
//! additive noise term. [`analytics`] turns that summary into spectral,
//! PCA, constrained-PCA, regression, directional-variance and cut answers.
//! [`continual`] releases the windowed covariance at every step with a dyadic
//! tree, and [`oracle`] computes the exact non-private answers used as ground
//! truth.
//!
//! ```
//! use dpmat::histogram::{Histogram, Mode, Params};
//! use dpmat::mechanisms::PrivacyBudget;
//!
//! let budget = PrivacyBudget::new(1.0, 1e-4).unwrap();
//! let mut h = Histogram::new(Params::new(Mode::Exact, 64, 0.25, 2, 3, budget, 7)).unwrap();
//! h.ingest(&[0.6, 0.8, 0.0]).unwrap();
//! let c = dpmat::analytics::spectral_approx(&h, false).unwrap().c;
//! assert!((c.get(0, 1) - 0.48).abs() < 1e-12);
//! ```
//!
//! The `parallel` feature (default) runs the per-checkpoint loops on rayon;
//! [`par::Exec`] selects the strategy per histogram and results are identical
//! either way.

pub mod analytics;
pub mod continual;
pub mod error;
pub mod histogram;
pub mod linalg;
pub mod mechanisms;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod snapshot;
pub mod synth;

pub use error::{Error, Result};
