//! Grid benchmark: streams synthetic rows through each configuration and
//! reports accuracy against the exact window every `every` steps.
//!
//! For a reference `M` (`AᵀA`, plus `σ²I` in jl mode) and the mode's
//! multiplicative bounds `lo·M ⪯ S ⪯ hi·M`:
//!
//! - `add_err` is the smallest additive slack making the bounds hold,
//!   `max(0, −λ_min(S − lo·M), λ_max(S − hi·M))`;
//! - `mult_err` is `‖S − M‖₂ / ‖M‖₂`;
//! - `sandwich_ok` is `add_err` within the mode's noise allowance: a
//!   numerical tolerance for exact and jl, `(√τ + √d)²` per noisy Wishart
//!   payload for wishart and tree.

use std::io::Write;
use std::time::Instant;

use dpmat::continual::{DyadicTree, TreeParams};
use dpmat::histogram::{Histogram, Mode, Params};
use dpmat::linalg::SymMatrix;
use dpmat::mechanisms::PrivacyBudget;
use dpmat::oracle::WindowBuffer;
use dpmat::rng::Rng;
use dpmat::synth::random_norm_row;

use crate::CliError;

pub const HEADER: &str = "mode,W,eta,T,ell,wall_ns_per_ingest,sandwich_ok,mult_err,add_err,bytes_resident";

#[derive(Debug, Clone)]
pub struct Grid {
    pub modes: Vec<String>,
    pub windows: Vec<u64>,
    pub etas: Vec<f64>,
    pub d: usize,
    pub rank: usize,
    pub steps: Option<u64>,
    pub every: Option<u64>,
    pub budget: PrivacyBudget,
    pub seed: u64,
}

#[allow(clippy::large_enum_variant)]
enum Engine {
    Hist(Histogram),
    Tree(DyadicTree),
}

impl Engine {
    fn ingest(&mut self, row: &[f64]) -> dpmat::Result<()> {
        match self {
            Engine::Hist(h) => h.ingest(row),
            Engine::Tree(t) => t.ingest(row).map(drop),
        }
    }

    fn summary(&self) -> dpmat::Result<SymMatrix> {
        match self {
            Engine::Hist(h) => h.summary_covariance(),
            Engine::Tree(t) => t.query(t.now()),
        }
    }

    fn ell(&self) -> usize {
        match self {
            Engine::Hist(h) => h.checkpoint_count(),
            Engine::Tree(t) => t.nodes().count(),
        }
    }

    fn bytes(&self) -> usize {
        match self {
            Engine::Hist(h) => h.bytes_resident(),
            Engine::Tree(t) => t.bytes_resident(),
        }
    }

    /// `(σ², lo, hi, allowance)` for the current state.
    fn bounds(&self, eta: f64, d: usize, scale: f64) -> (f64, f64, f64, f64) {
        let tol = 1e-8 * scale.max(1.0);
        let wishart = |tau: u64| ((tau as f64).sqrt() + (d as f64).sqrt()).powi(2);
        match self {
            Engine::Hist(h) => match h.mode() {
                Mode::Exact => (0.0, 1.0, 1.0 / (1.0 - eta), tol),
                Mode::Jl => {
                    let s2 = h.sigma() * h.sigma();
                    (s2, 1.0 - eta / 4.0, (1.0 + eta / 4.0) / (1.0 - eta), 1e-8 * (scale + s2).max(1.0))
                }
                Mode::Wishart => (0.0, 1.0, 1.0 / (1.0 - eta), wishart(h.tau()) + tol),
            },
            Engine::Tree(t) => {
                let noisy = if t.tau() == 0 { 0.0 } else { t.cover().len() as f64 * wishart(t.tau()) };
                (0.0, 1.0, 1.0, noisy + tol)
            }
        }
    }
}

fn build(mode: &str, window: u64, eta: f64, grid: &Grid) -> Result<Engine, CliError> {
    if mode == "tree" {
        let p = TreeParams::new(window, grid.d, grid.budget, grid.seed);
        return Ok(Engine::Tree(DyadicTree::new(p).map_err(CliError::usage)?));
    }
    let m: Mode = mode.parse().map_err(CliError::usage)?;
    let p = Params::new(m, window, eta, grid.rank, grid.d, grid.budget, grid.seed);
    Ok(Engine::Hist(Histogram::new(p).map_err(CliError::usage)?))
}

struct Errors {
    ok: bool,
    mult: f64,
    add: f64,
}

fn errors(engine: &Engine, s: &SymMatrix, a: &SymMatrix, eta: f64, d: usize) -> Errors {
    let a_norm = a.spectral_norm();
    let (s2, lo, hi, allowance) = engine.bounds(eta, d, a_norm);
    let m = a.shift(s2);
    let lower = -s.sub(&m.scale(lo)).min_eigenvalue();
    let upper = s.sub(&m.scale(hi)).eigenvalues()[0];
    let add = lower.max(upper).max(0.0);
    let mult = s.sub(&m).spectral_norm() / m.spectral_norm().max(f64::MIN_POSITIVE);
    Errors {
        ok: add <= allowance,
        mult,
        add,
    }
}

pub fn run(grid: &Grid, out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "{HEADER}").map_err(CliError::io)?;
    // Validate the whole grid before streaming anything.
    for mode in &grid.modes {
        for &w in &grid.windows {
            for &eta in &grid.etas {
                build(mode, w, eta, grid)?;
            }
        }
    }
    for mode in &grid.modes {
        for &window in &grid.windows {
            for &eta in &grid.etas {
                let mut engine = build(mode, window, eta, grid)?;
                let mut buf = WindowBuffer::new(window as usize, grid.d);
                let mut rng = Rng::labeled(grid.seed, "bench");
                let steps = grid.steps.unwrap_or(2 * window);
                let every = grid.every.unwrap_or((window / 4).max(1)).max(1);
                let mut chunk_ns = 0u128;
                let mut chunk_len = 0u64;
                for t in 1..=steps {
                    let row = random_norm_row(&mut rng, grid.d);
                    let start = Instant::now();
                    engine.ingest(&row).map_err(CliError::from_ingest)?;
                    chunk_ns += start.elapsed().as_nanos();
                    chunk_len += 1;
                    buf.push(&row).map_err(CliError::from_ingest)?;
                    if t % every != 0 && t != steps {
                        continue;
                    }
                    let s = engine.summary().map_err(CliError::Other)?;
                    let e = errors(&engine, &s, &buf.exact_covariance(), eta, grid.d);
                    writeln!(
                        out,
                        "{mode},{window},{eta},{t},{},{},{},{:.6e},{:.6e},{}",
                        engine.ell(),
                        chunk_ns / u128::from(chunk_len),
                        u8::from(e.ok),
                        e.mult,
                        e.add,
                        engine.bytes()
                    )
                    .map_err(CliError::io)?;
                    chunk_ns = 0;
                    chunk_len = 0;
                }
            }
        }
    }
    Ok(())
}
