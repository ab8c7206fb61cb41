//! Private spectral histogram over a sliding window.
//!
//! The histogram keeps an ordered list of checkpoints `t₁ < t₂ < … < t_ℓ`.
//! Checkpoint `i` summarizes every row from `t_i` to the present, so the
//! window `[T−W+1, T]` is bracketed by the two oldest checkpoints, and
//! compaction keeps only checkpoints whose covariances differ by a constant
//! factor every two steps. That bounds `ℓ` by `O((r/η) log W)`.
//!
//! Three payload flavours share this skeleton:
//!
//! * [`Mode::Jl`]: each checkpoint stores a Gaussian sketch
//!   `σΦ + Σ_s g_s a_s` of the regularized matrix `[σI; A_{[t_i,T]}]`.
//! * [`Mode::Wishart`]: each checkpoint stores `Σ_s a_sᵀa_s + Wis(τ, I)`.
//! * [`Mode::Exact`]: each checkpoint stores the exact covariance; no noise.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{loewner_tol, psd_dominates, Matrix, SymMatrix};
use crate::mechanisms::{
    check_row, compute_sigma, draw_shared_phi, wishart_dof, wishart_sample, NormPolicy,
    PrivacyBudget, SketchConfig,
};
use crate::par::Exec;
use crate::rng::{Rng, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Jl,
    Wishart,
    Exact,
}

impl Mode {
    /// Whether the covariance chain is descending in the Loewner order by
    /// construction, so that dominance scans may stop at the first failure.
    pub fn is_monotone(self) -> bool {
        !matches!(self, Mode::Jl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Jl => "jl",
            Mode::Wishart => "wishart",
            Mode::Exact => "exact",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jl" => Ok(Mode::Jl),
            "wishart" => Ok(Mode::Wishart),
            "exact" => Ok(Mode::Exact),
            other => Err(invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// Construction parameters. Validated by [`Histogram::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mode: Mode,
    pub window: u64,
    pub eta: f64,
    pub r: usize,
    pub d: usize,
    pub beta: f64,
    pub budget: PrivacyBudget,
    pub seed: u64,
    pub norm_policy: NormPolicy,
    /// Keep exact per-checkpoint covariances alongside the private payloads.
    pub track_exact: bool,
}

pub const DEFAULT_BETA: f64 = 0.1;

impl Params {
    pub fn new(mode: Mode, window: u64, eta: f64, r: usize, d: usize, budget: PrivacyBudget, seed: u64) -> Self {
        Params {
            mode,
            window,
            eta,
            r,
            d,
            beta: DEFAULT_BETA,
            budget,
            seed,
            norm_policy: NormPolicy::Reject,
            track_exact: false,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_norm_policy(mut self, policy: NormPolicy) -> Self {
        self.norm_policy = policy;
        self
    }

    pub fn with_exact_shadow(mut self, on: bool) -> Self {
        self.track_exact = on;
        self
    }

    pub fn validate(&self) -> Result<SketchConfig> {
        if self.window == 0 {
            return Err(invalid("window must be ≥ 1"));
        }
        if self.d == 0 {
            return Err(invalid("dimension must be ≥ 1"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid(format!("beta must be in (0, 1), got {}", self.beta)));
        }
        SketchConfig::new(self.r, self.eta)
    }
}

/// `⌈(4r/η)·ln W⌉ + 2`, the checkpoint-count bound.
pub fn checkpoint_bound(r: usize, eta: f64, window: u64) -> usize {
    (4.0 * r as f64 / eta * (window as f64).ln()).ceil().max(0.0) as usize + 2
}

/// A checkpoint payload handed out to callers.
#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    Sketch(Matrix),
    Cov(SymMatrix),
}

impl Summary {
    /// `ÃᵀÃ` for sketches, the matrix itself otherwise.
    pub fn covariance(&self) -> SymMatrix {
        match self {
            Summary::Sketch(s) => s.gram(),
            Summary::Cov(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    t: u64,
    /// Sketch (JL mode only).
    sketch: Option<Matrix>,
    /// `sketchᵀsketch` in JL mode, the payload otherwise.
    cov: SymMatrix,
    exact: Option<SymMatrix>,
}

impl Checkpoint {
    pub(crate) fn new_cov(t: u64, cov: SymMatrix, exact: Option<SymMatrix>) -> Self {
        Checkpoint {
            t,
            sketch: None,
            cov,
            exact,
        }
    }

    pub(crate) fn new_sketch(t: u64, sketch: Matrix, exact: Option<SymMatrix>) -> Self {
        let cov = sketch.gram();
        Checkpoint {
            t,
            sketch: Some(sketch),
            cov,
            exact,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn sketch(&self) -> Option<&Matrix> {
        self.sketch.as_ref()
    }

    pub fn exact(&self) -> Option<&SymMatrix> {
        self.exact.as_ref()
    }

    pub fn summary(&self) -> Summary {
        match &self.sketch {
            Some(s) => Summary::Sketch(s.clone()),
            None => Summary::Cov(self.cov.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Histogram {
    params: Params,
    sketch_cfg: SketchConfig,
    sigma: f64,
    tau: u64,
    phi: Option<Matrix>,
    checkpoints: Vec<Checkpoint>,
    now: u64,
    row_rng: Rng,
    wishart_rng: Rng,
    exec: Exec,
}

/// Random-stream labels; part of the reproducibility contract.
pub const PHI_LABEL: &str = "phi";
pub const ROW_LABEL: &str = "row";
pub const WISHART_LABEL: &str = "wishart";

/// `(1 − η/2)`, the compaction threshold factor.
fn shrink(eta: f64) -> f64 {
    1.0 - eta / 2.0
}

impl Histogram {
    pub fn new(params: Params) -> Result<Self> {
        let sketch_cfg = params.validate()?;
        let (sigma, tau, phi) = match params.mode {
            Mode::Jl => {
                let sigma = compute_sigma(params.r, &params.budget);
                let mut rng = Rng::labeled(params.seed, PHI_LABEL);
                (sigma, 0, Some(draw_shared_phi(&sketch_cfg, params.d, &mut rng)))
            }
            Mode::Wishart => (0.0, wishart_dof(params.d, &params.budget), None),
            Mode::Exact => (0.0, 0, None),
        };
        Ok(Histogram {
            params,
            sketch_cfg,
            sigma,
            tau,
            phi,
            checkpoints: Vec::new(),
            now: 0,
            row_rng: Rng::labeled(params.seed, ROW_LABEL),
            wishart_rng: Rng::labeled(params.seed, WISHART_LABEL),
            exec: Exec::default(),
        })
    }

    /// Reassembles a histogram from stored parts, validating shapes and
    /// ordering but not the compaction invariants.
    pub(crate) fn from_parts(
        params: Params,
        sigma: f64,
        tau: u64,
        phi: Option<Matrix>,
        checkpoints: Vec<Checkpoint>,
        now: u64,
        rngs: [RngState; 2],
    ) -> Result<Self> {
        let sketch_cfg = params.validate()?;
        let d = params.d;
        let m = sketch_cfg.rows();
        if (params.mode == Mode::Jl) != phi.is_some() {
            return Err(invalid("Φ must be present exactly in jl mode"));
        }
        if let Some(p) = &phi {
            if p.rows() != m || p.cols() != d {
                return Err(invalid("Φ has the wrong shape"));
            }
        }
        for (k, c) in checkpoints.iter().enumerate() {
            if c.t == 0 || c.t > now || (k > 0 && checkpoints[k - 1].t >= c.t) {
                return Err(invalid("checkpoint timestamps must be increasing in 1..=now"));
            }
            if c.cov.dim() != d {
                return Err(invalid("checkpoint payload has the wrong dimension"));
            }
            match (&c.sketch, params.mode) {
                (Some(s), Mode::Jl) if s.rows() == m && s.cols() == d => {}
                (None, Mode::Wishart | Mode::Exact) => {}
                _ => return Err(invalid("checkpoint payload does not match mode")),
            }
        }
        Ok(Histogram {
            params,
            sketch_cfg,
            sigma,
            tau,
            phi,
            checkpoints,
            now,
            row_rng: Rng::from_state(rngs[0]),
            wishart_rng: Rng::from_state(rngs[1]),
            exec: Exec::default(),
        })
    }

    /// Builds a covariance-mode histogram with the given chain, for driving
    /// [`compact`](Self::compact) and [`enforce_psd_order`](Self::enforce_psd_order)
    /// directly.
    pub fn with_covariances(params: Params, now: u64, chain: Vec<(u64, SymMatrix)>) -> Result<Self> {
        if params.mode == Mode::Jl {
            return Err(invalid("explicit chains are only supported in covariance modes"));
        }
        let base = Histogram::new(params)?;
        let cps = chain
            .into_iter()
            .map(|(t, c)| Checkpoint::new_cov(t, c, None))
            .collect();
        let rngs = [base.row_rng.state(), base.wishart_rng.state()];
        Histogram::from_parts(params, base.sigma, base.tau, None, cps, now, rngs)
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn mode(&self) -> Mode {
        self.params.mode
    }

    pub fn sketch_config(&self) -> &SketchConfig {
        &self.sketch_cfg
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn phi(&self) -> Option<&Matrix> {
        self.phi.as_ref()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn checkpoint_count(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.checkpoints.iter().map(|c| c.t).collect()
    }

    pub fn rng_states(&self) -> [RngState; 2] {
        [self.row_rng.state(), self.wishart_rng.state()]
    }

    /// Resident payload size under the `ℓ·m·d·8` byte model (`m = d` in
    /// covariance modes).
    pub fn bytes_resident(&self) -> usize {
        let rows = match self.params.mode {
            Mode::Jl => self.sketch_cfg.rows(),
            _ => self.params.d,
        };
        self.checkpoints.len() * rows * self.params.d * 8
    }

    /// Copy of checkpoint 1's payload.
    pub fn current_summary(&self) -> Result<Summary> {
        self.checkpoints.first().map(Checkpoint::summary).ok_or(Error::Empty)
    }

    /// `cov(1)`: `ÃᵀÃ` in jl mode, `K̃(1)` otherwise.
    pub fn summary_covariance(&self) -> Result<SymMatrix> {
        self.checkpoints.first().map(|c| c.cov.clone()).ok_or(Error::Empty)
    }

    /// Exact covariance of the rows covered by checkpoint 1, when tracked.
    pub fn shadow_covariance(&self) -> Option<SymMatrix> {
        self.checkpoints.first().and_then(|c| c.exact.clone())
    }

    /// Drops checkpoint 1 while checkpoint 2 already covers the window
    /// starting at `t − W + 1`.
    pub fn expire(&mut self, t: u64) {
        let start = window_start(t, self.params.window);
        let drop = self
            .checkpoints
            .iter()
            .skip(1)
            .take_while(|c| c.t <= start)
            .count();
        if drop > 0 {
            self.checkpoints.drain(..drop);
        }
    }

    pub fn ingest(&mut self, row: &[f64]) -> Result<()> {
        let a: Cow<[f64]> = check_row(row, self.params.d, self.params.norm_policy)?;
        let a = a.as_ref();
        self.now += 1;
        let t = self.now;
        self.expire(t);

        let outer = SymMatrix::outer(a);
        let track = self.params.track_exact;
        let exec = self.exec;
        match self.params.mode {
            Mode::Jl => {
                let g = self
                    .row_rng
                    .gaussian_vec(self.sketch_cfg.rows(), self.sketch_cfg.entry_std());
                let ga = Matrix::outer(&g, a);
                exec.for_each_mut(&mut self.checkpoints, |c| {
                    let s = c.sketch.as_mut().expect("jl checkpoint carries a sketch");
                    *s.as_dmatrix_mut() += ga.as_dmatrix();
                    c.cov = s.gram();
                    if let Some(e) = c.exact.as_mut() {
                        e.add_assign(&outer);
                    }
                });
                let phi = self.phi.as_ref().expect("jl histogram has Φ");
                let mut fresh = phi.scale(self.sigma);
                *fresh.as_dmatrix_mut() += ga.as_dmatrix();
                self.checkpoints
                    .push(Checkpoint::new_sketch(t, fresh, track.then(|| outer.clone())));
            }
            Mode::Wishart | Mode::Exact => {
                exec.for_each_mut(&mut self.checkpoints, |c| {
                    c.cov.add_assign(&outer);
                    if let Some(e) = c.exact.as_mut() {
                        e.add_assign(&outer);
                    }
                });
                let mut fresh = outer.clone();
                if self.params.mode == Mode::Wishart {
                    fresh.add_assign(&wishart_sample(self.params.d, self.tau, &mut self.wishart_rng));
                }
                self.checkpoints
                    .push(Checkpoint::new_cov(t, fresh, track.then(|| outer.clone())));
                if self.params.mode == Mode::Wishart {
                    self.enforce_psd_order()?;
                }
            }
        }
        // Matters only for W = 1, where the new checkpoint alone covers the window.
        self.expire(t);
        self.compact()?;
        Ok(())
    }

    /// Restores a descending chain after a noisy checkpoint was appended:
    /// finds the first `p` with `K̃(p) ⋡ K̃(ℓ)`, deletes `p..ℓ−1` and moves the
    /// new checkpoint to position `p`.
    pub fn enforce_psd_order(&mut self) -> Result<()> {
        let Some(last) = self.checkpoints.len().checked_sub(1) else {
            return Ok(());
        };
        let fresh = &self.checkpoints[last].cov;
        let mut first_bad = last;
        for p in 0..last {
            let kp = &self.checkpoints[p].cov;
            if !psd_dominates(fresh, kp, loewner_tol(kp))? {
                first_bad = p;
                break;
            }
        }
        if first_bad < last {
            self.checkpoints.drain(first_bad..last);
        }
        Ok(())
    }

    /// Whether `(1 − η/2)·cov(i) ⪯ cov(p)`.
    fn close(&self, i: usize, p: usize) -> Result<bool> {
        let lhs = self.checkpoints[i].cov.scale(shrink(self.params.eta));
        let rhs = &self.checkpoints[p].cov;
        psd_dominates(&lhs, rhs, loewner_tol(rhs))
    }

    /// Largest `p > i` close to `i`, if any.
    fn furthest_close(&self, i: usize) -> Result<Option<usize>> {
        let n = self.checkpoints.len();
        if self.params.mode.is_monotone() {
            // Descending chain: closeness fails from the first failure onward.
            let mut best = None;
            for p in i + 1..n {
                if !self.close(i, p)? {
                    break;
                }
                best = Some(p);
            }
            return Ok(best);
        }
        let candidates: Vec<usize> = (i + 1..n).collect();
        let hits = self.exec.map(&candidates, |&p| self.close(i, p));
        let mut best = None;
        for (p, hit) in candidates.into_iter().zip(hits) {
            if hit? {
                best = Some(p);
            }
        }
        Ok(best)
    }

    /// Deletes checkpoints strictly between `i` and the furthest checkpoint
    /// still close to `i`, for every `i`, repeating until nothing changes.
    /// Afterwards `(1 − η/2)·cov(i) ⋠ cov(i+2)` for all `i`.
    pub fn compact(&mut self) -> Result<()> {
        loop {
            let mut changed = false;
            let mut i = 0;
            while i + 2 < self.checkpoints.len() {
                if let Some(j) = self.furthest_close(i)? {
                    if j > i + 1 {
                        self.checkpoints.drain(i + 1..j);
                        changed = true;
                    }
                }
                i += 1;
            }
            if !changed {
                return Ok(());
            }
        }
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let cps = &self.checkpoints;
        for w in cps.windows(2) {
            if w[0].t >= w[1].t {
                return Err(format!("timestamps not increasing: {} then {}", w[0].t, w[1].t));
            }
        }
        if self.now >= self.params.window && cps.len() >= 2 {
            let start = window_start(self.now, self.params.window);
            if !(cps[0].t <= start && start < cps[1].t) {
                return Err(format!(
                    "window start {start} not bracketed by t1={} t2={}",
                    cps[0].t, cps[1].t
                ));
            }
        }
        let err = |e: Error| e.to_string();
        if self.params.mode.is_monotone() {
            for (i, w) in cps.windows(2).enumerate() {
                if !psd_dominates(&w[1].cov, &w[0].cov, loewner_tol(&w[0].cov)).map_err(err)? {
                    return Err(format!("covariance chain not descending at {i}"));
                }
            }
        }
        for i in 0..cps.len().saturating_sub(2) {
            if self.close(i, i + 2).map_err(err)? {
                return Err(format!("gap condition violated at {i}"));
            }
        }
        Ok(())
    }
}

/// `max(1, t − W + 1)`.
pub fn window_start(t: u64, window: u64) -> u64 {
    (t + 1).saturating_sub(window).max(1)
}
