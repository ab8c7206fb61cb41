//! Versioned persistence for histograms and dyadic trees.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! header   "SPHG" version:u16 mode:u8 W:u64 d:u32 r:u32 eta:f64 beta:f64
//!          epsilon:f64 delta:f64 sigma:f64 tau:u64 now:u64 ell:u32
//! extras   seed:u64 norm_policy:u8
//! jl       Φ as m·d f64, row-major
//! hist     ell × { t:u64, payload:f64* }       m×d (jl) or d×d, row-major
//! tree     ell × { start:u64, span:u64, payload:d×d f64 }
//!          L × open partial sum d×d f64
//! rng      count:u32, count × { seed:u64, stream:u64, word_pos:u128 }
//! ```
//!
//! Mode tags are 0 jl, 1 wishart, 2 exact, 3 tree. Trees store `r = 0`,
//! `eta = beta = sigma = 0` and `tau = 0` when noise is off. Exact shadows
//! and the execution strategy are not persisted.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::continual::{DyadicTree, Node, NodeId, TreeParams};
use crate::error::{Error, Result};
use crate::histogram::{Checkpoint, Histogram, Mode, Params};
use crate::linalg::{Matrix, SymMatrix};
use crate::mechanisms::{NormPolicy, PrivacyBudget};
use crate::rng::RngState;

pub const MAGIC: &[u8; 4] = b"SPHG";
pub const VERSION: u16 = 1;

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Snapshot {
    Histogram(Histogram),
    Tree(DyadicTree),
}

impl Snapshot {
    pub fn mode_name(&self) -> &'static str {
        match self {
            Snapshot::Histogram(h) => h.mode().name(),
            Snapshot::Tree(_) => "tree",
        }
    }
}

/// Field-for-field mirror of the binary format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDoc {
    pub version: u16,
    pub mode: String,
    pub window: u64,
    pub d: u32,
    pub r: u32,
    pub eta: f64,
    pub beta: f64,
    #[serde(with = "extended_float")]
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub tau: u64,
    pub now: u64,
    pub ell: u32,
    pub seed: u64,
    pub norm_policy: NormPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<CheckpointDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub open: Vec<Vec<f64>>,
    pub rng: Vec<RngState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub t: u64,
    pub payload: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub start: u64,
    pub span: u64,
    pub payload: Vec<f64>,
}

/// JSON has no infinity; `ε = +∞` is written as the string `"inf"`.
pub(crate) mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_infinite() && *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*x)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number, got {s:?}"))),
        }
    }
}

fn mode_tag(mode: &str) -> Result<u8> {
    match mode {
        "jl" => Ok(0),
        "wishart" => Ok(1),
        "exact" => Ok(2),
        "tree" => Ok(3),
        other => Err(Error::Corrupt(format!("unknown mode {other:?}"))),
    }
}

fn mode_name(tag: u8) -> Result<&'static str> {
    match tag {
        0 => Ok("jl"),
        1 => Ok("wishart"),
        2 => Ok("exact"),
        3 => Ok("tree"),
        other => Err(Error::Corrupt(format!("unknown mode tag {other}"))),
    }
}

fn policy_tag(p: NormPolicy) -> u8 {
    match p {
        NormPolicy::Reject => 0,
        NormPolicy::Clip => 1,
    }
}

fn policy_from_tag(tag: u8) -> Result<NormPolicy> {
    match tag {
        0 => Ok(NormPolicy::Reject),
        1 => Ok(NormPolicy::Clip),
        other => Err(Error::Corrupt(format!("unknown norm policy tag {other}"))),
    }
}

impl SnapshotDoc {
    pub fn from_histogram(h: &Histogram) -> Self {
        let p = h.params();
        SnapshotDoc {
            version: VERSION,
            mode: p.mode.name().to_string(),
            window: p.window,
            d: p.d as u32,
            r: p.r as u32,
            eta: p.eta,
            beta: p.beta,
            epsilon: p.budget.epsilon(),
            delta: p.budget.delta(),
            sigma: h.sigma(),
            tau: h.tau(),
            now: h.now(),
            ell: h.checkpoint_count() as u32,
            seed: p.seed,
            norm_policy: p.norm_policy,
            phi: h.phi().map(Matrix::to_row_major),
            checkpoints: h
                .checkpoints()
                .iter()
                .map(|c| CheckpointDoc {
                    t: c.t(),
                    payload: match c.sketch() {
                        Some(s) => s.to_row_major(),
                        None => c.cov().to_row_major(),
                    },
                })
                .collect(),
            nodes: Vec::new(),
            open: Vec::new(),
            rng: h.rng_states().to_vec(),
        }
    }

    pub fn from_tree(t: &DyadicTree) -> Self {
        let p = t.params();
        SnapshotDoc {
            version: VERSION,
            mode: "tree".to_string(),
            window: p.window,
            d: p.d as u32,
            r: 0,
            eta: 0.0,
            beta: 0.0,
            epsilon: p.budget.epsilon(),
            delta: p.budget.delta(),
            sigma: 0.0,
            tau: t.tau(),
            now: t.now(),
            ell: t.nodes().count() as u32,
            seed: p.seed,
            norm_policy: p.norm_policy,
            phi: None,
            checkpoints: Vec::new(),
            nodes: t
                .nodes()
                .map(|n| NodeDoc {
                    start: n.id().start(),
                    span: n.id().span(),
                    payload: n.payload().to_row_major(),
                })
                .collect(),
            open: t.open_sums().iter().map(SymMatrix::to_row_major).collect(),
            rng: t.rng_states(),
        }
    }

    pub fn from_snapshot(s: &Snapshot) -> Self {
        match s {
            Snapshot::Histogram(h) => SnapshotDoc::from_histogram(h),
            Snapshot::Tree(t) => SnapshotDoc::from_tree(t),
        }
    }

    fn budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::new(self.epsilon, self.delta).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn into_snapshot(self) -> Result<Snapshot> {
        if self.version != VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: VERSION,
            });
        }
        let corrupt = |e: Error| match e {
            Error::Corrupt(_) => e,
            other => Error::Corrupt(other.to_string()),
        };
        let d = self.d as usize;
        if self.ell as usize != self.checkpoints.len() + self.nodes.len() {
            return Err(Error::Corrupt("ell does not match the stored records".into()));
        }
        if self.mode == "tree" {
            let params = TreeParams {
                window: self.window,
                d,
                budget: self.budget()?,
                seed: self.seed,
                noise: self.tau > 0,
                norm_policy: self.norm_policy,
                track_exact: false,
            };
            let nodes = self
                .nodes
                .iter()
                .map(|n| {
                    if !n.span.is_power_of_two() || (n.start - 1) % n.span != 0 {
                        return Err(Error::Corrupt(format!("node [{}, +{}) is not dyadic", n.start, n.span)));
                    }
                    let id = NodeId {
                        level: n.span.trailing_zeros(),
                        index: (n.start - 1) / n.span,
                    };
                    Ok(Node::new(id, SymMatrix::from_row_major(d, &n.payload).map_err(corrupt)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let open = self
                .open
                .iter()
                .map(|o| SymMatrix::from_row_major(d, o).map_err(corrupt))
                .collect::<Result<Vec<_>>>()?;
            let tree = DyadicTree::from_parts(params, self.now, nodes, open, self.rng).map_err(corrupt)?;
            if tree.tau() != self.tau {
                return Err(Error::Corrupt("tau does not match the stored budget".into()));
            }
            return Ok(Snapshot::Tree(tree));
        }

        let mode: Mode = self.mode.parse().map_err(corrupt)?;
        let params = Params {
            mode,
            window: self.window,
            eta: self.eta,
            r: self.r as usize,
            d,
            beta: self.beta,
            budget: self.budget()?,
            seed: self.seed,
            norm_policy: self.norm_policy,
            track_exact: false,
        };
        let cfg = params.validate().map_err(corrupt)?;
        let phi = match self.phi {
            Some(v) => Some(Matrix::from_row_major(cfg.rows(), d, &v).map_err(corrupt)?),
            None => None,
        };
        let checkpoints = self
            .checkpoints
            .iter()
            .map(|c| {
                if mode == Mode::Jl {
                    let s = Matrix::from_row_major(cfg.rows(), d, &c.payload).map_err(corrupt)?;
                    Ok(Checkpoint::new_sketch(c.t, s, None))
                } else {
                    let s = SymMatrix::from_row_major(d, &c.payload).map_err(corrupt)?;
                    Ok(Checkpoint::new_cov(c.t, s, None))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let rngs: [RngState; 2] = self
            .rng
            .try_into()
            .map_err(|_| Error::Corrupt("histogram snapshots carry exactly two RNG states".into()))?;
        let h = Histogram::from_parts(params, self.sigma, self.tau, phi, checkpoints, self.now, rngs)
            .map_err(corrupt)?;
        Ok(Snapshot::Histogram(h))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.write_u16::<LE>(self.version).unwrap();
        w.write_u8(mode_tag(&self.mode)?).unwrap();
        w.write_u64::<LE>(self.window).unwrap();
        w.write_u32::<LE>(self.d).unwrap();
        w.write_u32::<LE>(self.r).unwrap();
        for x in [self.eta, self.beta, self.epsilon, self.delta, self.sigma] {
            w.write_f64::<LE>(x).unwrap();
        }
        w.write_u64::<LE>(self.tau).unwrap();
        w.write_u64::<LE>(self.now).unwrap();
        w.write_u32::<LE>(self.ell).unwrap();
        w.write_u64::<LE>(self.seed).unwrap();
        w.write_u8(policy_tag(self.norm_policy)).unwrap();
        let floats = |w: &mut Vec<u8>, xs: &[f64]| {
            for &x in xs {
                w.write_f64::<LE>(x).unwrap();
            }
        };
        if let Some(phi) = &self.phi {
            floats(&mut w, phi);
        }
        for c in &self.checkpoints {
            w.write_u64::<LE>(c.t).unwrap();
            floats(&mut w, &c.payload);
        }
        for n in &self.nodes {
            w.write_u64::<LE>(n.start).unwrap();
            w.write_u64::<LE>(n.span).unwrap();
            floats(&mut w, &n.payload);
        }
        for o in &self.open {
            floats(&mut w, o);
        }
        w.write_u32::<LE>(self.rng.len() as u32).unwrap();
        for s in &self.rng {
            w.write_u64::<LE>(s.seed).unwrap();
            w.write_u64::<LE>(s.stream).unwrap();
            w.write_u128::<LE>(s.word_pos).unwrap();
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let eof = |_| Error::Corrupt("truncated snapshot".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = r.read_u16::<LE>().map_err(eof)?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let mode = mode_name(r.read_u8().map_err(eof)?)?.to_string();
        let window = r.read_u64::<LE>().map_err(eof)?;
        let d = r.read_u32::<LE>().map_err(eof)?;
        let rank = r.read_u32::<LE>().map_err(eof)?;
        let mut f = [0.0; 5];
        for x in &mut f {
            *x = r.read_f64::<LE>().map_err(eof)?;
        }
        let [eta, beta, epsilon, delta, sigma] = f;
        let tau = r.read_u64::<LE>().map_err(eof)?;
        let now = r.read_u64::<LE>().map_err(eof)?;
        let ell = r.read_u32::<LE>().map_err(eof)?;
        let seed = r.read_u64::<LE>().map_err(eof)?;
        let norm_policy = policy_from_tag(r.read_u8().map_err(eof)?)?;

        let remaining = |r: &Cursor<&[u8]>| bytes.len() as u64 - r.position();
        let floats = |r: &mut Cursor<&[u8]>, n: usize| -> Result<Vec<f64>> {
            // Refuses counts larger than the remaining input before allocating.
            if (n as u64).saturating_mul(8) > remaining(r) {
                return Err(Error::Corrupt("truncated snapshot".into()));
            }
            (0..n).map(|_| r.read_f64::<LE>().map_err(eof)).collect()
        };
        let du = d as usize;
        let mut doc = SnapshotDoc {
            version,
            mode,
            window,
            d,
            r: rank,
            eta,
            beta,
            epsilon,
            delta,
            sigma,
            tau,
            now,
            ell,
            seed,
            norm_policy,
            phi: None,
            checkpoints: Vec::new(),
            nodes: Vec::new(),
            open: Vec::new(),
            rng: Vec::new(),
        };
        if doc.mode == "tree" {
            for _ in 0..ell {
                let start = r.read_u64::<LE>().map_err(eof)?;
                let span = r.read_u64::<LE>().map_err(eof)?;
                let payload = floats(&mut r, du * du)?;
                doc.nodes.push(NodeDoc { start, span, payload });
            }
            if window == 0 {
                return Err(Error::Corrupt("window must be ≥ 1".into()));
            }
            let levels = (63 - window.leading_zeros()) as usize + 1;
            for _ in 0..levels {
                doc.open.push(floats(&mut r, du * du)?);
            }
        } else {
            let rows = if doc.mode == "jl" {
                if !(eta > 0.0 && rank > 0) {
                    return Err(Error::Corrupt("jl snapshot needs r ≥ 1 and eta > 0".into()));
                }
                (4.0 * rank as f64 / eta).ceil() as usize
            } else {
                du
            };
            if doc.mode == "jl" {
                doc.phi = Some(floats(&mut r, rows * du)?);
            }
            for _ in 0..ell {
                let t = r.read_u64::<LE>().map_err(eof)?;
                let payload = floats(&mut r, rows * du)?;
                doc.checkpoints.push(CheckpointDoc { t, payload });
            }
        }
        let count = r.read_u32::<LE>().map_err(eof)?;
        if u64::from(count) * 32 > remaining(&r) {
            return Err(Error::Corrupt("truncated snapshot".into()));
        }
        for _ in 0..count {
            doc.rng.push(RngState {
                seed: r.read_u64::<LE>().map_err(eof)?,
                stream: r.read_u64::<LE>().map_err(eof)?,
                word_pos: r.read_u128::<LE>().map_err(eof)?,
            });
        }
        if remaining(&r) != 0 {
            return Err(Error::Corrupt("trailing bytes after snapshot".into()));
        }
        Ok(doc)
    }
}

pub fn to_bytes(s: &Snapshot) -> Vec<u8> {
    SnapshotDoc::from_snapshot(s)
        .to_bytes()
        .expect("modes produced by this crate have tags")
}

pub fn from_bytes(bytes: &[u8]) -> Result<Snapshot> {
    SnapshotDoc::from_bytes(bytes)?.into_snapshot()
}

pub fn to_json(s: &Snapshot) -> String {
    serde_json::to_string_pretty(&SnapshotDoc::from_snapshot(s)).expect("snapshot documents serialize")
}

pub fn from_json(text: &str) -> Result<Snapshot> {
    let doc: SnapshotDoc = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
    doc.into_snapshot()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_norm_row;
    use crate::rng::Rng;

    fn filled(mode: Mode, n: usize) -> Histogram {
        let b = PrivacyBudget::new(1.0, 1e-3).unwrap();
        let mut h = Histogram::new(Params::new(mode, 16, 0.25, 2, 3, b, 9)).unwrap();
        let mut rng = Rng::new(4, 0);
        for _ in 0..n {
            h.ingest(&random_norm_row(&mut rng, 3)).unwrap();
        }
        h
    }

    fn same(a: &Histogram, b: &Histogram) -> bool {
        a.checkpoints() == b.checkpoints() && a.now() == b.now() && a.rng_states() == b.rng_states()
    }

    #[test]
    fn round_trips_every_histogram_mode() {
        for mode in [Mode::Jl, Mode::Wishart, Mode::Exact] {
            for n in [0, 1, 40] {
                let h = filled(mode, n);
                let s = Snapshot::Histogram(h.clone());
                let Snapshot::Histogram(back) = from_bytes(&to_bytes(&s)).unwrap() else {
                    panic!("mode changed");
                };
                assert!(same(&h, &back));
                let Snapshot::Histogram(back) = from_json(&to_json(&s)).unwrap() else {
                    panic!("mode changed");
                };
                assert!(same(&h, &back));
            }
        }
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let bytes = to_bytes(&Snapshot::Histogram(filled(Mode::Jl, 5)));
        for cut in [0, 3, 10, 60, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(from_bytes(&bad), Err(Error::VersionMismatch { found: 2, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(Error::Corrupt(_))));
    }

    #[test]
    fn infinite_epsilon_survives_json() {
        let b = PrivacyBudget::new(f64::INFINITY, 0.5).unwrap();
        let h = Histogram::new(Params::new(Mode::Wishart, 4, 0.25, 1, 2, b, 1)).unwrap();
        let Snapshot::Histogram(back) = from_json(&to_json(&Snapshot::Histogram(h))).unwrap() else {
            panic!("mode changed");
        };
        assert!(back.params().budget.epsilon().is_infinite());
    }
}
