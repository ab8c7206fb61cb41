//! Continual release of the windowed covariance with the dyadic-tree
//! mechanism.
//!
//! Node `(j, i)` covers times `[i·2^j + 1, (i+1)·2^j]`. It is privatized once,
//! when its last row arrives, and never re-released. The answer at time `T`
//! sums the nodes of a dyadic cover of `[max(1, T−W+1), T]`, so each answer
//! uses `O(log W)` noisy nodes and each row is privatized in at most one node
//! per level.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::histogram::window_start;
use crate::linalg::SymMatrix;
use crate::mechanisms::{check_row, wishart_dof, wishart_sample, NormPolicy, PrivacyBudget};
use crate::rng::{Rng, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub window: u64,
    pub d: usize,
    pub budget: PrivacyBudget,
    pub seed: u64,
    /// When false, node payloads are exact sums.
    pub noise: bool,
    pub norm_policy: NormPolicy,
    pub track_exact: bool,
}

impl TreeParams {
    pub fn new(window: u64, d: usize, budget: PrivacyBudget, seed: u64) -> Self {
        TreeParams {
            window,
            d,
            budget,
            seed,
            noise: true,
            norm_policy: NormPolicy::Reject,
            track_exact: false,
        }
    }

    pub fn with_noise(mut self, on: bool) -> Self {
        self.noise = on;
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

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(invalid("window must be ≥ 1"));
        }
        if self.d == 0 {
            return Err(invalid("dimension must be ≥ 1"));
        }
        Ok(())
    }

    /// `⌊log₂ W⌋ + 1`; no node wider than the window can lie inside it.
    pub fn levels(&self) -> usize {
        (63 - self.window.leading_zeros()) as usize + 1
    }

    /// Per-node degrees of freedom under an even split across levels.
    pub fn tau(&self) -> u64 {
        wishart_dof(self.d, &self.budget.split(self.levels()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub level: u32,
    pub index: u64,
}

impl NodeId {
    pub fn span(&self) -> u64 {
        1 << self.level
    }

    pub fn start(&self) -> u64 {
        self.index * self.span() + 1
    }

    pub fn end(&self) -> u64 {
        (self.index + 1) * self.span()
    }

    pub fn contains(&self, t: u64) -> bool {
        self.start() <= t && t <= self.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    id: NodeId,
    payload: SymMatrix,
    exact: Option<SymMatrix>,
}

impl Node {
    pub(crate) fn new(id: NodeId, payload: SymMatrix) -> Self {
        Node {
            id,
            payload,
            exact: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn payload(&self) -> &SymMatrix {
        &self.payload
    }

    pub fn exact(&self) -> Option<&SymMatrix> {
        self.exact.as_ref()
    }
}

/// Minimal greedy cover of `[start, end]` by aligned dyadic blocks of level
/// at most `max_level`.
pub fn dyadic_cover(start: u64, end: u64, max_level: u32) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut pos = start;
    while pos <= end {
        let mut level = 0;
        while level < max_level {
            let next = level + 1;
            let span = 1u64 << next;
            if !(pos - 1).is_multiple_of(span) || pos + span - 1 > end {
                break;
            }
            level = next;
        }
        let id = NodeId {
            level,
            index: (pos - 1) >> level,
        };
        pos = id.end() + 1;
        out.push(id);
    }
    out
}

#[derive(Debug, Clone)]
pub struct DyadicTree {
    params: TreeParams,
    tau: u64,
    /// Finalized nodes per level, oldest first.
    nodes: Vec<VecDeque<Node>>,
    /// Exact sums of the rows in each level's currently open node.
    open: Vec<SymMatrix>,
    rngs: Vec<Rng>,
    now: u64,
}

pub fn level_label(level: usize) -> String {
    format!("tree-level-{level}")
}

impl DyadicTree {
    pub fn new(params: TreeParams) -> Result<Self> {
        params.validate()?;
        let levels = params.levels();
        Ok(DyadicTree {
            params,
            tau: if params.noise { params.tau() } else { 0 },
            nodes: vec![VecDeque::new(); levels],
            open: vec![SymMatrix::zeros(params.d); levels],
            rngs: (0..levels).map(|j| Rng::labeled(params.seed, &level_label(j))).collect(),
            now: 0,
        })
    }

    pub(crate) fn from_parts(
        params: TreeParams,
        now: u64,
        nodes: Vec<Node>,
        open: Vec<SymMatrix>,
        rngs: Vec<RngState>,
    ) -> Result<Self> {
        let mut tree = DyadicTree::new(params)?;
        let levels = params.levels();
        if open.len() != levels || rngs.len() != levels {
            return Err(invalid("tree state has the wrong number of levels"));
        }
        for n in nodes {
            let j = n.id.level as usize;
            if j >= levels || n.payload.dim() != params.d || n.id.end() > now {
                return Err(invalid("tree node out of range"));
            }
            if tree.nodes[j].back().is_some_and(|b| b.id.index >= n.id.index) {
                return Err(invalid("tree nodes out of order"));
            }
            tree.nodes[j].push_back(n);
        }
        if open.iter().any(|s| s.dim() != params.d) {
            return Err(invalid("open sum has the wrong dimension"));
        }
        tree.open = open;
        tree.rngs = rngs.into_iter().map(Rng::from_state).collect();
        tree.now = now;
        Ok(tree)
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn levels(&self) -> usize {
        self.nodes.len()
    }

    /// Per-node Wishart degrees of freedom; 0 when noise is off.
    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().flatten()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.nodes().map(|n| n.id).collect();
        ids.sort();
        ids
    }

    pub fn open_sums(&self) -> &[SymMatrix] {
        &self.open
    }

    pub fn rng_states(&self) -> Vec<RngState> {
        self.rngs.iter().map(Rng::state).collect()
    }

    pub fn bytes_resident(&self) -> usize {
        (self.nodes().count() + self.open.len()) * self.params.d * self.params.d * 8
    }

    fn node(&self, id: NodeId) -> Option<&Node> {
        let q = self.nodes.get(id.level as usize)?;
        let first = q.front()?.id.index;
        q.get(id.index.checked_sub(first)? as usize).filter(|n| n.id == id)
    }

    /// Adds one row and returns the nodes finalized by it.
    pub fn ingest(&mut self, row: &[f64]) -> Result<Vec<NodeId>> {
        let a = check_row(row, self.params.d, self.params.norm_policy)?;
        let outer = SymMatrix::outer(&a);
        self.now += 1;
        let t = self.now;
        let mut finalized = Vec::new();
        for j in 0..self.levels() {
            self.open[j].add_assign(&outer);
            let span = 1u64 << j;
            if !t.is_multiple_of(span) {
                continue;
            }
            let id = NodeId {
                level: j as u32,
                index: t / span - 1,
            };
            let exact = std::mem::replace(&mut self.open[j], SymMatrix::zeros(self.params.d));
            let payload = if self.params.noise {
                exact.add(&wishart_sample(self.params.d, self.tau, &mut self.rngs[j]))
            } else {
                exact.clone()
            };
            self.nodes[j].push_back(Node {
                id,
                payload,
                exact: self.params.track_exact.then_some(exact),
            });
            finalized.push(id);
        }
        let start = window_start(t, self.params.window);
        for q in &mut self.nodes {
            while q.front().is_some_and(|n| n.id.start() < start) {
                q.pop_front();
            }
        }
        Ok(finalized)
    }

    /// Nodes summed by [`query`](Self::query) at the current time.
    pub fn cover(&self) -> Vec<NodeId> {
        if self.now == 0 {
            return Vec::new();
        }
        let start = window_start(self.now, self.params.window);
        dyadic_cover(start, self.now, self.levels() as u32 - 1)
    }

    /// Noisy covariance of the current window; `t` must be the current time.
    pub fn query(&self, t: u64) -> Result<SymMatrix> {
        if self.now == 0 {
            return Err(Error::Empty);
        }
        if t != self.now {
            return Err(invalid(format!("queries are answered at the current time {}, not {t}", self.now)));
        }
        let mut acc = SymMatrix::zeros(self.params.d);
        for id in self.cover() {
            let node = self
                .node(id)
                .ok_or_else(|| Error::Contract(format!("cover node {id:?} is missing")))?;
            acc.add_assign(&node.payload);
        }
        Ok(acc)
    }
}
