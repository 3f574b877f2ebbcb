//! Step and finish rewards, and whole-tree metrics.

use std::collections::VecDeque;
use std::str::FromStr;

use log::debug;
use serde::{Deserialize, Serialize};

use super::MulticastRequest;
use crate::error::{Error, Result};
use crate::topology::{Link, NliSnapshot, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub beta: [f64; 3],
    pub r_trap: f64,
    /// Nonnegative multiplier on the step reward.
    pub step_scale: f64,
    pub step_sign: StepSign,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta: [1.0 / 3.0; 3],
            r_trap: -1.0,
            step_scale: 0.01,
            step_sign: StepSign::Positive,
        }
    }
}

/// A finish-to-step reward ratio such as `1:0.01` or `1:-0.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRatio {
    pub finish: f64,
    pub step: f64,
}

impl FromStr for RewardRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("reward ratio must look like `1:0.01`, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let finish: f64 = a.trim().parse().map_err(|_| bad())?;
        let step: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(finish > 0.0 && finish.is_finite() && step.is_finite()) {
            return Err(bad());
        }
        Ok(Self { finish, step })
    }
}

impl std::fmt::Display for RewardRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.finish, self.step)
    }
}

impl RewardConfig {
    /// Realizes a ratio: the step reward is scaled by `|step / finish|`, and a
    /// negative step term selects the negative step form.
    pub fn with_ratio(self, ratio: RewardRatio) -> Self {
        let r = ratio.step / ratio.finish;
        Self {
            step_scale: r.abs(),
            step_sign: if r < 0.0 { StepSign::Negative } else { StepSign::Positive },
            ..self
        }
    }

    pub fn ratio(&self) -> RewardRatio {
        let sign = match self.step_sign {
            StepSign::Positive => 1.0,
            StepSign::Negative => -1.0,
        };
        RewardRatio {
            finish: 1.0,
            step: sign * self.step_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Invalid(format!("beta weights must lie in [0, 1], got {:?}", self.beta)));
        }
        if !(self.step_scale >= 0.0 && self.step_scale.is_finite()) {
            return Err(Error::Invalid(format!("step_scale must be nonnegative, got {}", self.step_scale)));
        }
        if !self.r_trap.is_finite() {
            return Err(Error::Invalid("r_trap must be finite".into()));
        }
        Ok(())
    }
}

/// Unscaled step reward of adding `link`, from the snapshot's normalized
/// matrices.
pub fn reward_step(link: &Link, snap: &NliSnapshot, cfg: &RewardConfig) -> f64 {
    let (bw, delay, loss) = snap.normalized(link);
    let [b1, b2, b3] = cfg.beta;
    match cfg.step_sign {
        StepSign::Positive => b1 * bw + b2 * (1.0 - delay) + b3 * (1.0 - loss),
        StepSign::Negative => -(b1 * (1.0 - bw) + b2 * delay + b3 * loss),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeMetrics {
    /// Mean over destinations of the path bottleneck, Mbps.
    pub bw_tree: f64,
    /// Sum of edge delays, ms.
    pub delay_tree: f64,
    pub loss_tree: f64,
    pub length: usize,
    /// Edges not on any source-destination path.
    pub redundancy: usize,
}

/// Parent pointers of a tree given as an edge list, rooted at `source`.
/// `parent[v] = Some((u, edge))`. Fails unless the edges form a single tree
/// containing the source and every destination.
pub(crate) fn root_tree(
    topo: &Topology,
    req: &MulticastRequest,
    edges: &[usize],
) -> Result<Vec<Option<(usize, usize)>>> {
    let n = topo.node_count();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for &e in edges {
        if e >= topo.edge_count() {
            return Err(Error::Invalid(format!("edge index {e} out of range 0..{}", topo.edge_count())));
        }
        let l = topo.link(e);
        adj[l.a].push((l.b, e));
        adj[l.b].push((l.a, e));
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[req.source] = true;
    let mut reached = 1;
    let mut queue = VecDeque::from([req.source]);
    while let Some(u) = queue.pop_front() {
        for &(v, e) in &adj[u] {
            if Some(e) == parent[u].map(|(_, pe)| pe) {
                continue;
            }
            if seen[v] {
                return Err(Error::Invalid(format!("edge set contains a cycle through edge {e}")));
            }
            seen[v] = true;
            reached += 1;
            parent[v] = Some((u, e));
            queue.push_back(v);
        }
    }
    if reached != edges.len() + 1 {
        return Err(Error::Invalid("edge set is not a single tree containing the source".into()));
    }
    if let Some(d) = req.destinations.iter().find(|&&d| !seen[d]) {
        return Err(Error::IncompleteTree(format!("destination {d} is not reached")));
    }
    Ok(parent)
}

pub fn tree_metrics(
    topo: &Topology,
    req: &MulticastRequest,
    edges: &[usize],
    snap: &NliSnapshot,
) -> Result<TreeMetrics> {
    let parent = root_tree(topo, req, edges)?;
    let mut on_path = vec![false; topo.edge_count()];
    let mut bw_sum = 0.0;
    for &d in &req.destinations {
        let mut bottleneck = f64::INFINITY;
        let mut at = d;
        while let Some((p, e)) = parent[at] {
            bottleneck = bottleneck.min(snap.link_state(topo.link(e)).bw);
            on_path[e] = true;
            at = p;
        }
        bw_sum += bottleneck;
    }
    let mut delay_tree = 0.0;
    let mut survive = 1.0;
    for &e in edges {
        let s = snap.link_state(topo.link(e));
        delay_tree += s.delay;
        survive *= 1.0 - s.loss;
    }
    Ok(TreeMetrics {
        bw_tree: bw_sum / req.destinations.len() as f64,
        delay_tree,
        loss_tree: 1.0 - survive,
        length: edges.len(),
        redundancy: edges.iter().filter(|&&e| !on_path[e]).count(),
    })
}

/// The pieces of a finish reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinishTerms {
    pub metrics: TreeMetrics,
    pub bw_hat: f64,
    pub delay_hat: f64,
    /// Set when the bandwidth reduction had a non-positive range.
    pub bw_degenerate: bool,
    pub delay_degenerate: bool,
    pub value: f64,
}

/// `(x - lo) / span`, clamped to `[0, 1]`; a non-positive span yields 0 and
/// reports degeneracy.
fn reduce(x: f64, lo: f64, span: f64) -> (f64, bool) {
    if span > 0.0 {
        (((x - lo) / span).clamp(0.0, 1.0), false)
    } else {
        (0.0, true)
    }
}

pub fn finish_terms(
    topo: &Topology,
    req: &MulticastRequest,
    edges: &[usize],
    snap: &NliSnapshot,
    cfg: &RewardConfig,
) -> Result<FinishTerms> {
    let metrics = tree_metrics(topo, req, edges, snap)?;
    let states = snap.link_states(topo);
    let (mut bw_lo, mut bw_hi, mut d_lo, mut d_sum) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, 0.0);
    for s in &states {
        bw_lo = bw_lo.min(s.bw);
        bw_hi = bw_hi.max(s.bw);
        d_lo = d_lo.min(s.delay);
        d_sum += s.delay;
    }
    let members = (1 + req.destinations.len()) as f64;
    let (bw_hat, bw_degenerate) = reduce(metrics.bw_tree, bw_lo, bw_hi - bw_lo);
    let (delay_hat, delay_degenerate) =
        reduce(metrics.delay_tree, d_lo * members, d_sum - d_lo * members);
    if bw_degenerate || delay_degenerate {
        debug!(
            "degenerate finish reduction at t={} (bw: {bw_degenerate}, delay: {delay_degenerate})",
            snap.timestamp_index
        );
    }
    let [b1, b2, b3] = cfg.beta;
    let value = b1 * bw_hat + b2 * (1.0 - delay_hat) + b3 * (1.0 - metrics.loss_tree);
    Ok(FinishTerms {
        metrics,
        bw_hat,
        delay_hat,
        bw_degenerate,
        delay_degenerate,
        value,
    })
}

pub fn reward_finish(
    topo: &Topology,
    req: &MulticastRequest,
    edges: &[usize],
    snap: &NliSnapshot,
    cfg: &RewardConfig,
) -> Result<f64> {
    finish_terms(topo, req, edges, snap, cfg).map(|t| t.value)
}
