//! Exhaustive Steiner-tree search for small graphs.
//!
//! Every subtree containing the source is generated exactly once by binary
//! branching on the first frontier edge (take it, or rule it out for the rest
//! of the branch). Subtrees that reach all terminals and whose leaves are all
//! terminals are the candidate Steiner trees; any other spanning subtree
//! prunes down to one of them.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{edge_costs, WeightRegime};
use crate::env::{finish_terms, tree_metrics, MulticastRequest, RewardConfig, TreeMetrics};
use crate::error::{Error, Result};
use crate::topology::{NliSnapshot, Topology};

/// Largest edge count the oracle accepts.
pub const ORACLE_EDGE_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Maximize the finish reward.
    Finish(RewardConfig),
    /// Maximize the mean bottleneck bandwidth.
    BwTree,
    DelayTree,
    LossTree,
    /// Minimize the summed regime cost.
    Cost(WeightRegime),
}

impl Objective {
    fn maximize(&self) -> bool {
        matches!(self, Self::Finish(_) | Self::BwTree)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Sorted edge indices of the best tree.
    pub edges: Vec<usize>,
    pub value: f64,
    pub metrics: TreeMetrics,
    /// Number of Steiner trees scored.
    pub candidates: u64,
}

/// Calls `visit` once per Steiner tree of the request: a tree containing the
/// source and every destination whose leaves are all terminals.
pub fn for_each_steiner_tree(topo: &Topology, req: &MulticastRequest, mut visit: impl FnMut(&[usize])) {
    let n = topo.node_count();
    let mut search = Search {
        topo,
        in_tree: vec![false; n],
        terminal: vec![false; n],
        degree: vec![0; n],
        edges: Vec::new(),
        terminals_in: 1,
        terminal_count: req.member_count(),
    };
    search.terminal[req.source] = true;
    for &d in &req.destinations {
        search.terminal[d] = true;
    }
    search.in_tree[req.source] = true;
    let frontier: Vec<usize> = topo.neighbors(req.source).iter().map(|&(_, e)| e).collect();
    search.grow(frontier, &mut visit);
}

struct Search<'a> {
    topo: &'a Topology,
    in_tree: Vec<bool>,
    terminal: Vec<bool>,
    degree: Vec<usize>,
    edges: Vec<usize>,
    terminals_in: usize,
    terminal_count: usize,
}

impl Search<'_> {
    fn is_steiner(&self) -> bool {
        self.terminals_in == self.terminal_count
            && self
                .in_tree
                .iter()
                .enumerate()
                .all(|(v, &inside)| !inside || self.degree[v] != 1 || self.terminal[v])
    }

    fn grow(&mut self, frontier: Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        let Some((&e, rest)) = frontier.split_first() else {
            if self.is_steiner() {
                visit(&self.edges);
            }
            return;
        };
        let link = self.topo.link(e);
        let (u, v) = if self.in_tree[link.a] { (link.a, link.b) } else { (link.b, link.a) };

        // Take e: v joins; frontier edges into v now close cycles.
        let mut next: Vec<usize> = rest
            .iter()
            .copied()
            .filter(|&f| !self.topo.link(f).touches(v))
            .collect();
        next.extend(
            self.topo
                .neighbors(v)
                .iter()
                .filter(|&&(w, _)| !self.in_tree[w])
                .map(|&(_, f)| f),
        );
        self.in_tree[v] = true;
        self.degree[u] += 1;
        self.degree[v] += 1;
        self.edges.push(e);
        self.terminals_in += usize::from(self.terminal[v]);
        self.grow(next, visit);
        self.terminals_in -= usize::from(self.terminal[v]);
        self.edges.pop();
        self.degree[u] -= 1;
        self.degree[v] -= 1;
        self.in_tree[v] = false;

        // Rule e out.
        self.grow(rest.to_vec(), visit);
    }
}

fn better(value: f64, edges: &[usize], best: &Option<(f64, Vec<usize>)>, maximize: bool) -> bool {
    let Some((bv, be)) = best else { return true };
    let by_value = if maximize { value.total_cmp(bv) } else { bv.total_cmp(&value) };
    match by_value {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match edges.len().cmp(&be.len()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => edges < be.as_slice(),
        },
    }
}

/// The optimal Steiner tree under `objective`. Ties go to fewer edges, then
/// to the lexicographically smaller sorted edge list.
pub fn exact_steiner_oracle(
    topo: &Topology,
    snap: &NliSnapshot,
    req: &MulticastRequest,
    objective: &Objective,
) -> Result<OracleResult> {
    if topo.edge_count() > ORACLE_EDGE_LIMIT {
        return Err(Error::OracleLimit {
            m: topo.edge_count(),
            limit: ORACLE_EDGE_LIMIT,
        });
    }
    let costs = match objective {
        Objective::Cost(regime) => Some(edge_costs(topo, snap, *regime)),
        _ => None,
    };
    let maximize = objective.maximize();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut candidates = 0u64;
    let mut failure = None;
    for_each_steiner_tree(topo, req, |edges| {
        if failure.is_some() {
            return;
        }
        candidates += 1;
        let value = match objective {
            Objective::Finish(cfg) => finish_terms(topo, req, edges, snap, cfg).map(|f| f.value),
            Objective::BwTree => tree_metrics(topo, req, edges, snap).map(|m| m.bw_tree),
            Objective::DelayTree => tree_metrics(topo, req, edges, snap).map(|m| m.delay_tree),
            Objective::LossTree => tree_metrics(topo, req, edges, snap).map(|m| m.loss_tree),
            Objective::Cost(_) => {
                let c = costs.as_ref().expect("costs computed");
                Ok(edges.iter().map(|&e| c[e]).sum())
            }
        };
        match value {
            Ok(v) => {
                let mut sorted = edges.to_vec();
                sorted.sort_unstable();
                if better(v, &sorted, &best, maximize) {
                    best = Some((v, sorted));
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (value, edges) = best.ok_or_else(|| Error::Unreachable(req.destinations[0]))?;
    let metrics = tree_metrics(topo, req, &edges, snap)?;
    Ok(OracleResult {
        edges,
        value,
        metrics,
        candidates,
    })
}

/// Cached oracle optimum for one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub topology_hash: String,
    pub snapshot_index: usize,
    pub request: MulticastRequest,
    pub objective: Objective,
    pub best_value: f64,
    pub best_edges: Vec<usize>,
}

impl OracleFixture {
    pub fn write_all<W: Write>(fixtures: &[OracleFixture], out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, fixtures)?;
        Ok(())
    }

    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<OracleFixture>> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
