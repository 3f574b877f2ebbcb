//! Steiner-tree baselines: the KMB heuristic under three link-weight regimes
//! and an exhaustive oracle for small graphs.

pub mod oracle;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dsu::DisjointSets;
use crate::env::MulticastRequest;
use crate::error::{Error, Result};
use crate::topology::snapshot::LinkState;
use crate::topology::{NliSnapshot, Topology};

pub use oracle::{exact_steiner_oracle, Objective, OracleFixture, OracleResult, ORACLE_EDGE_LIMIT};

/// Added to bandwidth costs so the best link is not free.
pub const BW_COST_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightRegime {
    Bandwidth,
    Delay,
    Loss,
}

impl WeightRegime {
    pub const ALL: [WeightRegime; 3] = [Self::Bandwidth, Self::Delay, Self::Loss];

    pub fn label(self) -> &'static str {
        match self {
            Self::Bandwidth => "KMB_bw",
            Self::Delay => "KMB_delay",
            Self::Loss => "KMB_loss",
        }
    }
}

/// Additive link cost under a regime. `max_bw` is the largest residual
/// bandwidth over all links of the snapshot. A loss of 1 costs infinity.
pub fn weight_cost(regime: WeightRegime, link: LinkState, max_bw: f64) -> f64 {
    match regime {
        WeightRegime::Delay => link.delay,
        WeightRegime::Loss => -(1.0 - link.loss).ln(),
        WeightRegime::Bandwidth => (max_bw - link.bw) + BW_COST_FLOOR,
    }
}

/// Per-edge costs for a whole snapshot.
pub fn edge_costs(topo: &Topology, snap: &NliSnapshot, regime: WeightRegime) -> Vec<f64> {
    let states = snap.link_states(topo);
    let max_bw = states.iter().map(|s| s.bw).fold(f64::NEG_INFINITY, f64::max);
    states.into_iter().map(|s| weight_cost(regime, s, max_bw)).collect()
}

/// A tree given by its sorted edge indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinerTree {
    pub edges: Vec<usize>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // Min-heap on (cost, node).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths. Returns distances and the edge used to
/// reach each node. Among equal-cost paths the first one settled wins:
/// nodes leave the queue in (cost, id) order and only strict improvements
/// replace a predecessor.
pub fn shortest_paths(topo: &Topology, costs: &[f64], src: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = topo.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut via = vec![None; n];
    let mut done = vec![false; n];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::from([Frontier { cost: 0.0, node: src }]);
    while let Some(Frontier { cost, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &(next, e) in topo.neighbors(node) {
            let c = costs[e];
            if !c.is_finite() || done[next] {
                continue;
            }
            let alt = cost + c;
            if alt < dist[next] {
                dist[next] = alt;
                via[next] = Some(e);
                heap.push(Frontier { cost: alt, node: next });
            }
        }
    }
    (dist, via)
}

fn path_edges(topo: &Topology, via: &[Option<usize>], src: usize, dst: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut at = dst;
    while at != src {
        let e = via[at].expect("reachable node has a predecessor");
        out.push(e);
        at = topo.link(e).other(at).expect("edge touches node");
    }
    out
}

/// Removes non-terminal leaves until none remain.
pub fn prune_nonterminal_leaves(topo: &Topology, terminals: &[usize], edges: &[usize]) -> Vec<usize> {
    let n = topo.node_count();
    let mut is_terminal = vec![false; n];
    for &t in terminals {
        is_terminal[t] = true;
    }
    let mut alive: Vec<usize> = edges.to_vec();
    loop {
        let mut degree = vec![0usize; n];
        for &e in &alive {
            let l = topo.link(e);
            degree[l.a] += 1;
            degree[l.b] += 1;
        }
        let before = alive.len();
        alive.retain(|&e| {
            let l = topo.link(e);
            !((degree[l.a] == 1 && !is_terminal[l.a]) || (degree[l.b] == 1 && !is_terminal[l.b]))
        });
        if alive.len() == before {
            return alive;
        }
    }
}

fn kruskal(mut candidates: Vec<(f64, usize, usize, usize)>, n: usize) -> Vec<(usize, usize, usize)> {
    candidates.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
            .then(x.3.cmp(&y.3))
    });
    let mut sets = DisjointSets::new(n);
    candidates
        .into_iter()
        .filter(|&(_, a, b, _)| sets.union(a, b))
        .map(|(_, a, b, id)| (a, b, id))
        .collect()
}

/// The KMB heuristic with explicit edge costs.
pub fn kmb_with_costs(topo: &Topology, costs: &[f64], req: &MulticastRequest) -> Result<SteinerTree> {
    if let Some(c) = costs.iter().find(|c| c.is_nan() || **c < 0.0) {
        return Err(Error::Invalid(format!("edge costs must be nonnegative, got {c}")));
    }
    let mut terminals = vec![req.source];
    terminals.extend(&req.destinations);

    // Complete distance graph over the terminals.
    let trees: Vec<_> = terminals.iter().map(|&t| shortest_paths(topo, costs, t)).collect();
    let mut complete = Vec::new();
    for i in 0..terminals.len() {
        for j in i + 1..terminals.len() {
            let d = trees[i].0[terminals[j]];
            if !d.is_finite() {
                return Err(Error::Unreachable(terminals[j]));
            }
            complete.push((d, i, j, 0));
        }
    }
    // MST of the distance graph, expanded into shortest paths.
    let mut expanded = vec![false; topo.edge_count()];
    for (i, j, _) in kruskal(complete, terminals.len()) {
        for e in path_edges(topo, &trees[i].1, terminals[i], terminals[j]) {
            expanded[e] = true;
        }
    }
    // MST of the expanded subgraph, then leaf pruning.
    let sub: Vec<_> = (0..topo.edge_count())
        .filter(|&e| expanded[e])
        .map(|e| {
            let l = topo.link(e);
            (costs[e], l.a, l.b, e)
        })
        .collect();
    let mst: Vec<usize> = kruskal(sub, topo.node_count()).into_iter().map(|(_, _, e)| e).collect();
    let mut edges = prune_nonterminal_leaves(topo, &terminals, &mst);
    edges.sort_unstable();
    let cost = edges.iter().map(|&e| costs[e]).sum();
    Ok(SteinerTree { edges, cost })
}

pub fn kmb(topo: &Topology, snap: &NliSnapshot, regime: WeightRegime, req: &MulticastRequest) -> Result<SteinerTree> {
    kmb_with_costs(topo, &edge_costs(topo, snap, regime), req)
}
