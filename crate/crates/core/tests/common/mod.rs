//! Random instances shared by the integration tests.
#![allow(dead_code)]

use mcast_core::env::{ActionCase, MulticastRequest, PartialTree};
use mcast_core::topology::snapshot::LinkState;
use mcast_core::topology::{NliSnapshot, Topology};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// A random spanning tree plus each remaining pair with probability `extra`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, extra: f64) -> Topology {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pairs = Vec::new();
    for k in 1..n {
        let j = order[rng.random_range(0..k)];
        pairs.push((order[k].min(j), order[k].max(j)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !pairs.contains(&(i, j)) && rng.random_bool(extra) {
                pairs.push((i, j));
            }
        }
    }
    pairs.shuffle(rng);
    let links = pairs
        .into_iter()
        .map(|(i, j)| (i, j, rng.random_range(5.0..50.0), rng.random_range(1.0..10.0)))
        .collect();
    Topology::new(n, links).unwrap()
}

pub fn random_snapshot<R: Rng>(rng: &mut R, topo: &Topology) -> NliSnapshot {
    let states: Vec<LinkState> = (0..topo.edge_count())
        .map(|_| LinkState {
            bw: rng.random_range(0.5..30.0),
            delay: rng.random_range(1.0..40.0),
            loss: if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..0.05) },
        })
        .collect();
    NliSnapshot::from_links(topo, &states)
}

/// A random source and `k` distinct destinations.
pub fn random_request<R: Rng>(rng: &mut R, topo: &Topology, k: usize) -> MulticastRequest {
    let mut nodes: Vec<usize> = (0..topo.node_count()).collect();
    nodes.shuffle(rng);
    MulticastRequest::new(topo, nodes[0], &nodes[1..=k]).unwrap()
}

/// Adds uniformly random joinable edges until the tree spans the request.
pub fn random_spanning_actions<R: Rng>(rng: &mut R, topo: &Topology, req: &MulticastRequest) -> Vec<usize> {
    let mut tree = PartialTree::new(topo, req.source);
    let mut actions = Vec::new();
    while !tree.spans(req) {
        let joinable: Vec<usize> = (0..topo.edge_count())
            .filter(|&e| tree.classify(topo, e) == ActionCase::Joinable)
            .collect();
        let e = *joinable.choose(rng).unwrap();
        actions.push(e);
        tree = PartialTree::from_edges(topo, req.source, &actions).unwrap();
    }
    actions
}
