//! Redundant-branch pruning and multicast flow-entry generation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{ActionCase, MulticastRequest, PartialTree};
use crate::error::{Error, Result};
use crate::topology::Topology;

/// Node to parent; the source maps to `None`.
pub type RouteDict = BTreeMap<usize, Option<usize>>;

/// Replays a sequence of tree-extending actions. For each edge the endpoint
/// already in the tree becomes the parent of the other.
pub fn build_route_dict(topo: &Topology, actions: &[usize], req: &MulticastRequest) -> Result<RouteDict> {
    let mut tree = PartialTree::new(topo, req.source);
    let mut route = RouteDict::from([(req.source, None)]);
    for &e in actions {
        if e >= topo.edge_count() {
            return Err(Error::Flow(format!("action {e} is not an edge")));
        }
        let case = tree.classify(topo, e);
        if case != ActionCase::Joinable {
            return Err(Error::Flow(format!("action {e} is {}, not a tree extension", case.as_str())));
        }
        let l = topo.link(e);
        let (parent, child) = if tree.contains_node(l.a) { (l.a, l.b) } else { (l.b, l.a) };
        route.insert(child, Some(parent));
        tree = PartialTree::from_edges(topo, req.source, &[tree.edges(), &[e]].concat())?;
    }
    Ok(route)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub parent: Option<usize>,
    /// In first-traversal order, without repeats.
    pub children: Vec<usize>,
}

pub type InstallInfo = BTreeMap<usize, NodeInfo>;

/// Walks from each destination (ascending id) toward the source, stopping at
/// the first node an earlier walk already recorded. Nodes no walk reaches are
/// dropped.
pub fn prune_redundant(route: &RouteDict, req: &MulticastRequest) -> Result<InstallInfo> {
    let mut info = InstallInfo::from([(req.source, NodeInfo::default())]);
    for &d in &req.destinations {
        let mut node = d;
        loop {
            let parent = *route
                .get(&node)
                .ok_or_else(|| Error::Flow(format!("node {node} is missing from the route")))?;
            info.entry(node).or_default().parent = parent;
            let Some(p) = parent else { break };
            let seen = info.contains_key(&p);
            let children = &mut info.entry(p).or_default().children;
            if !children.contains(&node) {
                children.push(node);
            }
            if seen {
                break;
            }
            node = p;
        }
    }
    Ok(info)
}

/// Tree edges of an install record, sorted.
pub fn install_edges(topo: &Topology, info: &InstallInfo) -> Result<Vec<usize>> {
    let mut edges = Vec::new();
    for (&node, rec) in info {
        if let Some(p) = rec.parent {
            edges.push(
                topo.edge_between(node, p)
                    .ok_or_else(|| Error::Flow(format!("no link between {node} and {p}")))?,
            );
        }
    }
    edges.sort_unstable();
    Ok(edges)
}

/// Local port numbers. Port 0 faces the attached host; port `k >= 1` is the
/// `k`-th incident link in ascending neighbor order.
#[derive(Debug, Clone, PartialEq)]
pub struct PortMap {
    ports: Vec<BTreeMap<usize, u32>>,
}

pub const HOST_PORT: u32 = 0;

impl PortMap {
    pub fn synthetic(topo: &Topology) -> Self {
        Self {
            ports: (0..topo.node_count())
                .map(|v| {
                    topo.neighbors(v)
                        .iter()
                        .enumerate()
                        .map(|(k, &(w, _))| (w, k as u32 + 1))
                        .collect()
                })
                .collect(),
        }
    }

    /// Port on `node` facing `neighbor`.
    pub fn port(&self, node: usize, neighbor: usize) -> Result<u32> {
        self.ports
            .get(node)
            .and_then(|m| m.get(&neighbor))
            .copied()
            .ok_or_else(|| Error::Flow(format!("no port on switch {node} toward {neighbor}")))
    }

    /// Neighbor reached through `port` of `node`.
    pub fn peer(&self, node: usize, port: u32) -> Option<usize> {
        self.ports.get(node)?.iter().find(|(_, &p)| p == port).map(|(&w, _)| w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub switch: usize,
    pub group: u32,
    /// `None` at the source switch.
    pub in_port: Option<u32>,
    pub out_ports: Vec<u32>,
}

/// One entry per recorded node in ascending switch order. Children's ports
/// come first in traversal order; destinations also forward to their host.
pub fn emit_flow_entries(
    info: &InstallInfo,
    ports: &PortMap,
    req: &MulticastRequest,
    group: u32,
) -> Result<Vec<FlowEntry>> {
    let mut entries = Vec::with_capacity(info.len());
    for (&node, rec) in info {
        let in_port = rec.parent.map(|p| ports.port(node, p)).transpose()?;
        let mut out_ports = rec
            .children
            .iter()
            .map(|&c| ports.port(node, c))
            .collect::<Result<Vec<_>>>()?;
        if req.destinations.binary_search(&node).is_ok() {
            out_ports.push(HOST_PORT);
        }
        if out_ports.is_empty() {
            return Err(Error::Flow(format!("switch {node} has nowhere to forward")));
        }
        entries.push(FlowEntry {
            switch: node,
            group,
            in_port,
            out_ports,
        });
    }
    Ok(entries)
}

pub fn write_flow_entries<W: Write>(entries: &[FlowEntry], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, entries)?;
    Ok(())
}

/// Forwards one packet from the source switch through the table and returns
/// the switches whose host port received it. Fails on loops or on a packet
/// arriving at a switch without a matching entry.
pub fn replay_reachability(entries: &[FlowEntry], ports: &PortMap, source: usize) -> Result<BTreeSet<usize>> {
    let by_switch: BTreeMap<usize, &FlowEntry> = entries.iter().map(|e| (e.switch, e)).collect();
    let mut delivered = BTreeSet::new();
    let mut visited = BTreeSet::new();
    let mut queue = VecDeque::from([(source, None)]);
    while let Some((switch, arrived_on)) = queue.pop_front() {
        let entry = by_switch
            .get(&switch)
            .ok_or_else(|| Error::Flow(format!("packet reached switch {switch} with no entry")))?;
        if entry.in_port != arrived_on {
            return Err(Error::Flow(format!(
                "switch {switch} expects in_port {:?}, packet arrived on {:?}",
                entry.in_port, arrived_on
            )));
        }
        if !visited.insert(switch) {
            return Err(Error::Flow(format!("forwarding loop through switch {switch}")));
        }
        for &port in &entry.out_ports {
            if port == HOST_PORT {
                delivered.insert(switch);
                continue;
            }
            let next = ports
                .peer(switch, port)
                .ok_or_else(|| Error::Flow(format!("switch {switch} has no port {port}")))?;
            queue.push_back((next, Some(ports.port(next, switch)?)));
        }
    }
    Ok(delivered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn topo(text: &str) -> Topology {
        Topology::parse(text, Path::new("t")).unwrap()
    }

    // s=0, a=1, b=2, x=3, y=4
    fn chain() -> Topology {
        topo("nodes 5\nedge 0 1 1 1\nedge 1 2 1 1\nedge 1 3 1 1\nedge 0 2 1 1\nedge 0 4 1 1\n")
    }

    #[test]
    fn route_dicts() {
        let t = chain();
        let req = MulticastRequest::new(&t, 0, &[2]).unwrap();
        let r = build_route_dict(&t, &[0, 1], &req).unwrap();
        assert_eq!(r, RouteDict::from([(0, None), (1, Some(0)), (2, Some(1))]));
        let r = build_route_dict(&t, &[0, 3], &req).unwrap();
        assert_eq!(r, RouteDict::from([(0, None), (1, Some(0)), (2, Some(0))]));
        assert!(build_route_dict(&t, &[1], &req).is_err());
    }

    #[test]
    fn dangling_branch_is_dropped() {
        let req_topo = chain();
        let req = MulticastRequest::new(&req_topo, 0, &[2]).unwrap();
        let route = RouteDict::from([(0, None), (1, Some(0)), (2, Some(1)), (3, Some(1))]);
        let info = prune_redundant(&route, &req).unwrap();
        assert!(!info.contains_key(&3));
        assert_eq!(info[&1].children, vec![2]);
        assert_eq!(info[&0].children, vec![1]);
        assert!(prune_redundant(&RouteDict::from([(0, None)]), &req).is_err());
    }

    #[test]
    fn relay_nodes_survive_pruning() {
        // Source 2, destinations {4, 5}, tree {2-3, 2-4, 3-5}.
        let t = topo("nodes 6\nedge 2 3 1 1\nedge 2 4 1 1\nedge 3 5 1 1\nedge 3 4 1 1\nedge 1 5 1 1\nedge 0 1 1 1\n");
        let req = MulticastRequest::new(&t, 2, &[4, 5]).unwrap();
        let route = build_route_dict(&t, &[0, 1, 2], &req).unwrap();
        let info = prune_redundant(&route, &req).unwrap();
        assert_eq!(install_edges(&t, &info).unwrap(), vec![0, 1, 2]);
        assert_eq!(info[&2].children, vec![4, 3]);
    }

    #[test]
    fn pruning_is_idempotent() {
        let t = chain();
        let req = MulticastRequest::new(&t, 0, &[2]).unwrap();
        let route = build_route_dict(&t, &[0, 4, 1, 2], &req).unwrap();
        let once = prune_redundant(&route, &req).unwrap();
        let route2: RouteDict = once.iter().map(|(&n, r)| (n, r.parent)).collect();
        assert_eq!(prune_redundant(&route2, &req).unwrap(), once);
    }

    #[test]
    fn chain_and_fork_entries() {
        let t = chain();
        let ports = PortMap::synthetic(&t);
        // node 0 neighbors 1,2,4 -> ports 1,2,3; node 1 neighbors 0,2,3 -> 1,2,3
        assert_eq!(ports.port(0, 4).unwrap(), 3);
        let req = MulticastRequest::new(&t, 0, &[2]).unwrap();
        let info = prune_redundant(&build_route_dict(&t, &[0, 1], &req).unwrap(), &req).unwrap();
        let entries = emit_flow_entries(&info, &ports, &req, 7).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0], FlowEntry { switch: 0, group: 7, in_port: None, out_ports: vec![1] });
        assert_eq!(entries[1], FlowEntry { switch: 1, group: 7, in_port: Some(1), out_ports: vec![2] });
        assert_eq!(entries[2].out_ports, vec![HOST_PORT]);

        let req = MulticastRequest::new(&t, 0, &[3, 4]).unwrap();
        let info = prune_redundant(&build_route_dict(&t, &[0, 2, 4], &req).unwrap(), &req).unwrap();
        let entries = emit_flow_entries(&info, &ports, &req, 1).unwrap();
        let fork = entries.iter().find(|e| e.switch == 0).unwrap();
        assert_eq!(fork.out_ports, vec![1, 3]);
        assert_eq!(replay_reachability(&entries, &ports, 0).unwrap(), BTreeSet::from([3, 4]));

        let mut json = Vec::new();
        write_flow_entries(&entries, &mut json).unwrap();
        let back: Vec<FlowEntry> = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, entries);
        let text = String::from_utf8(json).unwrap();
        assert!(text.find("\"switch\"").unwrap() < text.find("\"out_ports\"").unwrap());
    }
}
