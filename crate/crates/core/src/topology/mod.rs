//! Network graph, simulated link measurement, and NLI snapshots.
//!
//! A [`Topology`] is an undirected graph whose edge indices double as the
//! agent's action ids. The [`measure`] submodule turns port counters and probe
//! timings into per-link residual bandwidth, loss and delay; [`traffic`]
//! synthesizes demand matrices; [`snapshot`] routes those demands over the
//! graph, fabricates the counters a controller would have polled, and stores
//! the resulting matrices.

pub mod measure;
pub mod snapshot;
pub mod traffic;

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use measure::{measure_link, LinkCounters, LinkMeasurement, PortCounters, ProbeTimings};
pub use snapshot::{generate_snapshots, normalize_nli, NliSnapshot, SimConfig, SnapshotSet};
pub use traffic::{synthetic_traffic, TrafficMatrix};

/// The default 14-node / 23-link topology shipped with the crate.
pub const BUNDLED_TOPOLOGY: &str = include_str!("../../data/edge14.topo");

/// One undirected link. `a < b` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub index: usize,
    pub a: usize,
    pub b: usize,
    pub capacity_mbps: f64,
    pub base_delay_ms: f64,
}

impl Link {
    pub fn endpoints(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    /// The endpoint opposite `node`, if `node` is an endpoint.
    pub fn other(&self, node: usize) -> Option<usize> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }

    pub fn touches(&self, node: usize) -> bool {
        self.a == node || self.b == node
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: usize,
    links: Vec<Link>,
    /// Per node: `(neighbor, edge index)` sorted by neighbor id.
    adjacency: Vec<Vec<(usize, usize)>>,
    lookup: HashMap<(usize, usize), usize>,
}

impl Topology {
    /// Builds and validates a topology. Link `k` of `links` receives edge
    /// index `k`; endpoints are reordered so that `a < b`.
    pub fn new(nodes: usize, links: Vec<(usize, usize, f64, f64)>) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Topology("graph has no nodes".into()));
        }
        let mut adjacency = vec![Vec::new(); nodes];
        let mut lookup = HashMap::new();
        let mut built = Vec::with_capacity(links.len());
        for (index, (i, j, capacity_mbps, base_delay_ms)) in links.into_iter().enumerate() {
            if i >= nodes || j >= nodes {
                return Err(Error::Topology(format!(
                    "edge {index} ({i},{j}) references a node outside 0..{nodes}"
                )));
            }
            if i == j {
                return Err(Error::Topology(format!("edge {index} is a self-loop on node {i}")));
            }
            if !(capacity_mbps > 0.0 && capacity_mbps.is_finite()) {
                return Err(Error::Topology(format!(
                    "edge {index} ({i},{j}) capacity must be positive, got {capacity_mbps}"
                )));
            }
            if !(base_delay_ms > 0.0 && base_delay_ms.is_finite()) {
                return Err(Error::Topology(format!(
                    "edge {index} ({i},{j}) base delay must be positive, got {base_delay_ms}"
                )));
            }
            let (a, b) = (i.min(j), i.max(j));
            if let Some(prev) = lookup.insert((a, b), index) {
                return Err(Error::Topology(format!(
                    "parallel edge: edge {index} ({i},{j}) duplicates edge {prev}"
                )));
            }
            adjacency[a].push((b, index));
            adjacency[b].push((a, index));
            built.push(Link {
                index,
                a,
                b,
                capacity_mbps,
                base_delay_ms,
            });
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let topo = Self {
            nodes,
            links: built,
            adjacency,
            lookup,
        };
        if !topo.is_connected() {
            return Err(Error::Topology("graph is disconnected".into()));
        }
        Ok(topo)
    }

    /// Parses the line-oriented topology format:
    ///
    /// ```text
    /// nodes 3
    /// edge 0 1 10 2.5
    /// edge 1 2 20 4
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut nodes = None;
        let mut links = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "nodes" => {
                    if nodes.is_some() {
                        return Err(perr(lineno, "duplicate `nodes` header".into()));
                    }
                    if fields.len() != 2 {
                        return Err(perr(lineno, "expected `nodes <n>`".into()));
                    }
                    let n = fields[1]
                        .parse::<usize>()
                        .map_err(|e| perr(lineno, format!("bad node count: {e}")))?;
                    nodes = Some(n);
                }
                "edge" => {
                    if nodes.is_none() {
                        return Err(perr(lineno, "`edge` before `nodes` header".into()));
                    }
                    if fields.len() != 5 {
                        return Err(perr(
                            lineno,
                            "expected `edge <i> <j> <capacity_mbps> <base_delay_ms>`".into(),
                        ));
                    }
                    let int = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|e| perr(lineno, format!("bad node id {s:?}: {e}")))
                    };
                    let real = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|e| perr(lineno, format!("bad number {s:?}: {e}")))
                    };
                    links.push((int(fields[1])?, int(fields[2])?, real(fields[3])?, real(fields[4])?));
                }
                other => return Err(perr(lineno, format!("unknown directive {other:?}"))),
            }
        }
        let nodes = nodes.ok_or_else(|| perr(0, "missing `nodes` header".into()))?;
        Self::new(nodes, links)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TOPOLOGY, Path::new("<bundled>")).expect("bundled topology is valid")
    }

    /// Canonical text form; [`Topology::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.nodes);
        for l in &self.links {
            writeln!(out, "edge {} {} {} {}", l.a, l.b, l.capacity_mbps, l.base_delay_ms).unwrap();
        }
        out
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, index: usize) -> &Link {
        &self.links[index]
    }

    /// `(neighbor, edge index)` pairs in ascending neighbor order.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn edge_between(&self, i: usize, j: usize) -> Option<usize> {
        self.lookup.get(&(i.min(j), i.max(j))).copied()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Minimum-hop path from `src` to `dst` as a list of edge indices.
    /// Breadth-first search expands neighbors in ascending id order, so among
    /// equal-length paths the one discovered through lower ids wins.
    pub fn hop_path(&self, src: usize, dst: usize) -> Vec<usize> {
        if src == dst {
            return Vec::new();
        }
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.nodes];
        let mut seen = vec![false; self.nodes];
        seen[src] = true;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            if u == dst {
                break;
            }
            for &(v, e) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, e));
                    queue.push_back(v);
                }
            }
        }
        let mut path = Vec::new();
        let mut at = dst;
        while let Some((p, e)) = parent[at] {
            path.push(e);
            at = p;
        }
        path.reverse();
        path
    }
}
