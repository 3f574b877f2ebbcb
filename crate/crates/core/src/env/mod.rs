//! Multicast-tree construction as an episodic MDP.
//!
//! The agent grows a tree from the source one edge at a time. Each action is
//! an edge index; edges touching the tree at exactly one node extend it, every
//! other choice is a trap that leaves the state untouched.

pub mod reward;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dsu::DisjointSets;
use crate::error::{Error, Result};
use crate::topology::{NliSnapshot, Topology};

pub use reward::{
    finish_terms, reward_finish, reward_step, tree_metrics, FinishTerms, RewardConfig, RewardRatio,
    StepSign, TreeMetrics,
};

/// Source tag on the tree-state diagonal.
pub const TAG_SOURCE: f32 = -1.0;
/// Destination tag on the tree-state diagonal.
pub const TAG_DEST: f32 = 1.0;
/// Off-diagonal tag for edges already in the tree.
pub const TAG_TREE: f32 = 1.0;
/// Off-diagonal tag for edges that would extend the tree without a loop.
pub const TAG_BRANCH: f32 = 0.5;

/// Invalid actions allowed per edge before an episode is truncated.
pub const TRAP_BUDGET_PER_EDGE: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MulticastRequest {
    pub source: usize,
    /// Sorted and deduplicated.
    pub destinations: Vec<usize>,
}

impl MulticastRequest {
    pub fn new(topo: &Topology, source: usize, destinations: &[usize]) -> Result<Self> {
        let n = topo.node_count();
        if source >= n {
            return Err(Error::Invalid(format!("source {source} is not a node (n={n})")));
        }
        let mut dests = destinations.to_vec();
        dests.sort_unstable();
        dests.dedup();
        if dests.is_empty() {
            return Err(Error::Invalid("request needs at least one destination".into()));
        }
        if let Some(&d) = dests.iter().find(|&&d| d >= n) {
            return Err(Error::Invalid(format!("destination {d} is not a node (n={n})")));
        }
        if dests.contains(&source) {
            return Err(Error::Invalid(format!("destination {source} equals the source")));
        }
        Ok(Self {
            source,
            destinations: dests,
        })
    }

    pub fn member_count(&self) -> usize {
        1 + self.destinations.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionCase {
    /// Exactly one endpoint in the tree.
    Joinable,
    /// Both endpoints in the tree, edge not in it.
    Loop,
    InTree,
    /// Neither endpoint in the tree.
    Detached,
}

impl ActionCase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Joinable => "JOINABLE",
            Self::Loop => "LOOP",
            Self::InTree => "IN_TREE",
            Self::Detached => "DETACHED",
        }
    }
}

/// A tree grown from the source, kept acyclic and connected.
#[derive(Debug, Clone)]
pub struct PartialTree {
    source: usize,
    edges: Vec<usize>,
    edge_in: Vec<bool>,
    node_in: Vec<bool>,
    sets: DisjointSets,
}

impl PartialTree {
    pub fn new(topo: &Topology, source: usize) -> Self {
        let mut node_in = vec![false; topo.node_count()];
        node_in[source] = true;
        Self {
            source,
            edges: Vec::new(),
            edge_in: vec![false; topo.edge_count()],
            node_in,
            sets: DisjointSets::new(topo.node_count()),
        }
    }

    /// Rebuilds a tree by replaying `edges` in order; each must be joinable.
    pub fn from_edges(topo: &Topology, source: usize, edges: &[usize]) -> Result<Self> {
        let mut tree = Self::new(topo, source);
        for &e in edges {
            if e >= topo.edge_count() {
                return Err(Error::Invalid(format!("edge index {e} out of range")));
            }
            let case = tree.classify(topo, e);
            if case != ActionCase::Joinable {
                return Err(Error::Invalid(format!("edge {e} is {} for the tree so far", case.as_str())));
            }
            tree.add(topo, e);
        }
        Ok(tree)
    }

    /// Rebuilds a tree from an unordered edge set. Each pass adds, in
    /// ascending index order, every remaining edge that touches the tree.
    pub fn from_edge_set(topo: &Topology, source: usize, edges: &[usize]) -> Result<Self> {
        let mut tree = Self::new(topo, source);
        let mut pending: Vec<usize> = edges.to_vec();
        pending.sort_unstable();
        pending.dedup();
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for e in pending {
                if e >= topo.edge_count() {
                    return Err(Error::Invalid(format!("edge index {e} out of range")));
                }
                match tree.classify(topo, e) {
                    ActionCase::Joinable => tree.add(topo, e),
                    ActionCase::Loop => {
                        return Err(Error::Invalid(format!("edge set contains a cycle through edge {e}")))
                    }
                    _ => rest.push(e),
                }
            }
            if rest.len() == before {
                return Err(Error::Invalid("edge set is not connected to the source".into()));
            }
            pending = rest;
        }
        Ok(tree)
    }

    pub fn source(&self) -> usize {
        self.source
    }

    /// Edges in insertion order.
    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn contains_node(&self, node: usize) -> bool {
        self.node_in[node]
    }

    pub fn contains_edge(&self, edge: usize) -> bool {
        self.edge_in[edge]
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.node_in.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn classify(&self, topo: &Topology, edge: usize) -> ActionCase {
        if self.edge_in[edge] {
            return ActionCase::InTree;
        }
        let l = topo.link(edge);
        match (self.node_in[l.a], self.node_in[l.b]) {
            (true, true) => ActionCase::Loop,
            (false, false) => ActionCase::Detached,
            _ => ActionCase::Joinable,
        }
    }

    /// Adds a joinable edge. Panics if the edge would break the tree shape.
    fn add(&mut self, topo: &Topology, edge: usize) {
        let l = topo.link(edge);
        assert!(
            self.node_in[l.a] != self.node_in[l.b],
            "edge {edge} does not touch the tree at exactly one node"
        );
        assert!(self.sets.union(l.a, l.b), "edge {edge} closes a cycle");
        assert!(self.sets.same(l.a, self.source), "edge {edge} is detached from the source");
        self.edges.push(edge);
        self.edge_in[edge] = true;
        self.node_in[l.a] = true;
        self.node_in[l.b] = true;
    }

    pub fn spans(&self, req: &MulticastRequest) -> bool {
        req.destinations.iter().all(|&d| self.node_in[d])
    }
}

pub fn classify_action(topo: &Topology, tree: &PartialTree, edge: usize) -> ActionCase {
    tree.classify(topo, edge)
}

/// The observation: a row-major `4 x n x n` tensor. Channel 0 is the tree
/// state, channels 1..3 the normalized bandwidth, delay and loss matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub nodes: usize,
    pub tensor: Vec<f32>,
}

impl EnvState {
    pub fn channel(&self, c: usize) -> &[f32] {
        let nn = self.nodes * self.nodes;
        &self.tensor[c * nn..(c + 1) * nn]
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.tensor[(c * self.nodes + i) * self.nodes + j]
    }
}

/// Encodes a tree (possibly complete) for a request over a snapshot.
pub fn encode_state(topo: &Topology, snap: &NliSnapshot, req: &MulticastRequest, tree: &PartialTree) -> EnvState {
    let n = topo.node_count();
    let mut tensor = vec![0.0f32; 4 * n * n];
    for (c, m) in [&snap.norm_bw, &snap.norm_delay, &snap.norm_loss].into_iter().enumerate() {
        let off = (c + 1) * n * n;
        for (dst, &v) in tensor[off..off + n * n].iter_mut().zip(m.iter()) {
            *dst = v as f32;
        }
    }
    write_tree_channel(topo, req, tree, &mut tensor[..n * n]);
    EnvState { nodes: n, tensor }
}

fn write_tree_channel(topo: &Topology, req: &MulticastRequest, tree: &PartialTree, out: &mut [f32]) {
    let n = topo.node_count();
    out.fill(0.0);
    for link in topo.links() {
        let tag = match tree.classify(topo, link.index) {
            ActionCase::InTree => TAG_TREE,
            ActionCase::Joinable => TAG_BRANCH,
            _ => continue,
        };
        out[link.a * n + link.b] = tag;
        out[link.b * n + link.a] = tag;
    }
    out[req.source * n + req.source] = TAG_SOURCE;
    for &d in &req.destinations {
        out[d * n + d] = TAG_DEST;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EpisodeStatus {
    Running,
    /// Every destination joined.
    Terminal,
    /// The invalid-action budget ran out.
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub case: ActionCase,
    pub reward: f64,
    pub done: bool,
    pub status: EpisodeStatus,
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub action_edge: usize,
    pub case: ActionCase,
    pub reward: f64,
    pub tree_edges: Vec<usize>,
    pub done: bool,
}

pub struct MulticastEnv<'a> {
    topo: &'a Topology,
    snap: &'a NliSnapshot,
    req: MulticastRequest,
    cfg: RewardConfig,
    tree: PartialTree,
    state: EnvState,
    status: EpisodeStatus,
    steps: usize,
    traps: usize,
    trap_budget: usize,
    trace: Option<Vec<TraceRecord>>,
}

impl<'a> MulticastEnv<'a> {
    pub fn new(topo: &'a Topology, snap: &'a NliSnapshot, req: MulticastRequest, cfg: RewardConfig) -> Result<Self> {
        if snap.node_count() != topo.node_count() || snap.edge_count != topo.edge_count() {
            return Err(Error::Shape {
                what: "snapshot".into(),
                expected: format!("n={}, m={}", topo.node_count(), topo.edge_count()),
                actual: format!("n={}, m={}", snap.node_count(), snap.edge_count),
            });
        }
        cfg.validate()?;
        let tree = PartialTree::new(topo, req.source);
        let state = encode_state(topo, snap, &req, &tree);
        Ok(Self {
            topo,
            snap,
            req,
            cfg,
            tree,
            state,
            status: EpisodeStatus::Running,
            steps: 0,
            traps: 0,
            trap_budget: TRAP_BUDGET_PER_EDGE * topo.edge_count(),
            trace: None,
        })
    }

    /// Returns to the single-node tree `{source}`.
    pub fn reset(&mut self) -> &EnvState {
        self.tree = PartialTree::new(self.topo, self.req.source);
        let n = self.topo.node_count();
        write_tree_channel(self.topo, &self.req, &self.tree, &mut self.state.tensor[..n * n]);
        self.status = EpisodeStatus::Running;
        self.steps = 0;
        self.traps = 0;
        if let Some(t) = &mut self.trace {
            t.clear();
        }
        &self.state
    }

    pub fn set_trap_budget(&mut self, budget: usize) {
        self.trap_budget = budget;
    }

    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for r in self.trace() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// The current observation. After a terminal step this still shows the
    /// completed tree.
    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn tree(&self) -> &PartialTree {
        &self.tree
    }

    pub fn request(&self) -> &MulticastRequest {
        &self.req
    }

    pub fn snapshot(&self) -> &NliSnapshot {
        self.snap
    }

    pub fn topology(&self) -> &Topology {
        self.topo
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.cfg
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn traps(&self) -> usize {
        self.traps
    }

    pub fn step(&mut self, edge: usize) -> Result<StepResult> {
        if self.status != EpisodeStatus::Running {
            return Err(Error::Env(format!("step on a finished episode ({:?})", self.status)));
        }
        if edge >= self.topo.edge_count() {
            return Err(Error::Env(format!("action {edge} out of range 0..{}", self.topo.edge_count())));
        }
        self.steps += 1;
        let case = self.tree.classify(self.topo, edge);
        let (reward, done) = if case == ActionCase::Joinable {
            self.tree.add(self.topo, edge);
            let n = self.topo.node_count();
            write_tree_channel(self.topo, &self.req, &self.tree, &mut self.state.tensor[..n * n]);
            if self.tree.spans(&self.req) {
                self.status = EpisodeStatus::Terminal;
                let r = reward_finish(self.topo, &self.req, self.tree.edges(), self.snap, &self.cfg)?;
                (r, true)
            } else {
                let r = self.cfg.step_scale * reward_step(self.topo.link(edge), self.snap, &self.cfg);
                (r, false)
            }
        } else {
            self.traps += 1;
            if self.traps > self.trap_budget {
                self.status = EpisodeStatus::Truncated;
            }
            (self.cfg.r_trap, self.status == EpisodeStatus::Truncated)
        };
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord {
                t: self.steps - 1,
                action_edge: edge,
                case,
                reward,
                tree_edges: self.tree.edges().to_vec(),
                done,
            });
        }
        Ok(StepResult {
            case,
            reward,
            done,
            status: self.status,
        })
    }
}
