//! Experiment plumbing behind the command-line tool: run configuration,
//! snapshot generation, training, evaluation against the baselines, flow-table
//! installation, timing sweeps and oracle fixtures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::agent::{self, greedy_rollout, load_checkpoint, save_checkpoint, NetShape, RolloutStatus, TrainConfig};
use crate::baselines::{exact_steiner_oracle, kmb, Objective, OracleFixture, WeightRegime, ORACLE_EDGE_LIMIT};
use crate::env::{finish_terms, tree_metrics, MulticastRequest, RewardConfig, RewardRatio, TreeMetrics};
use crate::error::{Error, Result};
use crate::flowtable::{
    build_route_dict, emit_flow_entries, install_edges, prune_redundant, replay_reachability, write_flow_entries,
    FlowEntry, PortMap,
};
use crate::topology::{generate_snapshots, synthetic_traffic, NliSnapshot, SimConfig, SnapshotSet, Topology};

/// Everything a command needs. Built from defaults, then a `key = value`
/// config file, then command-line flags, each overriding the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `None` selects the bundled 14-node topology.
    pub topology: Option<PathBuf>,
    /// Defaults to `<out>/snapshots.jsonl`.
    pub snapshots: Option<PathBuf>,
    pub source: usize,
    pub dests: Vec<usize>,
    pub seed: u64,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    /// Snapshot indices used for training; all when `None`.
    pub train_on: Option<Vec<usize>>,
    /// Snapshot indices used by evaluate and oracle; all when `None`.
    pub eval: Option<Vec<usize>>,
    pub out: PathBuf,
    /// Snapshots written by simulate.
    pub count: usize,
    pub mean_kbps: f64,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            topology: None,
            snapshots: None,
            source: 12,
            dests: vec![2, 4, 11],
            seed: 0,
            reward: RewardConfig::default().with_ratio(RewardRatio { finish: 1.0, step: 0.01 }),
            train: TrainConfig::default(),
            train_on: None,
            eval: None,
            out: PathBuf::from("out"),
            count: 24,
            mean_kbps: 120.0,
            sim: SimConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value {value:?} for {key}")))
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Sets one option by name. Names match the long flags without dashes;
    /// `-` and `_` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "topology" => self.topology = Some(PathBuf::from(v)),
            "snapshots" => self.snapshots = Some(PathBuf::from(v)),
            "source" => self.source = parse(&key, v)?,
            "dests" => self.dests = parse_list(&key, v)?,
            "seed" => self.seed = parse(&key, v)?,
            "ratio" => self.reward = self.reward.with_ratio(v.parse::<RewardRatio>()?),
            "r-trap" => self.reward.r_trap = parse(&key, v)?,
            "beta" => {
                let b: Vec<f64> = v.split(',').map(|s| parse(&key, s)).collect::<Result<_>>()?;
                self.reward.beta = b
                    .try_into()
                    .map_err(|_| Error::Invalid("beta takes three comma-separated weights".into()))?;
            }
            "episodes" => self.train.episodes = parse(&key, v)?,
            "lr" => self.train.learning_rate = parse(&key, v)?,
            "batch" => self.train.batch_size = parse(&key, v)?,
            "gamma" => self.train.gamma = parse(&key, v)?,
            "nstep" => self.train.n_step = parse(&key, v)?,
            "target-update" => self.train.target_update = parse(&key, v)?,
            "eps-start" => self.train.eps_start = parse(&key, v)?,
            "eps-final" => self.train.eps_final = parse(&key, v)?,
            "eps-decay" => self.train.eps_decay = parse(&key, v)?,
            "replay-capacity" => self.train.per_capacity = parse(&key, v)?,
            "net" => {
                self.train.net = match v {
                    "default" => NetShape::default(),
                    "desk" => NetShape::desk(),
                    other => {
                        let dims = parse_list(&key, other)?;
                        match dims[..] {
                            [c, f1, f2] => NetShape {
                                conv_channels: c,
                                fc1: f1,
                                fc2: f2,
                            },
                            _ => return Err(Error::Invalid("net is `default`, `desk` or `C,FC1,FC2`".into())),
                        }
                    }
                }
            }
            "train-on" => self.train_on = Some(parse_list(&key, v)?),
            "eval" => self.eval = Some(parse_list(&key, v)?),
            "out" => self.out = PathBuf::from(v),
            "count" => self.count = parse(&key, v)?,
            "mean-kbps" => self.mean_kbps = parse(&key, v)?,
            _ => return Err(Error::Invalid(format!("unknown option {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a
    /// comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Invalid(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.apply_text(&fs::read_to_string(path)?)
    }

    pub fn snapshots_path(&self) -> PathBuf {
        self.snapshots.clone().unwrap_or_else(|| self.out.join("snapshots.jsonl"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("checkpoint.json")
    }

    pub fn load_topology(&self) -> Result<Topology> {
        match &self.topology {
            Some(p) => Topology::load(p),
            None => Ok(Topology::bundled()),
        }
    }

    pub fn request(&self, topo: &Topology) -> Result<MulticastRequest> {
        MulticastRequest::new(topo, self.source, &self.dests)
    }

    /// The training configuration with this run's seed and reward settings.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            reward: self.reward,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.topology {
            if !p.is_file() {
                return Err(Error::Invalid(format!("topology file {} not found", p.display())));
            }
        }
        if self.dests.is_empty() {
            return Err(Error::Invalid("at least one destination is required".into()));
        }
        self.train_config().validate()
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn record(&self, name: &str) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(name), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

fn load_store(cfg: &RunConfig, topo: &Topology) -> Result<SnapshotSet> {
    let path = cfg.snapshots_path();
    let set = SnapshotSet::load(&path)
        .map_err(|e| Error::Invalid(format!("cannot read snapshot store {}: {e}", path.display())))?;
    set.check_against(topo)?;
    if set.is_empty() {
        return Err(Error::Invalid(format!("snapshot store {} is empty", path.display())));
    }
    Ok(set)
}

fn select<'a>(set: &'a SnapshotSet, indices: &Option<Vec<usize>>) -> Result<Vec<(usize, &'a NliSnapshot)>> {
    match indices {
        None => Ok(set.snapshots.iter().enumerate().collect()),
        Some(list) => list
            .iter()
            .map(|&i| {
                set.snapshots
                    .get(i)
                    .map(|s| (i, s))
                    .ok_or_else(|| Error::Invalid(format!("snapshot index {i} out of range 0..{}", set.len())))
            })
            .collect(),
    }
}

/// Minimum, mean and maximum of one metric over all links and snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Generates snapshots from seeded synthetic traffic.
pub fn simulate(topo: &Topology, cfg: &RunConfig) -> Result<SnapshotSet> {
    let tms = synthetic_traffic(topo.node_count(), cfg.count, cfg.mean_kbps, cfg.seed);
    Ok(SnapshotSet::new(generate_snapshots(topo, &tms, cfg.seed, &cfg.sim)?))
}

pub fn summarize(topo: &Topology, set: &SnapshotSet) -> Vec<MetricSummary> {
    let states: Vec<_> = set.snapshots.iter().flat_map(|s| s.link_states(topo)).collect();
    let stat = |metric, f: fn(&crate::topology::snapshot::LinkState) -> f64| {
        let values: Vec<f64> = states.iter().map(f).collect();
        MetricSummary {
            metric,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    };
    vec![stat("bw", |s| s.bw), stat("delay", |s| s.delay), stat("loss", |s| s.loss)]
}

/// Writes the snapshot store (JSON lines) and a per-link CSV beside it.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<MetricSummary>> {
    cfg.validate()?;
    let topo = cfg.load_topology()?;
    let set = simulate(&topo, cfg)?;
    let path = cfg.snapshots_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    set.save(&path)?;
    set.write_csv(&topo, fs::File::create(path.with_extension("csv"))?)?;
    cfg.record("simulate_config.json")?;
    for s in &set.snapshots {
        for w in &s.warnings {
            log::warn!("snapshot {}: {w}", s.timestamp_index);
        }
    }
    Ok(summarize(&topo, &set))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub episodes: usize,
    pub snapshots: usize,
    pub learner_steps: u64,
    pub truncated_runs: usize,
    pub seconds: f64,
}

/// Trains on the selected snapshots and writes `train_log.csv`,
/// `checkpoint.json` and `train_config.json` to the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let topo = cfg.load_topology()?;
    let req = cfg.request(&topo)?;
    let set = load_store(cfg, &topo)?;
    let snaps: Vec<NliSnapshot> = select(&set, &cfg.train_on)?.into_iter().map(|(_, s)| s.clone()).collect();
    let tc = cfg.train_config();
    cfg.record("train_config.json")?;
    let start = Instant::now();
    let outcome = agent::train(&topo, &snaps, &req, &tc)?;
    let seconds = start.elapsed().as_secs_f64();
    agent::write_train_log(&outcome.log, fs::File::create(cfg.out.join("train_log.csv"))?)?;
    save_checkpoint(&outcome.policy, &tc, &topo, cfg.checkpoint_path())?;
    info!("trained {} episodes in {seconds:.1}s", tc.episodes);
    Ok(TrainSummary {
        episodes: tc.episodes,
        snapshots: snaps.len(),
        learner_steps: outcome.learner_steps,
        truncated_runs: outcome.truncated_runs,
        seconds,
    })
}

pub const METHOD_DRL: &str = "DRL";
pub const METHOD_ORACLE: &str = "oracle";

/// One row of the evaluation table. Metric cells are empty when the method
/// produced no tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub snapshot: usize,
    pub method: String,
    pub bw_tree: Option<f64>,
    pub delay_tree: Option<f64>,
    pub loss_tree: Option<f64>,
    pub length: Option<usize>,
    pub redundancy: Option<usize>,
    pub reward: Option<f64>,
    /// Decisions taken to build the tree.
    #[serde(skip)]
    pub steps: Option<usize>,
}

impl EvalRow {
    fn empty(snapshot: usize, method: &str) -> Self {
        Self {
            snapshot,
            method: method.to_string(),
            bw_tree: None,
            delay_tree: None,
            loss_tree: None,
            length: None,
            redundancy: None,
            reward: None,
            steps: None,
        }
    }

    fn filled(snapshot: usize, method: &str, m: &TreeMetrics, redundancy: usize, reward: f64, steps: usize) -> Self {
        Self {
            bw_tree: Some(m.bw_tree),
            delay_tree: Some(m.delay_tree),
            loss_tree: Some(m.loss_tree),
            length: Some(m.length),
            redundancy: Some(redundancy),
            reward: Some(reward),
            steps: Some(steps),
            ..Self::empty(snapshot, method)
        }
    }
}

/// The agent's tree after pruning, with the number of edges pruning removed.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedTree {
    pub edges: Vec<usize>,
    pub dropped: usize,
    pub steps: usize,
}

/// Greedy rollout followed by redundant-branch pruning; `None` when the
/// rollout does not converge.
pub fn drl_tree(
    policy: &crate::nn::QNetwork<f32>,
    topo: &Topology,
    req: &MulticastRequest,
    snap: &NliSnapshot,
    reward: &RewardConfig,
) -> Result<Option<PrunedTree>> {
    let rollout = greedy_rollout(policy, topo, req, snap, reward)?;
    if rollout.status != RolloutStatus::Converged {
        return Ok(None);
    }
    let route = build_route_dict(topo, &rollout.tree_edges, req)?;
    let edges = install_edges(topo, &prune_redundant(&route, req)?)?;
    Ok(Some(PrunedTree {
        dropped: rollout.tree_edges.len() - edges.len(),
        edges,
        steps: rollout.actions.len(),
    }))
}

/// Scores DRL, the three KMB variants and the oracle on each snapshot. The
/// reward column is the finish reward of the (pruned) tree under `reward`.
pub fn evaluate_policy(
    policy: &crate::nn::QNetwork<f32>,
    topo: &Topology,
    req: &MulticastRequest,
    snaps: &[(usize, &NliSnapshot)],
    reward: &RewardConfig,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(snaps.len() * 5);
    for &(index, snap) in snaps {
        match drl_tree(policy, topo, req, snap, reward)? {
            Some(t) => {
                let f = finish_terms(topo, req, &t.edges, snap, reward)?;
                rows.push(EvalRow::filled(index, METHOD_DRL, &f.metrics, t.dropped, f.value, t.steps));
            }
            None => rows.push(EvalRow::empty(index, METHOD_DRL)),
        }
        for regime in WeightRegime::ALL {
            let tree = kmb(topo, snap, regime, req)?;
            let f = finish_terms(topo, req, &tree.edges, snap, reward)?;
            let len = tree.edges.len();
            rows.push(EvalRow::filled(index, regime.label(), &f.metrics, 0, f.value, len));
        }
        if topo.edge_count() <= ORACLE_EDGE_LIMIT {
            let best = exact_steiner_oracle(topo, snap, req, &Objective::Finish(*reward))?;
            let len = best.edges.len();
            rows.push(EvalRow::filled(index, METHOD_ORACLE, &best.metrics, 0, best.value, len));
        } else {
            rows.push(EvalRow::empty(index, METHOD_ORACLE));
        }
    }
    Ok(rows)
}

pub fn write_csv_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-method means over snapshots where the method produced a tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub ratio: String,
    pub snapshots: usize,
    pub converged: usize,
    pub bw_tree: Option<f64>,
    pub delay_tree: Option<f64>,
    pub loss_tree: Option<f64>,
    pub length: Option<f64>,
    pub steps: Option<f64>,
    pub redundancy: Option<f64>,
    pub reward: Option<f64>,
}

pub fn aggregate(rows: &[EvalRow], ratio: RewardRatio) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let all: Vec<&EvalRow> = rows.iter().filter(|r| r.method == method).collect();
            let done: Vec<&EvalRow> = all.iter().copied().filter(|r| r.reward.is_some()).collect();
            let mean = |f: &dyn Fn(&EvalRow) -> Option<f64>| {
                let v: Vec<f64> = done.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            AggregateRow {
                method: method.to_string(),
                ratio: ratio.to_string(),
                snapshots: all.len(),
                converged: done.len(),
                bw_tree: mean(&|r| r.bw_tree),
                delay_tree: mean(&|r| r.delay_tree),
                loss_tree: mean(&|r| r.loss_tree),
                length: mean(&|r| r.length.map(|x| x as f64)),
                steps: mean(&|r| r.steps.map(|x| x as f64)),
                redundancy: mean(&|r| r.redundancy.map(|x| x as f64)),
                reward: mean(&|r| r.reward),
            }
        })
        .collect()
}

/// Writes `evaluate.csv` (and `aggregate.csv` when asked). Reads the
/// checkpoint and snapshot store without modifying them.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, with_aggregate: bool) -> Result<Vec<EvalRow>> {
    cfg.validate()?;
    let topo = cfg.load_topology()?;
    let req = cfg.request(&topo)?;
    let ck = load_checkpoint(checkpoint, &topo)?;
    let set = load_store(cfg, &topo)?;
    let snaps = select(&set, &cfg.eval)?;
    let reward = ck.cfg.reward;
    let rows = evaluate_policy(&ck.policy, &topo, &req, &snaps, &reward)?;
    cfg.record("evaluate_config.json")?;
    write_csv_rows(&rows, fs::File::create(cfg.out.join("evaluate.csv"))?)?;
    if with_aggregate {
        write_csv_rows(
            &aggregate(&rows, reward.ratio()),
            fs::File::create(cfg.out.join("aggregate.csv"))?,
        )?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstallOutcome {
    pub entries: Vec<FlowEntry>,
    pub dropped: usize,
    pub written: Option<PathBuf>,
}

/// Builds the flow table for one snapshot and checks that every destination
/// receives the packet. Fails when the greedy rollout does not converge.
pub fn cmd_install(cfg: &RunConfig, checkpoint: &Path, snapshot: usize, group: u32, dry_run: bool) -> Result<InstallOutcome> {
    cfg.validate()?;
    let topo = cfg.load_topology()?;
    let req = cfg.request(&topo)?;
    let ck = load_checkpoint(checkpoint, &topo)?;
    let set = load_store(cfg, &topo)?;
    let snap = select(&set, &Some(vec![snapshot]))?[0].1;
    let rollout = greedy_rollout(&ck.policy, &topo, &req, snap, &ck.cfg.reward)?;
    if rollout.status != RolloutStatus::Converged {
        return Err(Error::Flow(format!(
            "rollout on snapshot {snapshot} did not converge: action {} after {} steps does not extend the tree",
            rollout.actions.last().copied().unwrap_or_default(),
            rollout.actions.len()
        )));
    }
    let route = build_route_dict(&topo, &rollout.tree_edges, &req)?;
    let info = prune_redundant(&route, &req)?;
    let ports = PortMap::synthetic(&topo);
    let entries = emit_flow_entries(&info, &ports, &req, group)?;
    let reached = replay_reachability(&entries, &ports, req.source)?;
    if let Some(missed) = req.destinations.iter().find(|d| !reached.contains(d)) {
        return Err(Error::Flow(format!("destination {missed} is unreachable in the emitted table")));
    }
    let dropped = rollout.tree_edges.len() - install_edges(&topo, &info)?.len();
    let written = if dry_run {
        None
    } else {
        fs::create_dir_all(&cfg.out)?;
        let path = cfg.out.join(format!("flows_{snapshot}.json"));
        write_flow_entries(&entries, fs::File::create(&path)?)?;
        Some(path)
    };
    Ok(InstallOutcome {
        entries,
        dropped,
        written,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub nli_count: usize,
    pub seconds: f64,
}

/// Trains a fixed profile once per snapshot count and records wall time.
/// Each count uses the first `count` snapshots of one generated sequence.
pub fn timing(cfg: &RunConfig, counts: &[usize], episodes: usize) -> Result<Vec<TimingRow>> {
    cfg.validate()?;
    let topo = cfg.load_topology()?;
    let req = cfg.request(&topo)?;
    let largest = counts.iter().copied().max().unwrap_or(0);
    let set = simulate(&topo, &RunConfig { count: largest, ..cfg.clone() })?;
    let tc = TrainConfig {
        episodes,
        ..cfg.train_config()
    };
    counts
        .iter()
        .map(|&count| {
            let start = Instant::now();
            agent::train(&topo, &set.snapshots[..count], &req, &tc)?;
            let seconds = start.elapsed().as_secs_f64();
            info!("{count} snapshots: {seconds:.2}s");
            Ok(TimingRow {
                nli_count: count,
                seconds,
            })
        })
        .collect()
}

pub fn cmd_timing(cfg: &RunConfig, counts: &[usize], episodes: usize) -> Result<Vec<TimingRow>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Invalid("timing needs positive snapshot counts".into()));
    }
    let rows = timing(cfg, counts, episodes)?;
    cfg.record("timing_config.json")?;
    write_csv_rows(&rows, fs::File::create(cfg.out.join("timing.csv"))?)?;
    Ok(rows)
}

/// Coefficient of determination of the least-squares line through the
/// points.
pub fn linear_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Oracle optimum of the finish reward for each selected snapshot.
pub fn oracle_fixtures(topo: &Topology, req: &MulticastRequest, snaps: &[(usize, &NliSnapshot)], reward: &RewardConfig) -> Result<Vec<OracleFixture>> {
    let objective = Objective::Finish(*reward);
    snaps
        .iter()
        .map(|&(index, snap)| {
            let best = exact_steiner_oracle(topo, snap, req, &objective)?;
            debug_assert_eq!(tree_metrics(topo, req, &best.edges, snap)?.redundancy, 0);
            Ok(OracleFixture {
                topology_hash: topo.hash(),
                snapshot_index: index,
                request: req.clone(),
                objective,
                best_value: best.value,
                best_edges: best.edges,
            })
        })
        .collect()
}

/// Writes `oracle.json` for the evaluation snapshots.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<Vec<OracleFixture>> {
    cfg.validate()?;
    let topo = cfg.load_topology()?;
    let req = cfg.request(&topo)?;
    let set = load_store(cfg, &topo)?;
    let fixtures = oracle_fixtures(&topo, &req, &select(&set, &cfg.eval)?, &cfg.reward)?;
    fs::create_dir_all(&cfg.out)?;
    OracleFixture::write_all(&fixtures, fs::File::create(cfg.out.join("oracle.json"))?)?;
    Ok(fixtures)
}
