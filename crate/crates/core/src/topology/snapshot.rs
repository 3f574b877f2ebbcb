//! Network link information (NLI) snapshots: generation, normalization and
//! storage.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, warn};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::measure::{measure_link, LinkCounters, PortCounters, ProbeTimings};
use super::traffic::TrafficMatrix;
use super::{Link, Topology};
use crate::error::{Error, Result};

/// Raw-matrix marker for node pairs without a link (and the diagonal).
pub const ABSENT: f64 = -1.0;

/// Parameters of the simulated data plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Gap between the two counter polls, seconds.
    pub measure_interval_s: f64,
    /// Relative jitter applied to per-direction byte counts, `U(-j, j)`.
    pub bw_jitter: f64,
    /// Relative jitter applied to link delay, `U(-j, j)`.
    pub delay_jitter: f64,
    /// Extra delay per unit of utilization, as a fraction of base delay.
    pub delay_load_factor: f64,
    /// Loss slope above the congestion knee.
    pub loss_kappa: f64,
    /// Utilization above which loss starts to rise.
    pub loss_knee: f64,
    /// Upper clamp of the congestion loss term.
    pub loss_cap: f64,
    /// Width of the uniform loss noise `U(0, noise)`.
    pub loss_noise: f64,
    /// Mean packet size used to turn bytes into packet counts.
    pub packet_bytes: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            measure_interval_s: 1.0,
            bw_jitter: 0.02,
            delay_jitter: 0.05,
            delay_load_factor: 0.2,
            loss_kappa: 0.1,
            loss_knee: 0.7,
            loss_cap: 0.05,
            loss_noise: 0.005,
            packet_bytes: 500.0,
        }
    }
}

impl SimConfig {
    /// No jitter and no loss noise; utilization maps exactly onto counters.
    pub fn noiseless() -> Self {
        Self {
            bw_jitter: 0.0,
            delay_jitter: 0.0,
            loss_noise: 0.0,
            ..Self::default()
        }
    }
}

/// One timestep of measured link state.
#[derive(Debug, Clone, PartialEq)]
pub struct NliSnapshot {
    pub seed: u64,
    pub timestamp_index: usize,
    pub edge_count: usize,
    /// Residual bandwidth, Mbps; [`ABSENT`] off-link.
    pub bw: Array2<f64>,
    /// Delay, ms; [`ABSENT`] off-link.
    pub delay: Array2<f64>,
    /// Loss ratio; [`ABSENT`] off-link.
    pub loss: Array2<f64>,
    /// Min-max normalized copies in `[0, 1]`, zero off-link and on the diagonal.
    pub norm_bw: Array2<f64>,
    pub norm_delay: Array2<f64>,
    pub norm_loss: Array2<f64>,
    /// Set per metric (bw, delay, loss) when all links share one value.
    pub degenerate: [bool; 3],
    pub warnings: Vec<String>,
}

/// Raw per-link values of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub bw: f64,
    pub delay: f64,
    pub loss: f64,
}

impl NliSnapshot {
    /// An unnormalized snapshot with every entry set to [`ABSENT`].
    pub fn empty(n: usize, edge_count: usize, seed: u64, timestamp_index: usize) -> Self {
        let absent = Array2::from_elem((n, n), ABSENT);
        Self {
            seed,
            timestamp_index,
            edge_count,
            bw: absent.clone(),
            delay: absent.clone(),
            loss: absent,
            norm_bw: Array2::zeros((n, n)),
            norm_delay: Array2::zeros((n, n)),
            norm_loss: Array2::zeros((n, n)),
            degenerate: [false; 3],
            warnings: Vec::new(),
        }
    }

    /// Builds a normalized snapshot directly from per-edge values (indexed
    /// like `topo.links()`).
    pub fn from_links(topo: &Topology, values: &[LinkState]) -> Self {
        assert_eq!(values.len(), topo.edge_count(), "one value per link");
        let mut snap = Self::empty(topo.node_count(), topo.edge_count(), 0, 0);
        for (link, v) in topo.links().iter().zip(values) {
            snap.set_link(link, *v);
        }
        normalize_nli(&mut snap);
        snap
    }

    pub fn node_count(&self) -> usize {
        self.bw.nrows()
    }

    fn set_link(&mut self, link: &Link, v: LinkState) {
        let (a, b) = link.endpoints();
        for (i, j) in [(a, b), (b, a)] {
            self.bw[[i, j]] = v.bw;
            self.delay[[i, j]] = v.delay;
            self.loss[[i, j]] = v.loss;
        }
    }

    pub fn link_state(&self, link: &Link) -> LinkState {
        let (a, b) = link.endpoints();
        LinkState {
            bw: self.bw[[a, b]],
            delay: self.delay[[a, b]],
            loss: self.loss[[a, b]],
        }
    }

    /// Normalized `(bw, delay, loss)` of a link.
    pub fn normalized(&self, link: &Link) -> (f64, f64, f64) {
        let (a, b) = link.endpoints();
        (self.norm_bw[[a, b]], self.norm_delay[[a, b]], self.norm_loss[[a, b]])
    }

    /// Raw values over every link, in edge-index order.
    pub fn link_states(&self, topo: &Topology) -> Vec<LinkState> {
        topo.links().iter().map(|l| self.link_state(l)).collect()
    }
}

/// Fills the normalized matrices: per metric, `(x - min) / (max - min)` over
/// existing links. A metric whose links all share one value normalizes to 0
/// and is flagged degenerate.
pub fn normalize_nli(snap: &mut NliSnapshot) {
    let n = snap.node_count();
    let raws = [&snap.bw, &snap.delay, &snap.loss];
    let mut outs = [
        Array2::zeros((n, n)),
        Array2::zeros((n, n)),
        Array2::zeros((n, n)),
    ];
    let mut degenerate = [false; 3];
    for (k, raw) in raws.iter().enumerate() {
        let present = || {
            raw.indexed_iter()
                .filter(|((i, j), v)| i != j && **v >= 0.0)
        };
        let (lo, hi) = present().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| {
            (lo.min(v), hi.max(v))
        });
        let range = hi - lo;
        if !(range > 0.0) {
            degenerate[k] = true;
            debug!("metric {k} has zero range at t={}; normalized to 0", snap.timestamp_index);
            continue;
        }
        for ((i, j), &v) in present() {
            outs[k][[i, j]] = (v - lo) / range;
        }
    }
    let [b, d, l] = outs;
    snap.norm_bw = b;
    snap.norm_delay = d;
    snap.norm_loss = l;
    snap.degenerate = degenerate;
}

fn jitter(rng: &mut ChaCha8Rng, width: f64) -> f64 {
    if width > 0.0 {
        rng.random_range(-width..width)
    } else {
        0.0
    }
}

/// Per-link directional load in Mbps after routing every demand along its
/// minimum-hop path. Index `[e][0]` is `a -> b`, `[e][1]` is `b -> a`.
pub fn route_demands(topo: &Topology, tm: &TrafficMatrix) -> Vec<[f64; 2]> {
    let n = topo.node_count();
    let mut load = vec![[0.0; 2]; topo.edge_count()];
    for src in 0..n {
        for dst in 0..n {
            let d = tm.demand_kbps[[src, dst]];
            if src == dst || d <= 0.0 {
                continue;
            }
            let mut at = src;
            for e in topo.hop_path(src, dst) {
                let link = topo.link(e);
                let dir = usize::from(at != link.a);
                load[e][dir] += d / 1000.0;
                at = link.other(at).expect("path is contiguous");
            }
        }
    }
    load
}

/// Simulates one measurement round per traffic matrix and returns normalized
/// snapshots in input order. Snapshot `t` draws from ChaCha stream `t` of
/// `seed`, so output is a pure function of the arguments.
pub fn generate_snapshots(
    topo: &Topology,
    tms: &[TrafficMatrix],
    seed: u64,
    cfg: &SimConfig,
) -> Result<Vec<NliSnapshot>> {
    if tms.is_empty() {
        return Err(Error::Invalid("no traffic matrices".into()));
    }
    if !(cfg.measure_interval_s > 0.0) {
        return Err(Error::Invalid("measure_interval_s must be positive".into()));
    }
    tms.iter()
        .enumerate()
        .map(|(t, tm)| {
            tm.validate()?;
            if tm.node_count() != topo.node_count() {
                return Err(Error::Invalid(format!(
                    "traffic matrix {t} is {0}x{0}, topology has {1} nodes",
                    tm.node_count(),
                    topo.node_count()
                )));
            }
            simulate_round(topo, tm, seed, t, cfg)
        })
        .collect()
}

fn simulate_round(
    topo: &Topology,
    tm: &TrafficMatrix,
    seed: u64,
    t: usize,
    cfg: &SimConfig,
) -> Result<NliSnapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    let mut snap = NliSnapshot::empty(topo.node_count(), topo.edge_count(), seed, t);
    let loads = route_demands(topo, tm);
    let bytes_per_mbps = 1e6 / 8.0 * cfg.measure_interval_s;

    for (link, load) in topo.links().iter().zip(loads) {
        let cap = link.capacity_mbps;
        let mut load = load;
        let offered = load[0] + load[1];
        if offered > cap {
            let msg = format!(
                "t={t} link {} ({},{}): offered {offered:.3} Mbps exceeds capacity {cap} Mbps; clamped",
                link.index, link.a, link.b
            );
            warn!("{msg}");
            snap.warnings.push(msg);
            let scale = cap / offered;
            load = [load[0] * scale, load[1] * scale];
        }
        let util = (load[0] + load[1]) / cap;

        let loss_rate = (cfg.loss_kappa * (util - cfg.loss_knee).max(0.0)).clamp(0.0, cfg.loss_cap)
            + if cfg.loss_noise > 0.0 {
                rng.random_range(0.0..cfg.loss_noise)
            } else {
                0.0
            };

        let mut bytes = [0u64; 2];
        let mut sent = [0u64; 2];
        let mut received = [0u64; 2];
        for dir in 0..2 {
            let b = load[dir] * bytes_per_mbps * (1.0 + jitter(&mut rng, cfg.bw_jitter));
            bytes[dir] = b.max(0.0).round() as u64;
            sent[dir] = (bytes[dir] as f64 / cfg.packet_bytes).round() as u64;
            received[dir] = sent[dir] - (sent[dir] as f64 * loss_rate).round() as u64;
        }

        let start = rng.random_range(10.0..1000.0);
        let base = |rng: &mut ChaCha8Rng| rng.random_range(0..1_000_000_000u64);
        let c1 = LinkCounters {
            near: PortCounters {
                tx_bytes: base(&mut rng),
                rx_bytes: base(&mut rng),
                tx_packets: base(&mut rng),
                rx_packets: base(&mut rng),
                duration_s: start,
            },
            far: PortCounters {
                tx_bytes: base(&mut rng),
                rx_bytes: base(&mut rng),
                tx_packets: base(&mut rng),
                rx_packets: base(&mut rng),
                duration_s: start,
            },
        };
        let end = start + cfg.measure_interval_s;
        let c2 = LinkCounters {
            near: PortCounters {
                tx_bytes: c1.near.tx_bytes + bytes[0],
                rx_bytes: c1.near.rx_bytes + bytes[1],
                tx_packets: c1.near.tx_packets + sent[0],
                rx_packets: c1.near.rx_packets + received[1],
                duration_s: end,
            },
            far: PortCounters {
                tx_bytes: c1.far.tx_bytes + bytes[1],
                rx_bytes: c1.far.rx_bytes + bytes[0],
                tx_packets: c1.far.tx_packets + sent[1],
                rx_packets: c1.far.rx_packets + received[0],
                duration_s: end,
            },
        };

        let target_delay = link.base_delay_ms
            * (1.0 + cfg.delay_load_factor * util)
            * (1.0 + jitter(&mut rng, cfg.delay_jitter));
        let echo1 = rng.random_range(0.5..3.0);
        let echo2 = rng.random_range(0.5..3.0);
        let skew = rng.random_range(-0.5..0.5);
        let probes = ProbeTimings {
            lldp1_ms: target_delay + (echo1 + echo2) / 2.0 + skew,
            lldp2_ms: target_delay + (echo1 + echo2) / 2.0 - skew,
            echo1_ms: echo1,
            echo2_ms: echo2,
        };

        let m = measure_link(&c1, &c2, &probes, cap)?;
        snap.set_link(
            link,
            LinkState {
                bw: m.residual_mbps,
                delay: m.delay_ms,
                loss: m.loss,
            },
        );
    }
    normalize_nli(&mut snap);
    Ok(snap)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotHeader {
    n: usize,
    m: usize,
    seed: u64,
    timestamp_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotRecord {
    header: SnapshotHeader,
    bw: Vec<f64>,
    delay: Vec<f64>,
    loss: Vec<f64>,
    norm_bw: Vec<f64>,
    norm_delay: Vec<f64>,
    norm_loss: Vec<f64>,
    #[serde(default)]
    degenerate: [bool; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

fn row_major(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn square(n: usize, data: Vec<f64>, what: &str) -> Result<Array2<f64>> {
    let len = data.len();
    Array2::from_shape_vec((n, n), data).map_err(|_| Error::Shape {
        what: what.into(),
        expected: format!("{n}x{n}"),
        actual: format!("{len} values"),
    })
}

/// An ordered list of snapshots, persisted as JSON lines (one snapshot per
/// line, matrices row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub snapshots: Vec<NliSnapshot>,
}

impl SnapshotSet {
    pub fn new(snapshots: Vec<NliSnapshot>) -> Self {
        Self { snapshots }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        for s in &self.snapshots {
            let record = SnapshotRecord {
                header: SnapshotHeader {
                    n: s.node_count(),
                    m: s.edge_count,
                    seed: s.seed,
                    timestamp_index: s.timestamp_index,
                },
                bw: row_major(&s.bw),
                delay: row_major(&s.delay),
                loss: row_major(&s.loss),
                norm_bw: row_major(&s.norm_bw),
                norm_delay: row_major(&s.norm_delay),
                norm_loss: row_major(&s.norm_loss),
                degenerate: s.degenerate,
                warnings: s.warnings.clone(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: std::io::Read>(input: R) -> Result<Self> {
        let mut snapshots = Vec::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SnapshotRecord = serde_json::from_str(&line)?;
            let n = r.header.n;
            snapshots.push(NliSnapshot {
                seed: r.header.seed,
                timestamp_index: r.header.timestamp_index,
                edge_count: r.header.m,
                bw: square(n, r.bw, "bw")?,
                delay: square(n, r.delay, "delay")?,
                loss: square(n, r.loss, "loss")?,
                norm_bw: square(n, r.norm_bw, "norm_bw")?,
                norm_delay: square(n, r.norm_delay, "norm_delay")?,
                norm_loss: square(n, r.norm_loss, "norm_loss")?,
                degenerate: r.degenerate,
                warnings: r.warnings,
            });
        }
        Ok(Self { snapshots })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    /// Checks every snapshot against the topology's node and edge counts.
    pub fn check_against(&self, topo: &Topology) -> Result<()> {
        for s in &self.snapshots {
            if s.node_count() != topo.node_count() || s.edge_count != topo.edge_count() {
                return Err(Error::Shape {
                    what: format!("snapshot {}", s.timestamp_index),
                    expected: format!("n={}, m={}", topo.node_count(), topo.edge_count()),
                    actual: format!("n={}, m={}", s.node_count(), s.edge_count),
                });
            }
        }
        Ok(())
    }

    /// One CSV row per link per snapshot: `t, i, j, bw, delay, loss`.
    pub fn write_csv<W: Write>(&self, topo: &Topology, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "i", "j", "bw", "delay", "loss"])?;
        for s in &self.snapshots {
            for link in topo.links() {
                let v = s.link_state(link);
                w.serialize((s.timestamp_index, link.a, link.b, v.bw, v.delay, v.loss))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
