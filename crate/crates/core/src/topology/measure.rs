//! Link metrics from polled port counters and timestamped probes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative statistics of one switch port.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PortCounters {
    pub tx_bytes: u64,
    pub rx_bytes: u64,
    pub tx_packets: u64,
    pub rx_packets: u64,
    /// Seconds the port statistics have been valid for.
    pub duration_s: f64,
}

/// One poll of both ports of link `(i, j)`: `near` sits on `i` facing `j`,
/// `far` on `j` facing `i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub near: PortCounters,
    pub far: PortCounters,
}

/// Probe timings for one link, all in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeTimings {
    pub lldp1_ms: f64,
    pub lldp2_ms: f64,
    pub echo1_ms: f64,
    pub echo2_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMeasurement {
    /// Instantaneous throughput `bw_u`, Mbps.
    pub throughput_mbps: f64,
    /// Residual bandwidth `capacity - bw_u`, floored at zero.
    pub residual_mbps: f64,
    /// Worse of the two directional loss ratios, in `[0, 1]`.
    pub loss: f64,
    pub delay_ms: f64,
}

const BYTES_PER_SEC_TO_MBPS: f64 = 8.0 / 1e6;

fn delta(later: u64, earlier: u64, what: &str) -> Result<u64> {
    later
        .checked_sub(earlier)
        .ok_or_else(|| Error::Measurement(format!("{what} counter went backwards ({earlier} -> {later})")))
}

fn direction_loss(sent: u64, received: u64) -> f64 {
    if sent == 0 {
        return 0.0;
    }
    ((sent as f64 - received as f64) / sent as f64).clamp(0.0, 1.0)
}

/// Computes residual bandwidth, loss and delay of a link from two counter
/// polls `c1` (earlier) and `c2` (later).
pub fn measure_link(
    c1: &LinkCounters,
    c2: &LinkCounters,
    probes: &ProbeTimings,
    capacity_mbps: f64,
) -> Result<LinkMeasurement> {
    let window = c2.near.duration_s - c1.near.duration_s;
    if !(window > 0.0) {
        return Err(Error::Measurement(format!(
            "window must be positive, got {window} s"
        )));
    }
    let bytes1 = c1.near.tx_bytes as f64 + c1.near.rx_bytes as f64;
    let bytes2 = c2.near.tx_bytes as f64 + c2.near.rx_bytes as f64;
    let throughput_mbps = (bytes2 - bytes1).abs() / window * BYTES_PER_SEC_TO_MBPS;
    let residual_mbps = (capacity_mbps - throughput_mbps).max(0.0);

    let tp_i = delta(c2.near.tx_packets, c1.near.tx_packets, "near tx_packets")?;
    let rp_i = delta(c2.near.rx_packets, c1.near.rx_packets, "near rx_packets")?;
    let tp_j = delta(c2.far.tx_packets, c1.far.tx_packets, "far tx_packets")?;
    let rp_j = delta(c2.far.rx_packets, c1.far.rx_packets, "far rx_packets")?;
    let loss = direction_loss(tp_i, rp_j).max(direction_loss(tp_j, rp_i));

    let delay_ms =
        ((probes.lldp1_ms + probes.lldp2_ms - probes.echo1_ms - probes.echo2_ms) / 2.0).max(0.0);

    Ok(LinkMeasurement {
        throughput_mbps,
        residual_mbps,
        loss,
        delay_ms,
    })
}
