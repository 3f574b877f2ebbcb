//! Seeded synthetic traffic matrices.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Offered load between node pairs, Kbit/s. Element `(i, j)` is traffic sent
/// from `i` to `j`; the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    pub demand_kbps: Array2<f64>,
}

impl TrafficMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            demand_kbps: Array2::zeros((n, n)),
        }
    }

    pub fn node_count(&self) -> usize {
        self.demand_kbps.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.demand_kbps.nrows() != self.demand_kbps.ncols() {
            return Err(Error::Invalid("traffic matrix is not square".into()));
        }
        if let Some(bad) = self.demand_kbps.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::Invalid(format!("demand must be finite and nonnegative, got {bad}")));
        }
        Ok(())
    }

    /// Mean traffic sent by each node, Kbit/s.
    pub fn node_means(&self) -> Vec<f64> {
        let n = self.node_count();
        self.demand_kbps
            .rows()
            .into_iter()
            .map(|r| r.sum() / (n.saturating_sub(1).max(1)) as f64)
            .collect()
    }
}

/// `count` gravity-model matrices with a diurnal swing across the sequence.
///
/// Each node gets a fixed weight `w_i ~ U(0.5, 1.5)`; demand `(i, j)` at step
/// `t` is `mean_kbps * w_i * w_j * diurnal(t) * U(0.5, 1.5)`, where the
/// diurnal factor follows one sine period over 24 steps between 0.5 and 1.5.
pub fn synthetic_traffic(n: usize, count: usize, mean_kbps: f64, seed: u64) -> Vec<TrafficMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    (0..count)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * (t % 24) as f64 / 24.0;
            let diurnal = 1.0 - 0.5 * phase.cos();
            let mut tm = TrafficMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let noise: f64 = rng.random_range(0.5..1.5);
                        tm.demand_kbps[[i, j]] = mean_kbps * weights[i] * weights[j] * diurnal * noise;
                    }
                }
            }
            tm
        })
        .collect()
}
