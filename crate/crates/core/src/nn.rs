//! Dueling Q-network over the `4 x n x n` state image.
//!
//! Two parallel convolution branches (a `5x1` kernel sliding down rows and a
//! `1x5` kernel sliding along columns, same-size padding) are flattened,
//! concatenated and fed through two fully connected layers. The trunk splits
//! into a scalar value head and an `m`-wide advantage head which are combined
//! as `Q = V + (A - mean(A))`. Every convolution and hidden layer is followed
//! by a leaky rectifier; the heads are linear.
//!
//! Gradients are computed by hand. The forward pass keeps a [`ForwardCache`]
//! that [`QNetwork::backward`] consumes.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of input channels: tree state plus three link metrics.
pub const STATE_CHANNELS: usize = 4;
/// Kernel length of both convolution branches.
pub const KERNEL: usize = 5;
const PAD: usize = KERNEL / 2;

/// Floating-point element type of the network (`f32` for training, `f64`
/// for finite-difference checks).
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Layer sizes of the Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Node count; the state is `4 x n x n`.
    pub nodes: usize,
    /// Edge count; one Q value per edge.
    pub actions: usize,
    /// Output channels of each convolution branch.
    pub conv_channels: usize,
    pub fc1: usize,
    pub fc2: usize,
    /// Negative slope of the leaky rectifier.
    pub leak: f64,
}

impl NetSpec {
    pub fn new(nodes: usize, actions: usize) -> Self {
        Self {
            nodes,
            actions,
            conv_channels: 32,
            fc1: 256,
            fc2: 128,
            leak: 0.01,
        }
    }

    pub fn state_len(&self) -> usize {
        STATE_CHANNELS * self.nodes * self.nodes
    }

    fn flat_features(&self) -> usize {
        2 * self.conv_channels * self.nodes * self.nodes
    }
}

/// Which way a convolution kernel extends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelAxis {
    /// `5x1`: spans five rows of one column.
    Rows,
    /// `1x5`: spans five columns of one row.
    Cols,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<F: Real> {
    pub axis: KernelAxis,
    /// `[out_channels, in_channels * KERNEL]`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F: Real> {
    /// `[out, in]`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        layer.weight.mapv_inplace(|_| uniform_fan_in(rng, inputs));
        layer.bias.mapv_inplace(|_| uniform_fan_in(rng, inputs));
        layer
    }

    /// `x [B, in] -> [B, out]`
    fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

impl<F: Real> Conv<F> {
    fn zeros(axis: KernelAxis, out_channels: usize) -> Self {
        Self {
            axis,
            weight: Array2::zeros((out_channels, STATE_CHANNELS * KERNEL)),
            bias: Array1::zeros(out_channels),
        }
    }

    fn init<R: Rng + ?Sized>(axis: KernelAxis, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = STATE_CHANNELS * KERNEL;
        let mut conv = Self::zeros(axis, out_channels);
        conv.weight.mapv_inplace(|_| uniform_fan_in(rng, fan_in));
        conv.bias.mapv_inplace(|_| uniform_fan_in(rng, fan_in));
        conv
    }

    /// Unfolds a batch of states into `[in_channels * KERNEL, B * n * n]`
    /// patch columns with zero padding.
    fn im2col(&self, states: ArrayView2<F>, n: usize) -> Array2<F> {
        let batch = states.nrows();
        let plane = n * n;
        let mut cols = Array2::zeros((STATE_CHANNELS * KERNEL, batch * plane));
        let width = batch * plane;
        let cols_flat = cols.as_slice_mut().expect("fresh array is contiguous");
        for (b, state) in states.outer_iter().enumerate() {
            let state = state.as_slice().expect("state rows are contiguous");
            for c in 0..STATE_CHANNELS {
                let channel = &state[c * plane..(c + 1) * plane];
                for k in 0..KERNEL {
                    let row = c * KERNEL + k;
                    let out = &mut cols_flat[row * width + b * plane..row * width + (b + 1) * plane];
                    match self.axis {
                        // out[i][j] = x[i + k - PAD][j]
                        KernelAxis::Rows => {
                            for i in 0..n {
                                let src = i + k;
                                if src >= PAD && src < n + PAD {
                                    let src = src - PAD;
                                    out[i * n..(i + 1) * n]
                                        .copy_from_slice(&channel[src * n..(src + 1) * n]);
                                }
                            }
                        }
                        // out[i][j] = x[i][j + k - PAD]
                        KernelAxis::Cols => {
                            let lo = PAD.saturating_sub(k);
                            let hi = (n + PAD).saturating_sub(k).min(n);
                            if lo >= hi {
                                continue;
                            }
                            for i in 0..n {
                                let base = i * n;
                                out[base + lo..base + hi].copy_from_slice(
                                    &channel[base + lo + k - PAD..base + hi + k - PAD],
                                );
                            }
                        }
                    }
                }
            }
        }
        cols
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual default for linear and
/// convolution layers.
fn uniform_fan_in<F: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize) -> F {
    let bound = 1.0 / (fan_in as f64).sqrt();
    F::of(rng.random_range(-bound..bound))
}

fn leaky<F: Real>(x: F, leak: F) -> F {
    if x > F::zero() {
        x
    } else {
        leak * x
    }
}

fn leaky_grad<F: Real>(x: F, leak: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        leak
    }
}

/// Activations retained by [`QNetwork::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F: Real> {
    batch: usize,
    cols: [Array2<F>; 2],
    conv_pre: [Array2<F>; 2],
    features: Array2<F>,
    h1_pre: Array2<F>,
    h1: Array2<F>,
    h2_pre: Array2<F>,
    h2: Array2<F>,
    /// `[B]` state values.
    pub value: Array1<F>,
    /// `[B, m]` raw advantages.
    pub advantage: Array2<F>,
    /// `[B, m]` combined Q values.
    pub q: Array2<F>,
}

/// The Q-network parameters. The same shape doubles as a gradient container
/// and as Adam moment storage.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<F: Real = f32> {
    pub spec: NetSpec,
    pub conv_rows: Conv<F>,
    pub conv_cols: Conv<F>,
    pub fc1: Dense<F>,
    pub fc2: Dense<F>,
    pub value: Dense<F>,
    pub advantage: Dense<F>,
}

impl<F: Real> QNetwork<F> {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        Self {
            conv_rows: Conv::init(KernelAxis::Rows, spec.conv_channels, rng),
            conv_cols: Conv::init(KernelAxis::Cols, spec.conv_channels, rng),
            fc1: Dense::init(spec.flat_features(), spec.fc1, rng),
            fc2: Dense::init(spec.fc1, spec.fc2, rng),
            value: Dense::init(spec.fc2, 1, rng),
            advantage: Dense::init(spec.fc2, spec.actions, rng),
            spec,
        }
    }

    /// An all-zero network of the given shape.
    pub fn zeros(spec: NetSpec) -> Self {
        Self {
            conv_rows: Conv::zeros(KernelAxis::Rows, spec.conv_channels),
            conv_cols: Conv::zeros(KernelAxis::Cols, spec.conv_channels),
            fc1: Dense::zeros(spec.flat_features(), spec.fc1),
            fc2: Dense::zeros(spec.fc1, spec.fc2),
            value: Dense::zeros(spec.fc2, 1),
            advantage: Dense::zeros(spec.fc2, spec.actions),
            spec,
        }
    }

    /// Named parameter tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[F])> {
        fn shape2<F: Real>(a: &Array2<F>) -> Vec<usize> {
            a.shape().to_vec()
        }
        vec![
            ("conv_rows.weight", shape2(&self.conv_rows.weight), self.conv_rows.weight.as_slice().unwrap()),
            ("conv_rows.bias", vec![self.conv_rows.bias.len()], self.conv_rows.bias.as_slice().unwrap()),
            ("conv_cols.weight", shape2(&self.conv_cols.weight), self.conv_cols.weight.as_slice().unwrap()),
            ("conv_cols.bias", vec![self.conv_cols.bias.len()], self.conv_cols.bias.as_slice().unwrap()),
            ("fc1.weight", shape2(&self.fc1.weight), self.fc1.weight.as_slice().unwrap()),
            ("fc1.bias", vec![self.fc1.bias.len()], self.fc1.bias.as_slice().unwrap()),
            ("fc2.weight", shape2(&self.fc2.weight), self.fc2.weight.as_slice().unwrap()),
            ("fc2.bias", vec![self.fc2.bias.len()], self.fc2.bias.as_slice().unwrap()),
            ("value.weight", shape2(&self.value.weight), self.value.weight.as_slice().unwrap()),
            ("value.bias", vec![self.value.bias.len()], self.value.bias.as_slice().unwrap()),
            ("advantage.weight", shape2(&self.advantage.weight), self.advantage.weight.as_slice().unwrap()),
            ("advantage.bias", vec![self.advantage.bias.len()], self.advantage.bias.as_slice().unwrap()),
        ]
    }

    /// Mutable parameter slices in the same order as [`QNetwork::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.conv_rows.weight.as_slice_mut().unwrap(),
            self.conv_rows.bias.as_slice_mut().unwrap(),
            self.conv_cols.weight.as_slice_mut().unwrap(),
            self.conv_cols.bias.as_slice_mut().unwrap(),
            self.fc1.weight.as_slice_mut().unwrap(),
            self.fc1.bias.as_slice_mut().unwrap(),
            self.fc2.weight.as_slice_mut().unwrap(),
            self.fc2.bias.as_slice_mut().unwrap(),
            self.value.weight.as_slice_mut().unwrap(),
            self.value.bias.as_slice_mut().unwrap(),
            self.advantage.weight.as_slice_mut().unwrap(),
            self.advantage.bias.as_slice_mut().unwrap(),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Copies every parameter from `other` (hard target-network sync).
    pub fn copy_from(&mut self, other: &QNetwork<F>) {
        self.clone_from(other);
    }

    fn check_batch(&self, states: ArrayView2<F>) -> Result<()> {
        let expected = self.spec.state_len();
        if states.ncols() != expected {
            return Err(Error::Shape {
                what: "state".into(),
                expected: format!("{} = 4x{}x{}", expected, self.spec.nodes, self.spec.nodes),
                actual: states.ncols().to_string(),
            });
        }
        Ok(())
    }

    /// Q values for a batch of flattened states `[B, 4*n*n]`, shape `[B, m]`.
    pub fn q_values(&self, states: ArrayView2<F>) -> Result<Array2<F>> {
        Ok(self.forward(states)?.q)
    }

    /// Q values for a single flattened state.
    pub fn q_single(&self, state: &[F]) -> Result<Vec<F>> {
        let view = ArrayView2::from_shape((1, state.len()), state).map_err(|_| Error::Shape {
            what: "state".into(),
            expected: self.spec.state_len().to_string(),
            actual: state.len().to_string(),
        })?;
        Ok(self.q_values(view)?.row(0).to_vec())
    }

    pub fn forward(&self, states: ArrayView2<F>) -> Result<ForwardCache<F>> {
        self.check_batch(states)?;
        let n = self.spec.nodes;
        let plane = n * n;
        let batch = states.nrows();
        let channels = self.spec.conv_channels;
        let leak = F::of(self.spec.leak);

        let cols = [
            self.conv_rows.im2col(states, n),
            self.conv_cols.im2col(states, n),
        ];
        let mut conv_pre: [Array2<F>; 2] = [Array2::zeros((0, 0)), Array2::zeros((0, 0))];
        let mut features = Array2::zeros((batch, self.spec.flat_features()));
        for (branch, conv) in [&self.conv_rows, &self.conv_cols].into_iter().enumerate() {
            let mut pre = conv.weight.dot(&cols[branch]);
            pre += &conv.bias.view().insert_axis(Axis(1));
            let offset = branch * channels * plane;
            let pre_flat = pre.as_slice().expect("contiguous");
            let width = batch * plane;
            for b in 0..batch {
                let mut row = features.row_mut(b);
                let dst = row.as_slice_mut().expect("contiguous");
                for c in 0..channels {
                    let src = &pre_flat[c * width + b * plane..c * width + (b + 1) * plane];
                    let start = offset + c * plane;
                    for (d, &v) in dst[start..start + plane].iter_mut().zip(src) {
                        *d = leaky(v, leak);
                    }
                }
            }
            conv_pre[branch] = pre;
        }

        let h1_pre = self.fc1.forward(&features);
        let h1 = h1_pre.mapv(|x| leaky(x, leak));
        let h2_pre = self.fc2.forward(&h1);
        let h2 = h2_pre.mapv(|x| leaky(x, leak));
        let value = self.value.forward(&h2).column(0).to_owned();
        let advantage = self.advantage.forward(&h2);
        let mean_adv = advantage.mean_axis(Axis(1)).expect("m > 0");
        let mut q = advantage.clone();
        for (mut row, (&v, &mean)) in q.outer_iter_mut().zip(value.iter().zip(mean_adv.iter())) {
            row.mapv_inplace(|a| v + a - mean);
        }

        Ok(ForwardCache {
            batch,
            cols,
            conv_pre,
            features,
            h1_pre,
            h1,
            h2_pre,
            h2,
            value,
            advantage,
            q,
        })
    }

    /// Backpropagates `dq = dLoss/dQ` (shape `[B, m]`) and returns the
    /// parameter gradients.
    pub fn backward(&self, cache: &ForwardCache<F>, dq: &Array2<F>) -> QNetwork<F> {
        let leak = F::of(self.spec.leak);
        let n = self.spec.nodes;
        let plane = n * n;
        let channels = self.spec.conv_channels;
        let batch = cache.batch;
        let mut grads = QNetwork::zeros(self.spec.clone());

        // Q = V + A - mean(A)
        let dv = dq.sum_axis(Axis(1));
        let dq_mean = dq.mean_axis(Axis(1)).expect("m > 0");
        let mut da = dq.clone();
        for (mut row, &mean) in da.outer_iter_mut().zip(dq_mean.iter()) {
            row -= mean;
        }
        let dv2 = dv.view().insert_axis(Axis(1));

        grads.value.weight = dv2.t().dot(&cache.h2);
        grads.value.bias = Array1::from_elem(1, dv.sum());
        grads.advantage.weight = da.t().dot(&cache.h2);
        grads.advantage.bias = da.sum_axis(Axis(0));
        let mut dh2 = dv2.dot(&self.value.weight);
        dh2 += &da.dot(&self.advantage.weight);

        dh2.zip_mut_with(&cache.h2_pre, |g, &x| *g *= leaky_grad(x, leak));
        grads.fc2.weight = dh2.t().dot(&cache.h1);
        grads.fc2.bias = dh2.sum_axis(Axis(0));
        let mut dh1 = dh2.dot(&self.fc2.weight);

        dh1.zip_mut_with(&cache.h1_pre, |g, &x| *g *= leaky_grad(x, leak));
        grads.fc1.weight = dh1.t().dot(&cache.features);
        grads.fc1.bias = dh1.sum_axis(Axis(0));
        let dfeatures = dh1.dot(&self.fc1.weight);

        for branch in 0..2 {
            let pre = &cache.conv_pre[branch];
            let mut dpre = Array2::zeros(pre.raw_dim());
            let offset = branch * channels * plane;
            let width = batch * plane;
            let pre_flat = pre.as_slice().expect("contiguous");
            let dpre_flat = dpre.as_slice_mut().expect("contiguous");
            for b in 0..batch {
                let src = dfeatures.row(b);
                let src = src.as_slice().expect("contiguous");
                for c in 0..channels {
                    let start = offset + c * plane;
                    let at = c * width + b * plane;
                    for ((d, &g), &x) in dpre_flat[at..at + plane]
                        .iter_mut()
                        .zip(&src[start..start + plane])
                        .zip(&pre_flat[at..at + plane])
                    {
                        *d = g * leaky_grad(x, leak);
                    }
                }
            }
            let conv = if branch == 0 {
                &mut grads.conv_rows
            } else {
                &mut grads.conv_cols
            };
            conv.weight = dpre.dot(&cache.cols[branch].t());
            conv.bias = dpre.sum_axis(Axis(1));
        }
        grads
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<F: Real = f32> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: QNetwork<F>,
    second: QNetwork<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(spec: &NetSpec, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: QNetwork::zeros(spec.clone()),
            second: QNetwork::zeros(spec.clone()),
        }
    }

    /// Descends along `grads` (gradients of the loss to be minimized).
    pub fn step(&mut self, params: &mut QNetwork<F>, grads: &QNetwork<F>) {
        self.step += 1;
        let correction1 = F::of(1.0 - self.beta1.powi(self.step as i32));
        let correction2 = F::of(1.0 - self.beta2.powi(self.step as i32));
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (one, lr, eps) = (F::one(), F::of(self.learning_rate), F::of(self.eps));
        let grads = grads.tensors();
        for (((p, (_, _, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
        {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * (*m / correction1) / ((*v / correction2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> NetSpec {
        NetSpec {
            nodes: 5,
            actions: 6,
            conv_channels: 3,
            fc1: 8,
            fc2: 7,
            leak: 0.01,
        }
    }

    fn random_states(rng: &mut ChaCha8Rng, batch: usize, spec: &NetSpec) -> Array2<f64> {
        Array2::from_shape_fn((batch, spec.state_len()), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dueling_combination_is_mean_centred() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = small_spec();
        let net = QNetwork::<f64>::new(spec.clone(), &mut rng);
        let states = random_states(&mut rng, 10, &spec);
        let cache = net.forward(states.view()).unwrap();
        for (row, v) in cache.q.outer_iter().zip(cache.value.iter()) {
            let mean: f64 = row.iter().map(|q| q - v).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn value_and_advantage_combine_like_the_example() {
        // V = 2, A = [1, 3, 5] -> Q = [0, 2, 4]
        let spec = NetSpec {
            nodes: 1,
            actions: 3,
            conv_channels: 1,
            fc1: 1,
            fc2: 1,
            leak: 0.01,
        };
        let mut net = QNetwork::<f64>::zeros(spec.clone());
        net.fc1.bias[0] = 1.0;
        net.fc2.weight[[0, 0]] = 1.0;
        net.value.bias[0] = 2.0;
        net.advantage.weight.assign(&ndarray::arr2(&[[1.0], [3.0], [5.0]]));
        let q = net.q_single(&[0.0; 4]).unwrap();
        assert_eq!(q, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn rejects_wrong_state_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::<f64>::new(small_spec(), &mut rng);
        let err = net.q_single(&[0.0; 10]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = small_spec();
        let net = QNetwork::<f64>::new(spec.clone(), &mut rng);
        let states = random_states(&mut rng, 4, &spec);
        let batched = net.q_values(states.view()).unwrap();
        for b in 0..4 {
            let single = net.q_single(states.row(b).as_slice().unwrap()).unwrap();
            for (x, y) in single.iter().zip(batched.row(b).iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_reduces_a_quadratic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = small_spec();
        let mut net = QNetwork::<f64>::new(spec.clone(), &mut rng);
        let states = random_states(&mut rng, 8, &spec);
        let mut opt = Adam::<f64>::new(&spec, 1e-2);
        let loss = |net: &QNetwork<f64>| net.q_values(states.view()).unwrap().mapv(|q| q * q).sum();
        let before = loss(&net);
        for _ in 0..50 {
            let cache = net.forward(states.view()).unwrap();
            let dq = cache.q.mapv(|q| 2.0 * q);
            let grads = net.backward(&cache, &dq);
            opt.step(&mut net, &grads);
        }
        assert!(loss(&net) < 0.5 * before);
    }
}
