//! Dueling double DQN with prioritized replay and n-step returns.

pub mod checkpoint;
pub mod per;

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::{error, info};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeStatus, MulticastEnv, MulticastRequest, RewardConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, NetSpec, QNetwork};
use crate::topology::{NliSnapshot, Topology};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use per::{PerBuffer, PerParams, PerSample, SumTree};

/// Hidden-layer widths of the Q-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub conv_channels: usize,
    pub fc1: usize,
    pub fc2: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            conv_channels: 32,
            fc1: 256,
            fc2: 128,
        }
    }
}

impl NetShape {
    /// A small network that trains the 14-node scenario in minutes on one core.
    pub fn desk() -> Self {
        Self {
            conv_channels: 4,
            fc1: 32,
            fc2: 32,
        }
    }

    pub fn spec(&self, topo: &Topology) -> NetSpec {
        NetSpec {
            conv_channels: self.conv_channels,
            fc1: self.fc1,
            fc2: self.fc2,
            ..NetSpec::new(topo.node_count(), topo.edge_count())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_step: usize,
    /// Learner steps between hard target-network copies.
    pub target_update: usize,
    pub gamma: f64,
    pub episodes: usize,
    pub eps_start: f64,
    pub eps_final: f64,
    pub eps_decay: f64,
    pub seed: u64,
    pub per_capacity: usize,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub per_eps: f64,
    pub net: NetShape,
    pub reward: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            n_step: 1,
            target_update: 10,
            gamma: 0.9,
            episodes: 4000,
            eps_start: 1.0,
            eps_final: 0.05,
            eps_decay: 200.0,
            seed: 0,
            per_capacity: 10_000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_eps: 1e-5,
            net: NetShape::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.eps_final <= self.eps_start && self.eps_final >= 0.0 && self.eps_start <= 1.0) {
            return fail(format!(
                "need 0 <= eps_final <= eps_start <= 1, got {} and {}",
                self.eps_final, self.eps_start
            ));
        }
        if !(self.eps_decay > 0.0) {
            return fail("eps_decay must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.n_step == 0 || self.target_update == 0 {
            return fail("batch size, n-step and target update must be at least 1".into());
        }
        if self.per_capacity < self.batch_size {
            return fail("replay capacity is smaller than one batch".into());
        }
        self.reward.validate()
    }

    pub fn per_params(&self) -> PerParams {
        PerParams {
            alpha: self.per_alpha,
            eps: self.per_eps,
        }
    }

    /// Importance-sampling exponent, annealed linearly over the episodes.
    pub fn per_beta(&self, episode: usize) -> f64 {
        let frac = if self.episodes > 1 {
            (episode as f64 / (self.episodes - 1) as f64).min(1.0)
        } else {
            1.0
        };
        self.per_beta_start + (self.per_beta_end - self.per_beta_start) * frac
    }
}

/// Exploration rate `eps_final + (eps_start - eps_final) * exp(-episode / decay)`.
pub fn epsilon(episode: usize, cfg: &TrainConfig) -> f64 {
    cfg.eps_final + (cfg.eps_start - cfg.eps_final) * (-(episode as f64) / cfg.eps_decay).exp()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// The exploration half of epsilon-greedy: `Some(uniform action)` with
/// probability `eps`. Always consumes one draw, plus one when exploring.
fn explore<R: Rng + ?Sized>(eps: f64, actions: usize, rng: &mut R) -> Option<usize> {
    if rng.random::<f64>() < eps {
        Some(rng.random_range(0..actions))
    } else {
        None
    }
}

pub fn select_action<R: Rng + ?Sized>(q: &[f32], eps: f64, rng: &mut R) -> usize {
    explore(eps, q.len(), rng).unwrap_or_else(|| argmax(q))
}

/// `sum_k gamma^k * rewards[k]`.
pub fn n_step_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Invalid("n-step return of an empty reward list".into()));
    }
    Ok(rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<[f32]>,
    pub action: usize,
    /// Discounted reward over `steps` steps.
    pub ret: f64,
    /// `None` when the window ended in a terminal state.
    pub next_state: Option<Arc<[f32]>>,
    pub steps: usize,
}

/// Collects single steps and releases n-step transitions.
#[derive(Debug, Clone)]
pub struct NStepBuffer {
    n: usize,
    gamma: f64,
    window: VecDeque<(Arc<[f32]>, usize, f64)>,
}

impl NStepBuffer {
    pub fn new(n: usize, gamma: f64) -> Self {
        Self {
            n,
            gamma,
            window: VecDeque::with_capacity(n),
        }
    }

    fn emit(&self, next: Option<&Arc<[f32]>>) -> Transition {
        let rewards: Vec<f64> = self.window.iter().map(|(_, _, r)| *r).collect();
        let (state, action, _) = &self.window[0];
        Transition {
            state: state.clone(),
            action: *action,
            ret: n_step_return(&rewards, self.gamma).expect("window is nonempty"),
            next_state: next.cloned(),
            steps: rewards.len(),
        }
    }

    /// Records one step. When `done`, every pending window is flushed;
    /// `terminal` says whether the episode ended in a terminal state (no
    /// bootstrap) or was cut short (bootstrap from `next`).
    pub fn push(
        &mut self,
        state: Arc<[f32]>,
        action: usize,
        reward: f64,
        next: &Arc<[f32]>,
        done: bool,
        terminal: bool,
    ) -> Vec<Transition> {
        self.window.push_back((state, action, reward));
        let boot = if terminal { None } else { Some(next) };
        let mut out = Vec::new();
        if done {
            while !self.window.is_empty() {
                out.push(self.emit(boot));
                self.window.pop_front();
            }
        } else if self.window.len() == self.n {
            out.push(self.emit(Some(next)));
            self.window.pop_front();
        }
        out
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }
}

fn stack(states: &[&[f32]], width: usize) -> Array2<f32> {
    let mut out = Array2::zeros((states.len(), width));
    for (mut row, s) in out.outer_iter_mut().zip(states) {
        row.as_slice_mut().expect("contiguous").copy_from_slice(s);
    }
    out
}

/// TD targets for a batch: action chosen by `policy`, valued by `target`.
fn td_targets(
    policy: &QNetwork<f32>,
    target: &QNetwork<f32>,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>> {
    let width = policy.spec.state_len();
    let boot: Vec<&[f32]> = batch.iter().filter_map(|t| t.next_state.as_deref()).collect();
    let (select, value) = if boot.is_empty() {
        (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
    } else {
        let next = stack(&boot, width);
        (policy.q_values(next.view())?, target.q_values(next.view())?)
    };
    let mut row = 0;
    Ok(batch
        .iter()
        .map(|t| {
            if t.next_state.is_some() {
                let a = argmax(select.row(row).as_slice().expect("contiguous"));
                let g = t.ret + gamma.powi(t.steps as i32) * value[[row, a]] as f64;
                row += 1;
                g
            } else {
                t.ret
            }
        })
        .collect())
}

/// Double-DQN TD errors `G - Q(s, a)` for a batch.
pub fn td_errors(
    policy: &QNetwork<f32>,
    target: &QNetwork<f32>,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let targets = td_targets(policy, target, batch, gamma)?;
    let states: Vec<&[f32]> = batch.iter().map(|t| &t.state[..]).collect();
    let q = policy.q_values(stack(&states, policy.spec.state_len()).view())?;
    Ok(batch
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (t, g))| g - q[[i, t.action]] as f64)
        .collect())
}

/// Policy and target networks, optimizer and replay memory.
pub struct Learner {
    pub policy: QNetwork<f32>,
    pub target: QNetwork<f32>,
    pub optimizer: Adam<f32>,
    pub replay: PerBuffer<Transition>,
    pub gamma: f64,
    pub batch_size: usize,
    pub target_update: usize,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnStats {
    pub loss: f64,
    pub synced: bool,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, cfg: &TrainConfig, rng: &mut R) -> Self {
        let policy = QNetwork::<f32>::new(spec.clone(), rng);
        Self {
            target: policy.clone(),
            optimizer: Adam::new(&spec, cfg.learning_rate),
            policy,
            replay: PerBuffer::new(cfg.per_capacity, cfg.per_params()),
            gamma: cfg.gamma,
            batch_size: cfg.batch_size,
            target_update: cfg.target_update,
            steps: 0,
        }
    }

    /// One gradient step on a prioritized batch. Loss is the mean of
    /// importance-weighted squared TD errors.
    pub fn learn<R: Rng + ?Sized>(&mut self, beta: f64, rng: &mut R) -> Result<LearnStats> {
        let sample = self.replay.sample(self.batch_size, beta, rng)?;
        let batch: Vec<&Transition> = sample.indices.iter().map(|&i| self.replay.get(i)).collect();
        let targets = td_targets(&self.policy, &self.target, &batch, self.gamma)?;
        let states: Vec<&[f32]> = batch.iter().map(|t| &t.state[..]).collect();
        let x = stack(&states, self.policy.spec.state_len());
        let cache = self.policy.forward(x.view())?;

        let k = batch.len() as f64;
        let mut dq = Array2::<f32>::zeros(cache.q.raw_dim());
        let mut deltas = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for (i, ((t, g), w)) in batch.iter().zip(&targets).zip(&sample.weights).enumerate() {
            let delta = g - cache.q[[i, t.action]] as f64;
            loss += w * delta * delta / k;
            dq[[i, t.action]] = (-2.0 * w * delta / k) as f32;
            deltas.push(delta);
        }
        if !loss.is_finite() {
            error!(
                "non-finite loss; indices {:?}, targets {:?}, deltas {:?}, weights {:?}",
                sample.indices, targets, deltas, sample.weights
            );
            return Err(Error::NonFinite {
                episode: 0,
                step: self.steps,
                detail: format!("loss {loss}, deltas {deltas:?}"),
            });
        }
        let grads = self.policy.backward(&cache, &dq);
        self.optimizer.step(&mut self.policy, &grads);
        self.replay.update(&sample.indices, &deltas);
        self.steps += 1;
        let synced = self.steps % self.target_update as u64 == 0;
        if synced {
            self.target.copy_from(&self.policy);
        }
        Ok(LearnStats { loss, synced })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Mean undiscounted return over the episode's non-truncated runs.
    pub mean_reward: Option<f64>,
    pub mean_steps: Option<f64>,
    pub epsilon: f64,
    pub loss_mean: Option<f64>,
    pub wall_ms: f64,
}

pub fn write_train_log<W: Write>(rows: &[EpisodeLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub struct TrainOutcome {
    pub policy: QNetwork<f32>,
    pub log: Vec<EpisodeLog>,
    pub learner_steps: u64,
    pub truncated_runs: usize,
}

/// Runs the training loop: every episode replays the request once per
/// snapshot, acting epsilon-greedily and learning after every step once the
/// replay memory holds a full batch.
pub fn train(
    topo: &Topology,
    snaps: &[NliSnapshot],
    req: &MulticastRequest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(topo, snaps, req, cfg, |_| {})
}

pub fn train_with(
    topo: &Topology,
    snaps: &[NliSnapshot],
    req: &MulticastRequest,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpisodeLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if snaps.is_empty() {
        return Err(Error::Invalid("training needs at least one snapshot".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = cfg.net.spec(topo);
    let mut learner = Learner::new(spec, cfg, &mut rng);
    let mut staging = NStepBuffer::new(cfg.n_step, cfg.gamma);
    let mut envs = snaps
        .iter()
        .map(|s| MulticastEnv::new(topo, s, req.clone(), cfg.reward))
        .collect::<Result<Vec<_>>>()?;
    let actions = topo.edge_count();
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut truncated_runs = 0;
    let start = Instant::now();

    for episode in 0..cfg.episodes {
        let eps = epsilon(episode, cfg);
        let beta = cfg.per_beta(episode);
        let (mut reward_sum, mut step_sum, mut counted) = (0.0, 0usize, 0usize);
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);

        for env in &mut envs {
            let mut state: Arc<[f32]> = env.reset().tensor.as_slice().into();
            staging.clear();
            let mut total = 0.0;
            loop {
                let action = match explore(eps, actions, &mut rng) {
                    Some(a) => a,
                    None => argmax(&learner.policy.q_single(&state)?),
                };
                let r = env.step(action)?;
                total += r.reward;
                let next: Arc<[f32]> = if r.case == crate::env::ActionCase::Joinable {
                    env.state().tensor.as_slice().into()
                } else {
                    state.clone()
                };
                let terminal = r.status == EpisodeStatus::Terminal;
                for t in staging.push(state, action, r.reward, &next, r.done, terminal) {
                    learner.replay.push(t);
                }
                if learner.replay.len() >= cfg.batch_size {
                    let stats = learner.learn(beta, &mut rng).map_err(|e| match e {
                        Error::NonFinite { step, detail, .. } => Error::NonFinite {
                            episode,
                            step,
                            detail,
                        },
                        other => other,
                    })?;
                    loss_sum += stats.loss;
                    loss_count += 1;
                }
                state = next;
                if r.done {
                    break;
                }
            }
            if env.status() == EpisodeStatus::Truncated {
                truncated_runs += 1;
            } else {
                reward_sum += total;
                step_sum += env.steps();
                counted += 1;
            }
        }

        let row = EpisodeLog {
            episode,
            mean_reward: (counted > 0).then(|| reward_sum / counted as f64),
            mean_steps: (counted > 0).then(|| step_sum as f64 / counted as f64),
            epsilon: eps,
            loss_mean: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if (episode + 1) % 500 == 0 {
            info!(
                "episode {} reward {:?} steps {:?} eps {:.3}",
                episode + 1,
                row.mean_reward,
                row.mean_steps,
                eps
            );
        }
        observe(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        policy: learner.policy,
        log,
        learner_steps: learner.steps,
        truncated_runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RolloutStatus {
    Converged,
    NonConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub status: RolloutStatus,
    /// Every action taken, including a final invalid one.
    pub actions: Vec<usize>,
    /// The tree in insertion order.
    pub tree_edges: Vec<usize>,
    pub total_reward: f64,
    /// Finish reward when the rollout converged.
    pub finish_reward: Option<f64>,
}

/// Builds a tree by always taking the highest-valued action. The policy is
/// deterministic and an invalid action leaves the state unchanged, so the
/// first invalid action would repeat until the step cap; the rollout stops
/// there and reports non-convergence.
pub fn greedy_rollout(
    net: &QNetwork<f32>,
    topo: &Topology,
    req: &MulticastRequest,
    snap: &NliSnapshot,
    reward: &RewardConfig,
) -> Result<Rollout> {
    let mut env = MulticastEnv::new(topo, snap, req.clone(), *reward)?;
    let mut actions = Vec::new();
    let mut total = 0.0;
    loop {
        let a = argmax(&net.q_single(&env.state().tensor)?);
        let r = env.step(a)?;
        actions.push(a);
        total += r.reward;
        if r.status == EpisodeStatus::Terminal {
            return Ok(Rollout {
                status: RolloutStatus::Converged,
                actions,
                tree_edges: env.tree().edges().to_vec(),
                total_reward: total,
                finish_reward: Some(r.reward),
            });
        }
        if r.case != crate::env::ActionCase::Joinable {
            return Ok(Rollout {
                status: RolloutStatus::NonConverged,
                actions,
                tree_edges: env.tree().edges().to_vec(),
                total_reward: total,
                finish_reward: None,
            });
        }
    }
}
