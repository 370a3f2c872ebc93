//! Twin-delayed deterministic policy gradient trainer: replay buffer,
//! exploration, target policy smoothing, clipped double-Q targets, and
//! delayed actor updates, over any `Environment` implementation.
//!
//! Determinism: one ChaCha stream owned by the agent drives network
//! initialization, warmup actions, exploration noise, target smoothing
//! noise, and replay sampling; environments own their streams. Identical
//! seeds give bitwise-identical training runs.

pub mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::nn::{soft_update, Activation, AdamState, BatchCache, GradientSet, Mlp, NnError};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("replay buffer holds fewer samples than the batch size")]
    InsufficientBuffer,
    #[error("training diverged: {0}")]
    Diverged(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// What the trainer needs from an environment.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError>;
    fn reseed(&mut self, seed: u64);
    /// Distance-to-goal diagnostic for evaluation summaries.
    fn goal_distance(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl Environment for crate::env::QuadEnv {
    fn obs_dim(&self) -> usize {
        crate::env::QuadEnv::obs_dim(self)
    }

    fn action_dim(&self) -> usize {
        4
    }

    fn reset(&mut self) -> Vec<f64> {
        crate::env::QuadEnv::reset(self)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        let out = crate::env::QuadEnv::step(self, action)?;
        Ok(StepOutcome {
            observation: out.observation,
            reward: out.reward,
            terminated: out.terminated,
            truncated: out.truncated,
        })
    }

    fn reseed(&mut self, seed: u64) {
        crate::env::QuadEnv::reseed(self, seed)
    }

    fn goal_distance(&self) -> f64 {
        crate::env::QuadEnv::goal_distance(self)
    }
}

/// Fixed-capacity ring of transitions, stored as f32 to halve memory.
/// Uniform sampling with replacement over current contents.
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    next: usize,
    obs: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    next_obs: Vec<f32>,
    dones: Vec<f32>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        // Grow-on-push keeps memory proportional to what is actually
        // stored rather than the configured ceiling.
        Self {
            obs_dim,
            act_dim,
            capacity,
            next: 0,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// `done` marks true terminal transitions (no bootstrapping), not
    /// time-limit truncations.
    pub fn push(&mut self, obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], done: bool) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(action.len(), self.act_dim);
        debug_assert_eq!(next_obs.len(), self.obs_dim);
        if self.len() < self.capacity {
            self.obs.extend(obs.iter().map(|&v| v as f32));
            self.actions.extend(action.iter().map(|&v| v as f32));
            self.rewards.push(reward as f32);
            self.next_obs.extend(next_obs.iter().map(|&v| v as f32));
            self.dones.push(if done { 1.0 } else { 0.0 });
        } else {
            let i = self.next;
            for (k, &v) in obs.iter().enumerate() {
                self.obs[i * self.obs_dim + k] = v as f32;
            }
            for (k, &v) in action.iter().enumerate() {
                self.actions[i * self.act_dim + k] = v as f32;
            }
            self.rewards[i] = reward as f32;
            for (k, &v) in next_obs.iter().enumerate() {
                self.next_obs[i * self.obs_dim + k] = v as f32;
            }
            self.dones[i] = if done { 1.0 } else { 0.0 };
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Samples `rew_out.len()` transitions uniformly with replacement,
    /// widening to f64 into the caller's row-major buffers.
    pub fn sample_into(
        &self,
        rng: &mut impl Rng,
        obs_out: &mut [f64],
        act_out: &mut [f64],
        rew_out: &mut [f64],
        next_obs_out: &mut [f64],
        done_out: &mut [f64],
    ) -> Result<(), TrainError> {
        let batch = rew_out.len();
        if self.len() < batch || batch == 0 {
            return Err(TrainError::InsufficientBuffer);
        }
        debug_assert_eq!(obs_out.len(), batch * self.obs_dim);
        debug_assert_eq!(act_out.len(), batch * self.act_dim);
        debug_assert_eq!(next_obs_out.len(), batch * self.obs_dim);
        debug_assert_eq!(done_out.len(), batch);
        for b in 0..batch {
            let i = rng.random_range(0..self.len());
            for k in 0..self.obs_dim {
                obs_out[b * self.obs_dim + k] = self.obs[i * self.obs_dim + k] as f64;
                next_obs_out[b * self.obs_dim + k] = self.next_obs[i * self.obs_dim + k] as f64;
            }
            for k in 0..self.act_dim {
                act_out[b * self.act_dim + k] = self.actions[i * self.act_dim + k] as f64;
            }
            rew_out[b] = self.rewards[i] as f64;
            done_out[b] = self.dones[i] as f64;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    /// Environment steps for the full run.
    pub total_steps: u64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Polyak rate for all three target networks.
    pub tau: f64,
    /// Actor (and target) updates happen every `policy_delay`-th
    /// train step.
    pub policy_delay: u64,
    pub explore_noise_std: f64,
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    /// Uniform-random action steps before any gradient update.
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    /// Hidden layer widths shared by actor and critics.
    pub hidden: Vec<usize>,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            total_steps: 5_000_000,
            batch_size: 256,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            explore_noise_std: 0.1,
            target_noise_std: 0.2,
            target_noise_clip: 0.5,
            warmup_steps: 25_000,
            buffer_capacity: 1_000_000,
            hidden: vec![64, 64],
            eval_interval: 25_000,
            eval_episodes: 10,
            seed: 0,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(TrainError::InvalidConfig("batch_size must be in 1..=buffer_capacity"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TrainError::InvalidConfig("gamma must be in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(TrainError::InvalidConfig("tau must be in (0, 1]"));
        }
        if self.policy_delay == 0 {
            return Err(TrainError::InvalidConfig("policy_delay must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(TrainError::InvalidConfig("hidden layers must be non-empty"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(TrainError::InvalidConfig("learning rates must be positive"));
        }
        if self.explore_noise_std < 0.0 || self.target_noise_std < 0.0 || self.target_noise_clip < 0.0
        {
            return Err(TrainError::InvalidConfig("noise parameters must be non-negative"));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(TrainError::InvalidConfig("evaluation cadence must be positive"));
        }
        Ok(())
    }
}

/// Per-update diagnostics from `train_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDiagnostics {
    /// Mean of the two critics' MSE losses.
    pub critic_loss: f64,
    /// −mean Q₁(o, π(o)); present only on delayed (actor) updates.
    pub actor_loss: Option<f64>,
    /// Mean regression target y over the batch.
    pub mean_target: f64,
}

struct TrainScratch {
    obs: Vec<f64>,
    act: Vec<f64>,
    rew: Vec<f64>,
    next_obs: Vec<f64>,
    done: Vec<f64>,
    critic_in: Vec<f64>,
    targets: Vec<f64>,
    d_out: Vec<f64>,
    d_critic_in: Vec<f64>,
    d_actor_out: Vec<f64>,
    actor_cache: BatchCache,
    actor_target_cache: BatchCache,
    critic1_cache: BatchCache,
    critic2_cache: BatchCache,
    critic1_target_cache: BatchCache,
    critic2_target_cache: BatchCache,
    actor_grads: GradientSet,
    critic1_grads: GradientSet,
    critic2_grads: GradientSet,
}

/// Weight on the quadratic penalty applied to actor outputs outside
/// [-1, 1] during the policy update. Inside the box the penalty and its
/// gradient are exactly zero.
const ACTION_BOUND_WEIGHT: f64 = 1.0;

pub struct Td3Agent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic1_target: Mlp,
    pub critic2: Mlp,
    pub critic2_target: Mlp,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    pub buffer: ReplayBuffer,
    cfg: Td3Config,
    rng: ChaCha8Rng,
    obs_dim: usize,
    act_dim: usize,
    update_calls: u64,
    scratch: TrainScratch,
}

impl Td3Agent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: Td3Config) -> Result<Self, TrainError> {
        cfg.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(TrainError::InvalidConfig("zero-dimensional observation or action"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(&cfg.hidden);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend_from_slice(&cfg.hidden);
        critic_sizes.push(1);
        let mut acts = vec![Activation::Tanh; cfg.hidden.len()];
        acts.push(Activation::Linear);

        let actor = Mlp::new(&actor_sizes, &acts, &mut rng)?;
        let critic1 = Mlp::new(&critic_sizes, &acts, &mut rng)?;
        let critic2 = Mlp::new(&critic_sizes, &acts, &mut rng)?;
        // Targets start as exact copies of their sources.
        let actor_target = actor.clone();
        let critic1_target = critic1.clone();
        let critic2_target = critic2.clone();

        let b = cfg.batch_size;
        let scratch = TrainScratch {
            obs: vec![0.0; b * obs_dim],
            act: vec![0.0; b * act_dim],
            rew: vec![0.0; b],
            next_obs: vec![0.0; b * obs_dim],
            done: vec![0.0; b],
            critic_in: vec![0.0; b * (obs_dim + act_dim)],
            targets: vec![0.0; b],
            d_out: vec![0.0; b * act_dim.max(1)],
            d_critic_in: vec![0.0; b * (obs_dim + act_dim)],
            d_actor_out: vec![0.0; b * act_dim],
            actor_cache: BatchCache::new(&actor, b),
            actor_target_cache: BatchCache::new(&actor_target, b),
            critic1_cache: BatchCache::new(&critic1, b),
            critic2_cache: BatchCache::new(&critic2, b),
            critic1_target_cache: BatchCache::new(&critic1_target, b),
            critic2_target_cache: BatchCache::new(&critic2_target, b),
            actor_grads: GradientSet::zeros_like(&actor),
            critic1_grads: GradientSet::zeros_like(&critic1),
            critic2_grads: GradientSet::zeros_like(&critic2),
        };

        Ok(Self {
            actor_opt: AdamState::new(&actor, cfg.actor_lr),
            critic1_opt: AdamState::new(&critic1, cfg.critic_lr),
            critic2_opt: AdamState::new(&critic2, cfg.critic_lr),
            buffer: ReplayBuffer::new(cfg.buffer_capacity, obs_dim, act_dim),
            actor,
            actor_target,
            critic1,
            critic1_target,
            critic2,
            critic2_target,
            cfg,
            rng,
            obs_dim,
            act_dim,
            update_calls: 0,
            scratch,
        })
    }

    pub fn cfg(&self) -> &Td3Config {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn update_calls(&self) -> u64 {
        self.update_calls
    }

    /// Uniform action in [−1, 1]^act_dim, used during warmup.
    pub fn random_action(&mut self) -> Vec<f64> {
        (0..self.act_dim)
            .map(|_| self.rng.random_range(-1.0..=1.0))
            .collect()
    }

    /// a = clip(actor(obs) + ε, −1, 1); ε ~ N(0, σ_explore²) when
    /// exploring, zero otherwise (deterministic, no RNG draw).
    pub fn select_action(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>, TrainError> {
        let mut action = self.actor.forward(obs)?;
        if explore && self.cfg.explore_noise_std > 0.0 {
            for a in &mut action {
                let n: f64 = self.rng.sample(StandardNormal);
                *a += n * self.cfg.explore_noise_std;
            }
        }
        for a in &mut action {
            *a = a.clamp(-1.0, 1.0);
        }
        Ok(action)
    }

    /// One gradient update: both critics regress to the clipped double-Q
    /// target; every `policy_delay`-th call also updates the actor and
    /// soft-updates all three targets.
    pub fn train_step(&mut self) -> Result<LossDiagnostics, TrainError> {
        let b = self.cfg.batch_size;
        let (no, na) = (self.obs_dim, self.act_dim);
        let s = &mut self.scratch;
        self.buffer.sample_into(
            &mut self.rng,
            &mut s.obs,
            &mut s.act,
            &mut s.rew,
            &mut s.next_obs,
            &mut s.done,
        )?;

        // Smoothed target action ã = clip(π'(o') + clip(ε, ±c), ±1).
        self.actor_target
            .forward_batch(&s.next_obs, b, &mut s.actor_target_cache)?;
        for row in 0..b {
            for k in 0..na {
                let noise = (self.rng.sample::<f64, _>(StandardNormal)
                    * self.cfg.target_noise_std)
                    .clamp(-self.cfg.target_noise_clip, self.cfg.target_noise_clip);
                let a = (s.actor_target_cache.output()[row * na + k] + noise).clamp(-1.0, 1.0);
                s.critic_in[row * (no + na) + no + k] = a;
            }
            s.critic_in[row * (no + na)..row * (no + na) + no]
                .copy_from_slice(&s.next_obs[row * no..(row + 1) * no]);
        }

        // y = r + γ·(1−done)·min(Q₁'(o', ã), Q₂'(o', ã)).
        self.critic1_target
            .forward_batch(&s.critic_in, b, &mut s.critic1_target_cache)?;
        self.critic2_target
            .forward_batch(&s.critic_in, b, &mut s.critic2_target_cache)?;
        let mut target_sum = 0.0;
        for row in 0..b {
            let q_min = s.critic1_target_cache.output()[row].min(s.critic2_target_cache.output()[row]);
            let y = s.rew[row] + self.cfg.gamma * (1.0 - s.done[row]) * q_min;
            s.targets[row] = y;
            target_sum += y;
        }
        let mean_target = target_sum / b as f64;
        if !mean_target.is_finite() {
            return Err(TrainError::Diverged("non-finite critic target"));
        }

        // Critic regression on (o, a) against y.
        for row in 0..b {
            s.critic_in[row * (no + na)..row * (no + na) + no]
                .copy_from_slice(&s.obs[row * no..(row + 1) * no]);
            s.critic_in[row * (no + na) + no..(row + 1) * (no + na)]
                .copy_from_slice(&s.act[row * na..(row + 1) * na]);
        }
        let mut critic_loss = 0.0;
        for (critic, cache, grads, opt) in [
            (
                &mut self.critic1,
                &mut s.critic1_cache,
                &mut s.critic1_grads,
                &mut self.critic1_opt,
            ),
            (
                &mut self.critic2,
                &mut s.critic2_cache,
                &mut s.critic2_grads,
                &mut self.critic2_opt,
            ),
        ] {
            critic.forward_batch(&s.critic_in, b, cache)?;
            let mut loss = 0.0;
            for row in 0..b {
                let err = cache.output()[row] - s.targets[row];
                loss += err * err;
                s.d_out[row] = 2.0 * err / b as f64;
            }
            loss /= b as f64;
            critic_loss += 0.5 * loss;
            grads.reset();
            critic.backward_batch(cache, &s.d_out[..b], Some(grads), None)?;
            opt.step(critic, grads)?;
        }
        if !critic_loss.is_finite() {
            return Err(TrainError::Diverged("non-finite critic loss"));
        }

        self.update_calls += 1;
        let mut actor_loss = None;
        if self.update_calls % self.cfg.policy_delay == 0 {
            // Deterministic policy gradient: ascend Q₁(o, clip(π(o))).
            // The critic only ever trains on actions inside [-1, 1], so
            // evaluating it at the clipped action keeps the ascent on
            // ground the critic has actually seen; the clip contributes a
            // zero subgradient for saturated components. A quadratic
            // out-of-range penalty (inert inside the box) pulls saturated
            // outputs back toward the boundary so they cannot drift off
            // and strand the policy in the critic's flat far field.
            self.actor.forward_batch(&s.obs, b, &mut s.actor_cache)?;
            for row in 0..b {
                s.critic_in[row * (no + na)..row * (no + na) + no]
                    .copy_from_slice(&s.obs[row * no..(row + 1) * no]);
                let pi = &s.actor_cache.output()[row * na..(row + 1) * na];
                for (dst, &raw) in s.critic_in
                    [row * (no + na) + no..(row + 1) * (no + na)]
                    .iter_mut()
                    .zip(pi)
                {
                    *dst = raw.clamp(-1.0, 1.0);
                }
            }
            self.critic1
                .forward_batch(&s.critic_in, b, &mut s.critic1_cache)?;
            let q_mean: f64 = s.critic1_cache.output().iter().sum::<f64>() / b as f64;
            actor_loss = Some(-q_mean);
            for row in 0..b {
                s.d_out[row] = -1.0 / b as f64;
            }
            self.critic1.backward_batch(
                &mut s.critic1_cache,
                &s.d_out[..b],
                None,
                Some(&mut s.d_critic_in),
            )?;
            for row in 0..b {
                let pi = &s.actor_cache.output()[row * na..(row + 1) * na];
                let dq = &s.d_critic_in[row * (no + na) + no..(row + 1) * (no + na)];
                for (j, (&raw, &g)) in pi.iter().zip(dq).enumerate() {
                    let excess = raw.abs() - 1.0;
                    s.d_actor_out[row * na + j] = if excess > 0.0 {
                        2.0 * ACTION_BOUND_WEIGHT * excess * raw.signum() / b as f64
                    } else {
                        g
                    };
                }
            }
            s.actor_grads.reset();
            self.actor
                .backward_batch(&mut s.actor_cache, &s.d_actor_out, Some(&mut s.actor_grads), None)?;
            self.actor_opt.step(&mut self.actor, &s.actor_grads)?;

            soft_update(&mut self.actor_target, &self.actor, self.cfg.tau)?;
            soft_update(&mut self.critic1_target, &self.critic1, self.cfg.tau)?;
            soft_update(&mut self.critic2_target, &self.critic2, self.cfg.tau)?;
        }

        Ok(LossDiagnostics {
            critic_loss,
            actor_loss,
            mean_target,
        })
    }
}

/// Deterministic clipped policy action, without an agent.
pub fn policy_action(actor: &Mlp, obs: &[f64]) -> Result<Vec<f64>, NnError> {
    let mut a = actor.forward(obs)?;
    for v in &mut a {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub undiscounted_return: f64,
    /// Mean over steps of the env's goal distance.
    pub mean_goal_distance: f64,
    pub final_goal_distance: f64,
    pub steps: usize,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub mean_goal_distance: f64,
    pub mean_final_distance: f64,
    pub episodes: Vec<EpisodeStats>,
}

/// Runs `episodes` deterministic-policy episodes after reseeding the
/// environment, so repeated calls see identical initial states.
/// Environment stochasticity (observation noise) stays on.
pub fn evaluate<E: Environment>(
    actor: &Mlp,
    env: &mut E,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    env.reseed(seed);
    let mut stats = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut ret = 0.0;
        let mut dist_sum = 0.0;
        let mut steps = 0usize;
        let terminated;
        loop {
            let action = policy_action(actor, &obs)?;
            let out = env.step(&action)?;
            ret += out.reward;
            dist_sum += env.goal_distance();
            steps += 1;
            obs = out.observation;
            if out.terminated || out.truncated {
                terminated = out.terminated;
                break;
            }
        }
        stats.push(EpisodeStats {
            undiscounted_return: ret,
            mean_goal_distance: dist_sum / steps as f64,
            final_goal_distance: env.goal_distance(),
            steps,
            terminated,
        });
    }
    let n = stats.len() as f64;
    Ok(EvalSummary {
        mean_return: stats.iter().map(|s| s.undiscounted_return).sum::<f64>() / n,
        mean_goal_distance: stats.iter().map(|s| s.mean_goal_distance).sum::<f64>() / n,
        mean_final_distance: stats.iter().map(|s| s.final_goal_distance).sum::<f64>() / n,
        episodes: stats,
    })
}

/// One point of the training curve, written per evaluation period.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub mean_return: f64,
    pub mean_pos_error: f64,
    /// Mean critic loss since the previous row (0 before learning starts).
    pub critic_loss: f64,
    pub actor_loss: f64,
}

pub struct TrainOutput {
    pub agent: Td3Agent,
    pub curve: Vec<CurveRow>,
}

/// Seed used for every in-training evaluation pass, derived once from the
/// run seed so each pass replays the same initial states.
pub fn eval_seed(run_seed: u64) -> u64 {
    run_seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Full interaction loop: uniform-random warmup, then noisy policy
/// actions with one gradient update per environment step. Truncated
/// episodes bootstrap (done=0); terminated ones do not (done=1).
/// `on_eval` fires after each evaluation pass (checkpointing hook).
pub fn train<E: Environment>(
    train_env: &mut E,
    eval_env: &mut E,
    cfg: &Td3Config,
    mut on_eval: impl FnMut(u64, &EvalSummary, &Td3Agent),
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let mut agent = Td3Agent::new(train_env.obs_dim(), train_env.action_dim(), cfg.clone())?;
    let mut curve = Vec::new();

    let mut obs = train_env.reset();
    let mut critic_loss_sum = 0.0;
    let mut actor_loss_sum = 0.0;
    let mut critic_loss_count = 0u64;
    let mut actor_loss_count = 0u64;

    for step in 1..=cfg.total_steps {
        let action = if step <= cfg.warmup_steps {
            agent.random_action()
        } else {
            agent.select_action(&obs, true)?
        };
        let out = train_env.step(&action)?;
        agent
            .buffer
            .push(&obs, &action, out.reward, &out.observation, out.terminated);
        obs = if out.terminated || out.truncated {
            train_env.reset()
        } else {
            out.observation
        };

        if step > cfg.warmup_steps {
            let diag = agent.train_step()?;
            critic_loss_sum += diag.critic_loss;
            critic_loss_count += 1;
            if let Some(al) = diag.actor_loss {
                actor_loss_sum += al;
                actor_loss_count += 1;
            }
        }

        if step % cfg.eval_interval == 0 {
            let summary = evaluate(&agent.actor, eval_env, cfg.eval_episodes, eval_seed(cfg.seed))?;
            let row = CurveRow {
                step,
                mean_return: summary.mean_return,
                mean_pos_error: summary.mean_goal_distance,
                critic_loss: if critic_loss_count > 0 {
                    critic_loss_sum / critic_loss_count as f64
                } else {
                    0.0
                },
                actor_loss: if actor_loss_count > 0 {
                    actor_loss_sum / actor_loss_count as f64
                } else {
                    0.0
                },
            };
            curve.push(row);
            on_eval(step, &summary, &agent);
            critic_loss_sum = 0.0;
            actor_loss_sum = 0.0;
            critic_loss_count = 0;
            actor_loss_count = 0;
        }
    }

    Ok(TrainOutput { agent, curve })
}
