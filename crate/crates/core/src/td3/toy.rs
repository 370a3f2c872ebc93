//! Minimal 1-D double integrator for exercising the trainer end to end
//! in seconds. Same episode contract as the flight environment:
//! survival bonus minus quadratic state and action penalties, hard
//! position bound, fixed horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::EnvError;
use crate::td3::{Environment, StepOutcome};

pub const DT: f64 = 0.05;
pub const HORIZON: usize = 200;
pub const POSITION_BOUND: f64 = 2.0;
const INIT_HALFWIDTH: f64 = 0.3;

/// Per-step ceiling of the reward; an episode pinned at the origin with
/// zero action earns exactly `SURVIVAL_BONUS * HORIZON`.
pub const SURVIVAL_BONUS: f64 = 2.0;

pub struct DoubleIntegrator {
    x: f64,
    v: f64,
    steps: usize,
    started: bool,
    done: bool,
    rng: ChaCha8Rng,
}

impl DoubleIntegrator {
    pub fn new(seed: u64) -> Self {
        Self {
            x: 0.0,
            v: 0.0,
            steps: 0,
            started: false,
            done: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.x, self.v]
    }

    fn reward(x: f64, v: f64, a: f64) -> f64 {
        SURVIVAL_BONUS - 2.0 * x * x - 0.1 * v * v - 0.05 * a * a
    }
}

impl Environment for DoubleIntegrator {
    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        self.x = self.rng.random_range(-INIT_HALFWIDTH..=INIT_HALFWIDTH);
        self.v = self.rng.random_range(-INIT_HALFWIDTH..=INIT_HALFWIDTH);
        self.steps = 0;
        self.started = true;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action.len() != 1 || !action[0].is_finite() {
            return Err(EnvError::InvalidAction);
        }
        let a = action[0].clamp(-1.0, 1.0);
        // Semi-implicit Euler; the acceleration is the action itself.
        self.v += a * DT;
        self.x += self.v * DT;
        self.steps += 1;

        let terminated = self.x.abs() > POSITION_BOUND;
        let truncated = !terminated && self.steps >= HORIZON;
        self.done = terminated || truncated;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: Self::reward(self.x, self.v, a),
            terminated,
            truncated,
        })
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn goal_distance(&self) -> f64 {
        self.x.abs()
    }
}
