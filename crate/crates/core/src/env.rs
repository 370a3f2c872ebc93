//! MDP wrapper around the rigid-body simulator: episode reset
//! distribution, observation assembly with sensor-like noise and action
//! history, the shaped hover reward, termination, and stepping at control
//! rate over dynamics substeps.
//!
//! The observation is a flat vector
//! `[p (3), R row-major (9), v (3), ω_b (3), H_a (4·N_Ha)]`,
//! 18 + 4·N_Ha entries (146 at the default history length of 32). H_a
//! holds the last N_Ha normalized actions, most recent first, zero-padded
//! at episode start.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::dynamics::{integrate_step, QuadParams, QuadState, RPM_TO_RAD};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("environment must be reset before stepping")]
    NotReset,
    #[error("episode already finished; reset before stepping again")]
    EpisodeOver,
    #[error("action must have exactly 4 finite components")]
    InvalidAction,
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// Weights of the shaped hover reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Constant bonus per surviving step; makes crashing costly.
    pub survival_bonus: f64,
    pub position_weight: f64,
    pub orientation_weight: f64,
    pub velocity_weight: f64,
    pub action_weight: f64,
    /// Baseline subtracted from every normalized action component before
    /// the action penalty.
    pub action_baseline: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            survival_bonus: 2.0,
            position_weight: 2.5,
            orientation_weight: 2.5,
            velocity_weight: 0.05,
            action_weight: 0.05,
            action_baseline: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Number of past actions kept in the observation (N_Ha).
    pub action_history: usize,
    /// Control period [s]; one policy action is held for this long.
    pub control_dt: f64,
    /// Dynamics substeps per control step (sim dt = control_dt / substeps).
    pub substeps: usize,
    /// Episode length in control steps.
    pub episode_steps: usize,
    /// Observation noise std for position and rotation-matrix entries.
    pub pose_noise_std: f64,
    /// Observation noise std for velocity and body-rate entries.
    pub twist_noise_std: f64,
    /// Half-width of the initial-position box [m].
    pub init_box_halfwidth: f64,
    /// Maximum initial geodesic rotation angle from identity [rad].
    pub init_max_tilt: f64,
    /// Maximum initial speed [m/s].
    pub init_max_speed: f64,
    /// Maximum initial body rate [rad/s].
    pub init_max_rate: f64,
    /// Termination bound on ‖p‖∞ [m].
    pub bounds: f64,
    /// Action-to-RPM affine range: a = −1 maps here (clamped to 0 after
    /// conversion when negative).
    pub action_min_rpm: f64,
    /// a = +1 maps here.
    pub action_max_rpm: f64,
    pub reward: RewardParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            action_history: 32,
            control_dt: 0.01,
            substeps: 10,
            episode_steps: 500,
            pose_noise_std: 0.001,
            twist_noise_std: 0.002,
            init_box_halfwidth: 0.1,
            init_max_tilt: std::f64::consts::FRAC_PI_2,
            init_max_speed: 1.0,
            init_max_rate: 1.0,
            bounds: 2.0,
            action_min_rpm: -21702.0,
            action_max_rpm: 27102.0,
            reward: RewardParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn obs_dim(&self) -> usize {
        18 + 4 * self.action_history
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.control_dt > 0.0) || self.substeps == 0 {
            return Err(EnvError::InvalidConfig("control_dt and substeps must be positive"));
        }
        if self.control_dt / self.substeps as f64 > 0.01 {
            return Err(EnvError::InvalidConfig("sim substep exceeds 10 ms"));
        }
        if self.episode_steps == 0 {
            return Err(EnvError::InvalidConfig("episode_steps must be positive"));
        }
        if self.pose_noise_std < 0.0 || self.twist_noise_std < 0.0 {
            return Err(EnvError::InvalidConfig("noise stds must be non-negative"));
        }
        if !(self.bounds > 0.0) {
            return Err(EnvError::InvalidConfig("bounds must be positive"));
        }
        if self.action_max_rpm <= self.action_min_rpm {
            return Err(EnvError::InvalidConfig("action_max_rpm must exceed action_min_rpm"));
        }
        let rp = &self.reward;
        if rp.survival_bonus < 0.0
            || rp.position_weight < 0.0
            || rp.orientation_weight < 0.0
            || rp.velocity_weight < 0.0
            || rp.action_weight < 0.0
        {
            return Err(EnvError::InvalidConfig("reward weights must be non-negative"));
        }
        Ok(())
    }
}

/// Outcome of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Crash/divergence: the state left the bounds box or became
    /// non-finite. Absorbing; the value target must not bootstrap.
    pub terminated: bool,
    /// Episode length reached; bootstrapping remains valid.
    pub truncated: bool,
    /// Noiseless simulator state after the step, for diagnostics.
    pub state: QuadState,
}

/// Affine map from a clipped normalized action to rotor setpoints
/// [rad/s]: [−1, 1] → [min_rpm, max_rpm], then RPM → rad/s, then clamped
/// to [0, Ω_max]. Negative RPM commands floor at zero.
pub fn map_action(action: &[f64; 4], cfg: &EnvConfig, params: &QuadParams) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        let a = action[i].clamp(-1.0, 1.0);
        let rpm = (a + 1.0) / 2.0 * (cfg.action_max_rpm - cfg.action_min_rpm) + cfg.action_min_rpm;
        out[i] = (rpm * RPM_TO_RAD).clamp(0.0, params.omega_max);
    }
    out
}

/// Inverse of `map_action`'s affine part: the normalized action whose
/// mapped RPM equals `rpm` (before the physical clamp).
pub fn rpm_to_action(rpm: f64, cfg: &EnvConfig) -> f64 {
    2.0 * (rpm - cfg.action_min_rpm) / (cfg.action_max_rpm - cfg.action_min_rpm) - 1.0
}

/// Shaped hover reward
///
/// r = λ_s − η_p‖p‖² − η_R·sin²θ − η_v‖v‖² − δ_a‖a − δ_ab·𝟙‖²
///
/// where θ is the geodesic angle of R from identity, via
/// cosθ = (trace(R) − 1)/2 and sin²θ = 1 − cos²θ.
pub fn reward(state: &QuadState, action: &[f64; 4], rp: &RewardParams) -> f64 {
    let cos_theta = ((state.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin2_theta = 1.0 - cos_theta * cos_theta;
    let action_term: f64 = action
        .iter()
        .map(|a| (a - rp.action_baseline) * (a - rp.action_baseline))
        .sum();
    rp.survival_bonus
        - rp.position_weight * state.position.norm_squared()
        - rp.orientation_weight * sin2_theta
        - rp.velocity_weight * state.velocity.norm_squared()
        - rp.action_weight * action_term
}

/// True iff the position left the bounds box or any state entry is
/// non-finite.
pub fn is_terminal(state: &QuadState, cfg: &EnvConfig) -> bool {
    !state.is_finite() || state.position.amax() > cfg.bounds
}

/// The hover/tracking MDP.
pub struct QuadEnv {
    params: QuadParams,
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    state: QuadState,
    /// Flat action history, most recent first, 4·N_Ha entries.
    history: Vec<f64>,
    steps_taken: usize,
    started: bool,
    done: bool,
    /// Reference position subtracted from p in observations, reward, and
    /// bounds checks. Zero for hover training; set to the desired
    /// trajectory point for tracking runs.
    position_offset: Vector3<f64>,
}

impl QuadEnv {
    pub fn new(params: QuadParams, cfg: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        params
            .validate()
            .map_err(|_| EnvError::InvalidConfig("invalid physical parameters"))?;
        let history = vec![0.0; 4 * cfg.action_history];
        Ok(Self {
            params,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: QuadState::at_rest(),
            history,
            steps_taken: 0,
            started: false,
            done: false,
            position_offset: Vector3::zeros(),
        })
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn params(&self) -> &QuadParams {
        &self.params
    }

    /// Noiseless simulator state.
    pub fn state(&self) -> &QuadState {
        &self.state
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    pub fn set_position_offset(&mut self, offset: Vector3<f64>) {
        self.position_offset = offset;
    }

    pub fn position_offset(&self) -> Vector3<f64> {
        self.position_offset
    }

    /// Distance from the (offset-shifted) target position.
    pub fn goal_distance(&self) -> f64 {
        (self.state.position - self.position_offset).norm()
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Draws an initial state: position uniform in the init box, rotation
    /// uniform over rotations within the tilt limit, velocity and body
    /// rate uniform in their balls, rotors at hover speed.
    pub fn reset(&mut self) -> Vec<f64> {
        let w = self.cfg.init_box_halfwidth;
        let position = Vector3::new(
            self.rng.random_range(-w..=w),
            self.rng.random_range(-w..=w),
            self.rng.random_range(-w..=w),
        );
        let rotation = self.sample_rotation();
        let velocity = self.sample_ball(self.cfg.init_max_speed);
        let body_rates = self.sample_ball(self.cfg.init_max_rate);
        let state = QuadState {
            position,
            velocity,
            rotation,
            body_rates,
            rotor_speeds: [self.params.hover_speed(); 4],
        };
        self.reset_to(state)
    }

    /// Starts an episode from an exact state (deterministic evaluation,
    /// takeoff phases).
    pub fn reset_to(&mut self, state: QuadState) -> Vec<f64> {
        self.state = state;
        self.history.fill(0.0);
        self.steps_taken = 0;
        self.started = true;
        self.done = false;
        self.observe()
    }

    /// Haar-uniform rotation conditioned on geodesic angle ≤ init_max_tilt,
    /// by rejection on uniform unit quaternions (angle = 2·acos|q_w|).
    fn sample_rotation(&mut self) -> Matrix3<f64> {
        let min_w = (self.cfg.init_max_tilt / 2.0).cos();
        loop {
            let q = Quaternion::new(
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
            );
            if q.norm() < 1e-9 {
                continue;
            }
            let unit = UnitQuaternion::from_quaternion(q);
            if unit.w.abs() >= min_w {
                return unit.to_rotation_matrix().into_inner();
            }
        }
    }

    /// Uniform draw from the ball of the given radius.
    fn sample_ball(&mut self, radius: f64) -> Vector3<f64> {
        if radius == 0.0 {
            return Vector3::zeros();
        }
        let dir = loop {
            let v = Vector3::new(
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
                self.rng.sample::<f64, _>(StandardNormal),
            );
            if v.norm() > 1e-9 {
                break v.normalize();
            }
        };
        let r = radius * self.rng.random_range(0.0..=1.0f64).cbrt();
        dir * r
    }

    /// Noisy observation of the current state. Gaussian noise is applied
    /// to every entry of the p, R, v, ω blocks (R entries are not
    /// re-orthonormalized); the action history is exact.
    pub fn observe(&mut self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.obs_dim());
        let p = self.state.position - self.position_offset;
        for i in 0..3 {
            obs.push(p[i] + self.noise(self.cfg.pose_noise_std));
        }
        for r in 0..3 {
            for c in 0..3 {
                obs.push(self.state.rotation[(r, c)] + self.noise(self.cfg.pose_noise_std));
            }
        }
        for i in 0..3 {
            obs.push(self.state.velocity[i] + self.noise(self.cfg.twist_noise_std));
        }
        for i in 0..3 {
            obs.push(self.state.body_rates[i] + self.noise(self.cfg.twist_noise_std));
        }
        obs.extend_from_slice(&self.history);
        obs
    }

    fn noise(&mut self, std: f64) -> f64 {
        let n: f64 = self.rng.sample(StandardNormal);
        n * std
    }

    fn push_history(&mut self, action: &[f64; 4]) {
        if self.cfg.action_history == 0 {
            return;
        }
        let len = self.history.len();
        self.history.copy_within(0..len - 4, 4);
        self.history[..4].copy_from_slice(action);
    }

    /// Runs one control step: maps the clipped action to rotor setpoints,
    /// advances the dynamics through all substeps, updates the action
    /// history, and computes the reward from the noiseless post-step
    /// state.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action.len() != 4 || action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::InvalidAction);
        }
        let mut clipped = [0.0; 4];
        for (c, a) in clipped.iter_mut().zip(action) {
            *c = a.clamp(-1.0, 1.0);
        }
        let setpoints = map_action(&clipped, &self.cfg, &self.params);

        let dt = self.cfg.control_dt / self.cfg.substeps as f64;
        let mut diverged = false;
        for _ in 0..self.cfg.substeps {
            match integrate_step(&self.state, &setpoints, dt, &self.params) {
                Ok(next) => self.state = next,
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
        }

        self.push_history(&clipped);
        self.steps_taken += 1;

        let mut shifted = self.state.clone();
        shifted.position -= self.position_offset;
        let terminated = diverged || is_terminal(&shifted, &self.cfg);
        let truncated = self.steps_taken >= self.cfg.episode_steps;
        self.done = terminated || truncated;

        let reward = reward(&shifted, &clipped, &self.cfg.reward);
        let observation = self.observe();
        Ok(StepResult {
            observation,
            reward,
            terminated,
            truncated,
            state: self.state.clone(),
        })
    }
}

/// Per-step record of a simulated episode, dumpable as CSV.
#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub rows: Vec<EpisodeRow>,
}

#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub t: f64,
    pub state: QuadState,
    pub action: [f64; 4],
    pub reward: f64,
}

impl EpisodeLog {
    pub fn push(&mut self, t: f64, state: QuadState, action: [f64; 4], reward: f64) {
        self.rows.push(EpisodeRow {
            t,
            state,
            action,
            reward,
        });
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "t,x,y,z,vx,vy,vz,r11,r12,r13,r21,r22,r23,r31,r32,r33,wx,wy,wz,a1,a2,a3,a4,reward"
        )?;
        for row in &self.rows {
            let s = &row.state;
            write!(out, "{:.6}", row.t)?;
            for v in s.position.iter().chain(s.velocity.iter()) {
                write!(out, ",{v:.9}")?;
            }
            for r in 0..3 {
                for c in 0..3 {
                    write!(out, ",{:.9}", s.rotation[(r, c)])?;
                }
            }
            for v in s.body_rates.iter() {
                write!(out, ",{v:.9}")?;
            }
            for a in row.action {
                write!(out, ",{a:.9}")?;
            }
            writeln!(out, ",{:.9}", row.reward)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MAX_ROTOR_RPM;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quiet_cfg() -> EnvConfig {
        EnvConfig {
            pose_noise_std: 0.0,
            twist_noise_std: 0.0,
            ..EnvConfig::default()
        }
    }

    fn env_with(cfg: EnvConfig, seed: u64) -> QuadEnv {
        QuadEnv::new(QuadParams::crazyflie(), cfg, seed).unwrap()
    }

    fn target_state(params: &QuadParams) -> QuadState {
        QuadState::hover(params)
    }

    #[test]
    fn observation_dimension_is_146_at_default_history() {
        let mut env = env_with(EnvConfig::default(), 0);
        assert_eq!(env.obs_dim(), 146);
        assert_eq!(env.reset().len(), 146);
        let out = env.step(&[0.0; 4]).unwrap();
        assert_eq!(out.observation.len(), 146);
    }

    #[test]
    fn zero_noise_observation_matches_state_exactly() {
        let mut env = env_with(quiet_cfg(), 1);
        let state = QuadState {
            position: Vector3::new(0.05, -0.02, 0.08),
            velocity: Vector3::new(0.3, 0.1, -0.2),
            rotation: crate::dynamics::euler_to_rotation(0.2, -0.1, 0.4),
            body_rates: Vector3::new(0.5, -0.3, 0.2),
            rotor_speeds: [1000.0; 4],
        };
        let obs = env.reset_to(state.clone());
        for i in 0..3 {
            assert_eq!(obs[i], state.position[i]);
        }
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(obs[3 + 3 * r + c], state.rotation[(r, c)]);
            }
        }
        for i in 0..3 {
            assert_eq!(obs[12 + i], state.velocity[i]);
            assert_eq!(obs[15 + i], state.body_rates[i]);
        }
        assert!(obs[18..].iter().all(|&h| h == 0.0));
    }

    #[test]
    fn action_history_most_recent_first_with_padding() {
        let mut env = env_with(quiet_cfg(), 2);
        env.reset_to(target_state(env.params()));
        let steps = [
            [0.1, 0.2, 0.3, 0.4],
            [0.5, 0.6, 0.7, 0.8],
            [-0.1, -0.2, -0.3, -0.4],
        ];
        let mut last_obs = Vec::new();
        for a in &steps {
            last_obs = env.step(a).unwrap().observation;
        }
        let h = &last_obs[18..];
        assert_eq!(&h[0..4], &steps[2]);
        assert_eq!(&h[4..8], &steps[1]);
        assert_eq!(&h[8..12], &steps[0]);
        assert!(h[12..].iter().all(|&v| v == 0.0), "padding must stay zero");
    }

    #[test]
    fn history_stores_clipped_actions() {
        let mut env = env_with(quiet_cfg(), 3);
        env.reset_to(target_state(env.params()));
        let obs = env.step(&[2.0, -3.0, 0.5, 1.0]).unwrap().observation;
        assert_eq!(&obs[18..22], &[1.0, -1.0, 0.5, 1.0]);
    }

    #[test]
    fn map_action_extremes_and_midpoint() {
        let cfg = EnvConfig::default();
        let p = QuadParams::crazyflie();
        let full = map_action(&[1.0; 4], &cfg, &p);
        for w in full {
            assert_relative_eq!(w, MAX_ROTOR_RPM * RPM_TO_RAD, epsilon = 1e-9);
        }
        let floor = map_action(&[-1.0; 4], &cfg, &p);
        assert_eq!(floor, [0.0; 4]);
        let mid = map_action(&[0.0; 4], &cfg, &p);
        for w in mid {
            assert_relative_eq!(w, 2700.0 * RPM_TO_RAD, epsilon = 1e-9);
        }
    }

    #[test]
    fn map_action_clips_out_of_range_input() {
        let cfg = EnvConfig::default();
        let p = QuadParams::crazyflie();
        assert_eq!(
            map_action(&[5.0, -5.0, 1.0, -1.0], &cfg, &p),
            map_action(&[1.0, -1.0, 1.0, -1.0], &cfg, &p)
        );
    }

    #[test]
    fn rpm_to_action_inverts_the_affine_map() {
        let cfg = EnvConfig::default();
        let p = QuadParams::crazyflie();
        for rpm in [0.0, 2700.0, 15000.0, 19661.0, 27102.0] {
            let a = rpm_to_action(rpm, &cfg);
            assert!(a >= -1.0 && a <= 1.0, "rpm {rpm} → a {a}");
            let mapped = map_action(&[a; 4], &cfg, &p);
            assert_relative_eq!(mapped[0], rpm * RPM_TO_RAD, epsilon = 1e-9);
        }
    }

    #[test]
    fn reward_is_survival_bonus_at_target() {
        let p = QuadParams::crazyflie();
        let rp = RewardParams::default();
        let r = reward(&target_state(&p), &[0.35; 4], &rp);
        assert_eq!(r, 2.0);
    }

    #[test]
    fn reward_unit_position_error() {
        let p = QuadParams::crazyflie();
        let rp = RewardParams::default();
        let mut s = target_state(&p);
        s.position = Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(reward(&s, &[0.35; 4], &rp), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn reward_quarter_turn_orientation_error() {
        let p = QuadParams::crazyflie();
        let rp = RewardParams::default();
        let mut s = target_state(&p);
        s.rotation = crate::dynamics::euler_to_rotation(std::f64::consts::FRAC_PI_2, 0.0, 0.0);
        assert_relative_eq!(reward(&s, &[0.35; 4], &rp), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn reward_never_exceeds_survival_bonus() {
        let rp = RewardParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = QuadState {
                position: Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
                velocity: Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
                rotation: crate::dynamics::euler_to_rotation(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-3.0..3.0),
                ),
                body_rates: Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
                rotor_speeds: [0.0; 4],
            };
            let a = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            assert!(reward(&s, &a, &rp) <= rp.survival_bonus);
        }
    }

    #[test]
    fn reward_decreases_with_position_error() {
        let p = QuadParams::crazyflie();
        let rp = RewardParams::default();
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let mut s = target_state(&p);
            s.position = Vector3::new(0.2 * k as f64, 0.0, 0.0);
            let r = reward(&s, &[0.35; 4], &rp);
            assert!(r < last || k == 0);
            last = r;
        }
    }

    #[test]
    fn is_terminal_cases() {
        let cfg = EnvConfig::default();
        let p = QuadParams::crazyflie();
        assert!(!is_terminal(&target_state(&p), &cfg));
        let mut far = target_state(&p);
        far.position = Vector3::new(10.0, 0.0, 0.0);
        assert!(is_terminal(&far, &cfg));
        let mut bad = target_state(&p);
        bad.velocity.y = f64::NAN;
        assert!(is_terminal(&bad, &cfg));
    }

    #[test]
    fn reset_distribution_respects_bounds() {
        let mut env = env_with(EnvConfig::default(), 11);
        let mut saw_large_angle = false;
        for _ in 0..10_000 {
            env.reset();
            let s = env.state();
            assert!(s.position.amax() <= 0.1 + 1e-12);
            let cos_theta = ((s.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            let angle = cos_theta.acos();
            assert!(angle <= std::f64::consts::FRAC_PI_2 + 1e-9);
            if angle > 1.2 {
                saw_large_angle = true;
            }
            assert!(s.velocity.norm() <= 1.0 + 1e-12);
            assert!(s.body_rates.norm() <= 1.0 + 1e-12);
            assert_eq!(s.rotor_speeds, [env.params().hover_speed(); 4]);
        }
        assert!(saw_large_angle, "tilt distribution looks degenerate");
    }

    #[test]
    fn reset_is_deterministic_under_reseed() {
        let mut env = env_with(EnvConfig::default(), 13);
        env.reseed(99);
        let a = env.reset();
        let state_a = env.state().clone();
        env.reseed(99);
        let b = env.reset();
        assert_eq!(a, b);
        assert_eq!(&state_a, env.state());
    }

    #[test]
    fn trajectories_are_deterministic_per_seed() {
        let mut e1 = env_with(EnvConfig::default(), 17);
        let mut e2 = env_with(EnvConfig::default(), 17);
        let o1 = e1.reset();
        let o2 = e2.reset();
        assert_eq!(o1, o2);
        for k in 0..50 {
            let a = [
                (k as f64 * 0.13).sin() * 0.5 + 0.3,
                0.69,
                0.70,
                (k as f64 * 0.07).cos() * 0.4 + 0.3,
            ];
            let r1 = e1.step(&a).unwrap();
            let r2 = e2.step(&a).unwrap();
            assert_eq!(r1.observation, r2.observation);
            assert_eq!(r1.reward, r2.reward);
            if r1.terminated || r1.truncated {
                break;
            }
        }
    }

    #[test]
    fn reward_independent_of_observation_noise() {
        let cfg = EnvConfig::default();
        let mut e1 = env_with(cfg.clone(), 100);
        let mut e2 = env_with(cfg, 200);
        let start = target_state(e1.params());
        e1.reset_to(start.clone());
        e2.reset_to(start);
        let r1 = e1.step(&[0.7; 4]).unwrap();
        let r2 = e2.step(&[0.7; 4]).unwrap();
        assert_eq!(r1.reward, r2.reward);
        assert_ne!(r1.observation, r2.observation);
    }

    #[test]
    fn noise_statistics_match_configuration() {
        let mut env = env_with(EnvConfig::default(), 23);
        let state = target_state(env.params());
        env.reset_to(state.clone());
        let n = 100_000;
        // Entry 0 is p_x (pose noise), entry 3 is R₁₁ (pose noise),
        // entry 12 is v_x and 15 is ω_x (twist noise).
        let checks = [(0usize, 0.0, 0.001), (3, 1.0, 0.001), (12, 0.0, 0.002), (15, 0.0, 0.002)];
        let mut sums = [0.0f64; 4];
        let mut sq_sums = [0.0f64; 4];
        for _ in 0..n {
            let obs = env.observe();
            for (k, (idx, truth, _)) in checks.iter().enumerate() {
                let d = obs[*idx] - truth;
                sums[k] += d;
                sq_sums[k] += d * d;
            }
        }
        for (k, (_, _, std)) in checks.iter().enumerate() {
            let mean = sums[k] / n as f64;
            let var = sq_sums[k] / n as f64 - mean * mean;
            assert!(
                mean.abs() < 3.0 * std / (n as f64).sqrt(),
                "mean {mean} too far from 0 for std {std}"
            );
            assert!(
                (var.sqrt() - std).abs() < 0.05 * std,
                "sample std {} vs configured {std}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn episode_truncates_at_configured_length() {
        let cfg = EnvConfig {
            episode_steps: 30,
            ..quiet_cfg()
        };
        let mut env = env_with(cfg, 31);
        env.reset_to(target_state(env.params()));
        let hover_action = rpm_to_action(
            env.params().hover_speed() / RPM_TO_RAD,
            env.cfg(),
        );
        for k in 1..=30 {
            let out = env.step(&[hover_action; 4]).unwrap();
            assert!(!out.terminated, "hover should not crash at step {k}");
            assert_eq!(out.truncated, k == 30);
        }
        assert_eq!(env.step(&[hover_action; 4]), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn stepping_before_reset_is_rejected() {
        let mut env = env_with(EnvConfig::default(), 37);
        assert_eq!(env.step(&[0.0; 4]), Err(EnvError::NotReset));
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let mut env = env_with(EnvConfig::default(), 41);
        env.reset();
        assert_eq!(env.step(&[0.0; 3]), Err(EnvError::InvalidAction));
        assert_eq!(
            env.step(&[0.0, f64::NAN, 0.0, 0.0]),
            Err(EnvError::InvalidAction)
        );
    }

    #[test]
    fn out_of_bounds_terminates() {
        // Full throttle from rest rockets through the 2 m ceiling.
        let mut env = env_with(quiet_cfg(), 43);
        env.reset_to(target_state(env.params()));
        let mut terminated = false;
        for _ in 0..500 {
            let out = env.step(&[1.0; 4]).unwrap();
            if out.terminated {
                terminated = true;
                assert!(out.state.position.amax() > env.cfg().bounds);
                break;
            }
        }
        assert!(terminated);
    }

    #[test]
    fn position_offset_shifts_obs_reward_and_bounds() {
        let mut env = env_with(quiet_cfg(), 47);
        let mut state = target_state(env.params());
        state.position = Vector3::new(1.0, 0.0, 0.0);
        env.set_position_offset(Vector3::new(1.0, 0.0, 0.0));
        let obs = env.reset_to(state);
        assert_eq!(&obs[..3], &[0.0, 0.0, 0.0]);
        let out = env.step(&[0.35; 4]).unwrap();
        // At the shifted target the position penalty is (almost) zero;
        // drift within one control step is tiny.
        assert!(out.reward > 1.9, "reward {}", out.reward);

        // Termination measured relative to the offset as well.
        let mut far = target_state(env.params());
        far.position = Vector3::new(3.5, 0.0, 0.0);
        env.set_position_offset(Vector3::new(3.5, 0.0, 0.0));
        env.reset_to(far);
        let out = env.step(&[0.35; 4]).unwrap();
        assert!(!out.terminated);
    }

    #[test]
    fn episode_log_csv_shape() {
        let mut log = EpisodeLog::default();
        let p = QuadParams::crazyflie();
        log.push(0.0, target_state(&p), [0.1, 0.2, 0.3, 0.4], 1.5);
        log.push(0.01, target_state(&p), [0.1, 0.2, 0.3, 0.4], 1.4);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 24);
        assert_eq!(lines[1].split(',').count(), 24);
    }

    proptest! {
        #[test]
        fn observation_layout_is_stable(seed in 0u64..500) {
            let mut env = env_with(EnvConfig::default(), seed);
            let obs = env.reset();
            prop_assert_eq!(obs.len(), 146);
            // History block starts zeroed regardless of seed.
            prop_assert!(obs[18..].iter().all(|&h| h == 0.0));
        }

        #[test]
        fn reward_bounded_above_for_any_action(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0,
            az in -1.0f64..1.0, aw in -1.0f64..1.0,
        ) {
            let p = QuadParams::crazyflie();
            let rp = RewardParams::default();
            let r = reward(&QuadState::hover(&p), &[ax, ay, az, aw], &rp);
            prop_assert!(r <= rp.survival_bonus + 1e-15);
        }
    }
}
