//! Run configuration: one TOML file covering every tunable, with strict
//! unknown-key rejection so typos fail loudly instead of silently using
//! a default. All defaults reproduce the shipped vehicle and training
//! setup; the committed `config/default.toml` only shortens training to
//! a desk-scale step count.

use serde::{Deserialize, Serialize};

use quadpolicy::dynamics::QuadParams;
use quadpolicy::env::EnvConfig;
use quadpolicy::pid::PidGains;
use quadpolicy::td3::Td3Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed: drives environment noise and initial states. The
    /// agent's own stream comes from `td3.seed`, which `--seed` sets
    /// together with this.
    pub seed: u64,
    pub physics: QuadParams,
    pub env: EnvConfig,
    pub td3: Td3Config,
    pub pid: PidGains,
    pub eval: EvalSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            physics: QuadParams::default(),
            env: EnvConfig::default(),
            td3: Td3Config::default(),
            pid: PidGains::default(),
            eval: EvalSection::default(),
            io: IoSection::default(),
        }
    }
}

/// Tracking-evaluation settings: reference trajectory and scoring
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// "circle" or "hover".
    pub trajectory: String,
    /// Circle cycle time [s].
    pub period: f64,
    /// Circle radius [m].
    pub radius: f64,
    /// Circle center / hover point [m].
    pub center: [f64; 3],
    /// Episode length [s].
    pub duration: f64,
    /// Startup window excluded from RMSE [s].
    pub transient_skip: f64,
    /// Start on the ground below the first setpoint instead of on it.
    pub start_on_ground: bool,
    /// Episodes per evaluation command.
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            trajectory: "circle".to_string(),
            period: 6.0,
            radius: 1.0,
            center: [0.0, 0.0, 1.0],
            duration: 6.0,
            transient_skip: 1.0,
            start_on_ground: false,
            episodes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Directory for weights, checkpoints, logs, and reports.
    pub out_dir: String,
    /// Checkpoint every N in-training evaluations (0 disables).
    pub checkpoint_every_evals: u64,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            out_dir: "runs/latest".to_string(),
            checkpoint_every_evals: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.physics
            .validate()
            .map_err(|e| format!("[physics] {e}"))?;
        self.env.validate().map_err(|e| format!("[env] {e}"))?;
        self.td3.validate().map_err(|e| format!("[td3] {e}"))?;
        self.pid.validate().map_err(|e| format!("[pid] {e}"))?;
        match self.eval.trajectory.as_str() {
            "circle" | "hover" => {}
            other => return Err(format!("[eval] unknown trajectory kind {other:?}")),
        }
        if !(self.eval.period > 0.0) {
            return Err("[eval] period must be positive".to_string());
        }
        if !(self.eval.duration > 0.0) {
            return Err("[eval] duration must be positive".to_string());
        }
        if self.eval.radius < 0.0 {
            return Err("[eval] radius must be non-negative".to_string());
        }
        if self.eval.transient_skip < 0.0 {
            return Err("[eval] transient_skip must be non-negative".to_string());
        }
        if self.eval.episodes == 0 {
            return Err("[eval] episodes must be at least 1".to_string());
        }
        Ok(())
    }
}
