//! Tracking evaluation: reference trajectories, closed-loop rollouts for
//! any controller, and RMSE metrics with side-by-side comparison reports.
//!
//! The learned policy only ever trained to drive its observed position to
//! zero, so tracking works by observation shift: the environment's
//! position offset is set to the current setpoint and the policy chases
//! the resulting error. Setpoints stream at 50 Hz and are held between
//! updates while control runs at the full env rate.

use std::io::Write;

use nalgebra::Vector3;
use thiserror::Error;

use crate::dynamics::{QuadParams, QuadState, RPM_TO_RAD};
use crate::env::{rpm_to_action, EnvConfig, EnvError, QuadEnv};
use crate::nn::{Mlp, NnError};
use crate::pid::{pid_control, PidGains, PidState, PidTarget};

/// Setpoint streaming rate [Hz], held between updates.
pub const SETPOINT_RATE_HZ: f64 = 50.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory rejected: {0}")]
    BadTrajectory(&'static str),
    #[error("log has no samples in the scoring window")]
    EmptyLog,
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("network: {0}")]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TrajectoryKind {
    Circle,
    Hover,
}

/// Reference trajectory: a parametric desired position over a finite run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    kind: TrajectoryKind,
    /// Cycle time [s] (unused for hover).
    pub period: f64,
    /// Circle radius [m] (zero for hover).
    pub radius: f64,
    /// Circle center / hover point [m].
    pub center: Vector3<f64>,
    /// Total run length [s].
    pub duration: f64,
}

impl Trajectory {
    pub fn circle(
        period: f64,
        radius: f64,
        center: Vector3<f64>,
        duration: f64,
    ) -> Result<Self, EvalError> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(EvalError::BadTrajectory("period must be positive"));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(EvalError::BadTrajectory("duration must be positive"));
        }
        if !radius.is_finite() || radius < 0.0 {
            return Err(EvalError::BadTrajectory("radius must be non-negative"));
        }
        Ok(Self {
            kind: TrajectoryKind::Circle,
            period,
            radius,
            center,
            duration,
        })
    }

    pub fn hover(center: Vector3<f64>, duration: f64) -> Result<Self, EvalError> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(EvalError::BadTrajectory("duration must be positive"));
        }
        Ok(Self {
            kind: TrajectoryKind::Hover,
            period: 1.0,
            radius: 0.0,
            center,
            duration,
        })
    }

    /// Desired position at time `t` [s].
    pub fn desired(&self, t: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::Circle => circle_point(t, self.period, self.radius, self.center),
            TrajectoryKind::Hover => self.center,
        }
    }
}

/// Point on a circle in the xy-plane: center + radius·(cos φ, sin φ, 0)
/// with φ = 2πt/T. Starts on the +x side of the center.
pub fn circle_point(t: f64, period: f64, radius: f64, center: Vector3<f64>) -> Vector3<f64> {
    let phase = std::f64::consts::TAU * t / period;
    center + radius * Vector3::new(phase.cos(), phase.sin(), 0.0)
}

/// One control step of a tracking run.
#[derive(Debug, Clone)]
pub struct TrackingRow {
    /// Time since episode start [s].
    pub t: f64,
    /// Setpoint in effect at `t` (held between 50 Hz updates).
    pub desired: Vector3<f64>,
    /// True position at `t`, before the step's action takes effect.
    pub position: Vector3<f64>,
    /// True velocity at `t`.
    pub velocity: Vector3<f64>,
    /// Normalized action commanded at `t`.
    pub action: [f64; 4],
}

/// Closed-loop tracking record at a uniform sample period.
#[derive(Debug, Clone)]
pub struct TrackingLog {
    pub rows: Vec<TrackingRow>,
    /// Spacing between rows [s].
    pub sample_period: f64,
    /// True when the run ended early in a terminal state.
    pub crashed: bool,
}

impl TrackingLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,xd,yd,zd,x,y,z,vx,vy,vz,a1,a2,a3,a4")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                r.t,
                r.desired.x,
                r.desired.y,
                r.desired.z,
                r.position.x,
                r.position.y,
                r.position.z,
                r.velocity.x,
                r.velocity.y,
                r.velocity.z,
                r.action[0],
                r.action[1],
                r.action[2],
                r.action[3],
            )?;
        }
        Ok(())
    }
}

/// Anything that can close the loop: maps the current observation (for
/// learned policies) or the true state plus setpoint (for the PID
/// cascade) to a normalized action.
pub trait TrackingController {
    fn begin_episode(&mut self) {}
    fn act(
        &mut self,
        observation: &[f64],
        state: &QuadState,
        desired: Vector3<f64>,
    ) -> Result<[f64; 4], EvalError>;
    fn name(&self) -> &str;
}

/// Learned policy acting on the shifted observation; ignores the true
/// state.
pub struct PolicyController {
    actor: Mlp,
    label: String,
}

impl PolicyController {
    pub fn new(actor: Mlp) -> Self {
        Self {
            actor,
            label: "policy".to_string(),
        }
    }

    pub fn with_label(actor: Mlp, label: impl Into<String>) -> Self {
        Self {
            actor,
            label: label.into(),
        }
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }
}

impl TrackingController for PolicyController {
    fn act(
        &mut self,
        observation: &[f64],
        _state: &QuadState,
        _desired: Vector3<f64>,
    ) -> Result<[f64; 4], EvalError> {
        let a = crate::td3::policy_action(&self.actor, observation)?;
        Ok([a[0], a[1], a[2], a[3]])
    }

    fn name(&self) -> &str {
        &self.label
    }
}

/// Cascaded PID acting on the true state; ignores the observation. Rotor
/// speed setpoints are translated back through the env's normalized
/// action map, which is affine and loses nothing.
pub struct PidController {
    gains: PidGains,
    state: PidState,
    params: QuadParams,
    cfg: EnvConfig,
    label: String,
}

impl PidController {
    pub fn new(gains: PidGains, params: QuadParams, cfg: EnvConfig) -> Self {
        Self {
            gains,
            state: PidState::new(),
            params,
            cfg,
            label: "pid".to_string(),
        }
    }
}

impl TrackingController for PidController {
    fn begin_episode(&mut self) {
        self.state = PidState::new();
    }

    fn act(
        &mut self,
        _observation: &[f64],
        state: &QuadState,
        desired: Vector3<f64>,
    ) -> Result<[f64; 4], EvalError> {
        let speeds = pid_control(
            state,
            &PidTarget::hover_at(desired),
            &self.gains,
            &mut self.state,
            self.cfg.control_dt,
            &self.params,
        );
        let mut action = [0.0; 4];
        for (a, s) in action.iter_mut().zip(&speeds) {
            *a = rpm_to_action(s / RPM_TO_RAD, &self.cfg).clamp(-1.0, 1.0);
        }
        Ok(action)
    }

    fn name(&self) -> &str {
        &self.label
    }
}

/// Where the vehicle starts a tracking run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartCondition {
    /// At rest on the reference point, rotors at hover speed.
    AtReference,
    /// At rest on the ground (z = 0) below the reference's first point;
    /// the run begins with a takeoff transient.
    OnGround,
}

/// Runs one closed-loop tracking episode and logs every control step.
///
/// The env's episode length is overridden to cover the trajectory
/// duration exactly. Early termination (leaving the error box, solver
/// divergence) truncates the log and sets the crash marker.
pub fn run_tracking(
    controller: &mut dyn TrackingController,
    trajectory: &Trajectory,
    params: &QuadParams,
    cfg: &EnvConfig,
    seed: u64,
    start: StartCondition,
) -> Result<TrackingLog, EvalError> {
    let mut cfg = cfg.clone();
    let steps = (trajectory.duration / cfg.control_dt).round() as usize;
    cfg.episode_steps = steps.max(1);
    let control_dt = cfg.control_dt;
    let hold_steps = ((1.0 / (SETPOINT_RATE_HZ * control_dt)).round() as usize).max(1);

    let mut env = QuadEnv::new(params.clone(), cfg, seed)?;
    let start_ref = trajectory.desired(0.0);
    let position = match start {
        StartCondition::AtReference => start_ref,
        StartCondition::OnGround => Vector3::new(start_ref.x, start_ref.y, 0.0),
    };
    env.reset_to(QuadState {
        position,
        velocity: Vector3::zeros(),
        rotation: nalgebra::Matrix3::identity(),
        body_rates: Vector3::zeros(),
        rotor_speeds: [params.hover_speed(); 4],
    });

    controller.begin_episode();
    let mut rows = Vec::with_capacity(env.cfg().episode_steps);
    let mut crashed = false;
    let mut held = trajectory.desired(0.0);
    let mut state = env.state().clone();
    for k in 0..env.cfg().episode_steps {
        let t = k as f64 * control_dt;
        if k % hold_steps == 0 {
            held = trajectory.desired(t);
            env.set_position_offset(held);
        }
        // Observe after any setpoint change so the policy sees the error
        // against the setpoint in effect now.
        let obs = env.observe();
        let action = controller.act(&obs, &state, held)?;
        rows.push(TrackingRow {
            t,
            desired: held,
            position: state.position,
            velocity: state.velocity,
            action,
        });
        let res = env.step(&action)?;
        state = res.state;
        if res.terminated {
            crashed = true;
            break;
        }
        if res.truncated {
            break;
        }
    }

    Ok(TrackingLog {
        rows,
        sample_period: control_dt,
        crashed,
    })
}

/// Tracking RMSE over all samples: full 3-axis error ē and the planar
/// ē_xy that ignores altitude. Each sample contributes its squared error
/// averaged over the participating axes.
pub fn rmse(log: &TrackingLog) -> Result<(f64, f64), EvalError> {
    rmse_after(log, 0.0)
}

/// Same as [`rmse`] but scores only samples with `t >= skip_seconds`,
/// excluding a startup transient.
pub fn rmse_after(log: &TrackingLog, skip_seconds: f64) -> Result<(f64, f64), EvalError> {
    let mut n = 0usize;
    let mut sum3 = 0.0;
    let mut sum2 = 0.0;
    for r in &log.rows {
        if r.t < skip_seconds {
            continue;
        }
        let d = r.position - r.desired;
        sum3 += (d.x * d.x + d.y * d.y + d.z * d.z) / 3.0;
        sum2 += (d.x * d.x + d.y * d.y) / 2.0;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::EmptyLog);
    }
    Ok(((sum3 / n as f64).sqrt(), (sum2 / n as f64).sqrt()))
}

/// One controller's scores within a comparison.
#[derive(Debug, Clone)]
pub struct ControllerScore {
    pub name: String,
    /// Full 3-axis RMSE [m].
    pub rmse: f64,
    /// Planar RMSE [m], altitude excluded.
    pub rmse_xy: f64,
    pub crashed: bool,
    /// Peak ground-truth speed over the scored window [m/s].
    pub peak_speed: f64,
}

/// Side-by-side tracking comparison over one trajectory and seed.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub scores: Vec<ControllerScore>,
    pub seed: u64,
    pub trajectory: String,
    /// Transient excluded from scoring [s].
    pub transient_skip: f64,
}

impl ComparisonReport {
    /// Scores each controller on its own env instance with a shared seed.
    pub fn run(
        controllers: &mut [&mut dyn TrackingController],
        trajectory: &Trajectory,
        params: &QuadParams,
        cfg: &EnvConfig,
        seed: u64,
        transient_skip: f64,
        start: StartCondition,
    ) -> Result<Self, EvalError> {
        let mut scores = Vec::with_capacity(controllers.len());
        for c in controllers.iter_mut() {
            let log = run_tracking(*c, trajectory, params, cfg, seed, start)?;
            let (e3, exy) = rmse_after(&log, transient_skip)?;
            let peak = log
                .rows
                .iter()
                .filter(|r| r.t >= transient_skip)
                .map(|r| r.velocity.norm())
                .fold(0.0, f64::max);
            scores.push(ControllerScore {
                name: c.name().to_string(),
                rmse: e3,
                rmse_xy: exy,
                crashed: log.crashed,
                peak_speed: peak,
            });
        }
        let descr = match trajectory.kind {
            TrajectoryKind::Circle => format!(
                "circle r={} m T={} s center=({},{},{}) for {} s",
                trajectory.radius,
                trajectory.period,
                trajectory.center.x,
                trajectory.center.y,
                trajectory.center.z,
                trajectory.duration
            ),
            TrajectoryKind::Hover => format!(
                "hover at ({},{},{}) for {} s",
                trajectory.center.x, trajectory.center.y, trajectory.center.z, trajectory.duration
            ),
        };
        Ok(Self {
            scores,
            seed,
            trajectory: descr,
            transient_skip,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "controller,rmse,rmse_xy,crashed,peak_speed")?;
        for s in &self.scores {
            writeln!(
                out,
                "{},{:.9},{:.9},{},{:.9}",
                s.name, s.rmse, s.rmse_xy, s.crashed, s.peak_speed
            )?;
        }
        Ok(())
    }

    /// Human-readable table, one row per controller.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "trajectory: {}\nseed: {}  transient excluded: {} s\n\n",
            self.trajectory, self.seed, self.transient_skip
        ));
        out.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>12} {:>8}\n",
            "controller", "rmse [m]", "rmse_xy [m]", "peak [m/s]", "crashed"
        ));
        for s in &self.scores {
            out.push_str(&format!(
                "{:<12} {:>10.4} {:>10.4} {:>12.3} {:>8}\n",
                s.name, s.rmse, s.rmse_xy, s.peak_speed, s.crashed
            ));
        }
        out
    }
}
