//! Cascaded PID baseline: position loop feeding a velocity loop, a
//! small-angle tilt map, an attitude loop, and a body-rate loop whose
//! torque request is allocated to the four rotors by inverting the
//! thrust/torque mixing. Runs on the true simulator state (no observation
//! noise) and serves as the classical comparison controller.
//!
//! Gains are hand-tuned against the simulator's reset distribution; the
//! flight firmware's defaults are not public, so matching them is a
//! non-goal.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{QuadParams, QuadState};

/// Per-loop PID gains plus the clamps that keep each stage's request
/// inside the plant's authority. Clamps must be positive and finite;
/// gains must be non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub pos_kp: f64,
    pub pos_ki: f64,
    pub pos_kd: f64,
    pub vel_kp: f64,
    pub vel_ki: f64,
    pub vel_kd: f64,
    pub att_kp: f64,
    pub att_ki: f64,
    pub att_kd: f64,
    pub rate_kp: f64,
    pub rate_ki: f64,
    pub rate_kd: f64,
    /// Integral accumulator limits, one per loop.
    pub pos_int_clamp: f64,
    pub vel_int_clamp: f64,
    pub att_int_clamp: f64,
    pub rate_int_clamp: f64,
    /// Output limits: desired speed (m/s), tilt (rad), body rate (rad/s),
    /// roll/pitch torque (N·m), yaw torque (N·m).
    pub vel_clamp: f64,
    pub tilt_clamp: f64,
    pub rate_clamp: f64,
    pub torque_clamp_xy: f64,
    pub torque_clamp_z: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            pos_kp: 2.0,
            pos_ki: 0.3,
            pos_kd: 0.0,
            vel_kp: 3.0,
            vel_ki: 0.0,
            vel_kd: 0.0,
            att_kp: 10.0,
            att_ki: 0.0,
            att_kd: 0.0,
            rate_kp: 3.0e-4,
            rate_ki: 0.0,
            rate_kd: 1.0e-5,
            pos_int_clamp: 0.5,
            vel_int_clamp: 1.0,
            att_int_clamp: 0.5,
            rate_int_clamp: 2.0,
            vel_clamp: 2.0,
            tilt_clamp: 0.6,
            rate_clamp: 8.0,
            torque_clamp_xy: 2.0e-3,
            torque_clamp_z: 2.0e-7,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), &'static str> {
        let gains = [
            self.pos_kp, self.pos_ki, self.pos_kd, self.vel_kp, self.vel_ki, self.vel_kd,
            self.att_kp, self.att_ki, self.att_kd, self.rate_kp, self.rate_ki, self.rate_kd,
        ];
        if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err("gains must be finite and non-negative");
        }
        let clamps = [
            self.pos_int_clamp,
            self.vel_int_clamp,
            self.att_int_clamp,
            self.rate_int_clamp,
            self.vel_clamp,
            self.tilt_clamp,
            self.rate_clamp,
            self.torque_clamp_xy,
            self.torque_clamp_z,
        ];
        if clamps.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err("clamps must be finite and positive");
        }
        Ok(())
    }
}

/// Controller memory: integral accumulators (kept inside their clamps)
/// and previous errors for the derivative terms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PidState {
    pub pos_int: Vector3<f64>,
    pub vel_int: Vector3<f64>,
    pub att_int: Vector3<f64>,
    pub rate_int: Vector3<f64>,
    prev_pos_err: Option<Vector3<f64>>,
    prev_vel_err: Option<Vector3<f64>>,
    prev_att_err: Option<Vector3<f64>>,
    prev_rate_err: Option<Vector3<f64>>,
    /// Set when the last allocation left the feasible set.
    pub saturated: bool,
}

impl PidState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidTarget {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl PidTarget {
    pub fn hover_at(position: Vector3<f64>) -> Self {
        Self { position, yaw: 0.0 }
    }
}

fn clamp_vec(v: Vector3<f64>, limit: f64) -> Vector3<f64> {
    v.map(|x| x.clamp(-limit, limit))
}

fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

/// One PID loop: updates the clamped integral, differentiates against the
/// previous error (zero on the first call), returns the raw output.
fn pid_axis3(
    err: Vector3<f64>,
    kp: f64,
    ki: f64,
    kd: f64,
    int: &mut Vector3<f64>,
    int_clamp: f64,
    prev: &mut Option<Vector3<f64>>,
    dt: f64,
) -> Vector3<f64> {
    *int = clamp_vec(*int + err * dt, int_clamp);
    let deriv = match prev {
        Some(p) => (err - *p) / dt,
        None => Vector3::zeros(),
    };
    *prev = Some(err);
    err * kp + *int * ki + deriv * kd
}

/// Inverts the rotor allocation: total thrust F_Σ (N) and body torques τ
/// (N·m) to the four rotor speeds (rad/s). Infeasible components are
/// floored at zero and speeds clamped to Ω_max; the bool reports whether
/// any clamping happened.
pub fn mix_to_motors(f_total: f64, torque: Vector3<f64>, params: &QuadParams) -> ([f64; 4], bool) {
    debug_assert!(f_total >= 0.0);
    let kf = params.thrust_coeff;
    let l = params.arm_length;
    let cd = params.drag_torque_ratio;
    // Ω_i² from the 4×4 allocation: thrust splits evenly, roll comes from
    // the 2/4 pair, pitch from the 3/1 pair, yaw from spin handedness.
    let base = f_total / (4.0 * kf);
    let roll = torque.x / (2.0 * l * kf);
    let pitch = torque.y / (2.0 * l * kf);
    let yaw = torque.z / (4.0 * cd * kf);
    let squares = [
        base - pitch - yaw,
        base + roll + yaw,
        base + pitch - yaw,
        base - roll + yaw,
    ];
    let mut saturated = false;
    let mut speeds = [0.0; 4];
    for (s, &sq) in speeds.iter_mut().zip(&squares) {
        let floored = if sq < 0.0 {
            saturated = true;
            0.0
        } else {
            sq
        };
        let speed = floored.sqrt();
        if speed > params.omega_max {
            saturated = true;
            *s = params.omega_max;
        } else {
            *s = speed;
        }
    }
    (speeds, saturated)
}

/// Full cascade from state and target to rotor-speed setpoints (rad/s).
/// Runs at the caller's control period `dt`.
pub fn pid_control(
    state: &QuadState,
    target: &PidTarget,
    gains: &PidGains,
    pid: &mut PidState,
    dt: f64,
    params: &QuadParams,
) -> [f64; 4] {
    assert!(dt > 0.0, "control period must be positive");
    let g_mag = params.gravity.norm();

    // Position loop: error to desired velocity.
    let e_p = target.position - state.position;
    let v_des = clamp_vec(
        pid_axis3(
            e_p,
            gains.pos_kp,
            gains.pos_ki,
            gains.pos_kd,
            &mut pid.pos_int,
            gains.pos_int_clamp,
            &mut pid.prev_pos_err,
            dt,
        ),
        gains.vel_clamp,
    );

    // Velocity loop: error to desired acceleration (gravity excluded).
    let e_v = v_des - state.velocity;
    let a_cmd = pid_axis3(
        e_v,
        gains.vel_kp,
        gains.vel_ki,
        gains.vel_kd,
        &mut pid.vel_int,
        gains.vel_int_clamp,
        &mut pid.prev_vel_err,
        dt,
    );

    // Small-angle tilt map in the yaw frame: pitch pulls +x, roll pulls −y.
    let r = &state.rotation;
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let (sy, cy) = yaw.sin_cos();
    let ax_b = a_cmd.x * cy + a_cmd.y * sy;
    let ay_b = -a_cmd.x * sy + a_cmd.y * cy;
    let pitch_des = (ax_b / g_mag).clamp(-gains.tilt_clamp, gains.tilt_clamp);
    let roll_des = (-ay_b / g_mag).clamp(-gains.tilt_clamp, gains.tilt_clamp);
    let f_total = (params.mass * (g_mag + a_cmd.z)).clamp(
        0.0,
        4.0 * params.thrust_coeff * params.omega_max * params.omega_max,
    );

    // Attitude loop: Euler error to desired body rates.
    let e_att = Vector3::new(
        roll_des - roll,
        pitch_des - pitch,
        wrap_angle(target.yaw - yaw),
    );
    let omega_des = clamp_vec(
        pid_axis3(
            e_att,
            gains.att_kp,
            gains.att_ki,
            gains.att_kd,
            &mut pid.att_int,
            gains.att_int_clamp,
            &mut pid.prev_att_err,
            dt,
        ),
        gains.rate_clamp,
    );

    // Rate loop: body-rate error to torques.
    let e_rate = omega_des - state.body_rates;
    let tau_raw = pid_axis3(
        e_rate,
        gains.rate_kp,
        gains.rate_ki,
        gains.rate_kd,
        &mut pid.rate_int,
        gains.rate_int_clamp,
        &mut pid.prev_rate_err,
        dt,
    );
    let tau = Vector3::new(
        tau_raw.x.clamp(-gains.torque_clamp_xy, gains.torque_clamp_xy),
        tau_raw.y.clamp(-gains.torque_clamp_xy, gains.torque_clamp_xy),
        tau_raw.z.clamp(-gains.torque_clamp_z, gains.torque_clamp_z),
    );

    let (speeds, saturated) = mix_to_motors(f_total, tau, params);
    pid.saturated = saturated;
    speeds
}
