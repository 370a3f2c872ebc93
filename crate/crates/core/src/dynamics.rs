//! Rigid-body quadcopter dynamics with rotor thrust/torque generation,
//! first-order motor lag, and a fixed-step RK4 integrator.
//!
//! Equations of motion (Earth frame z-up, R maps body to Earth):
//!
//! ṗ = v
//! m·v̇ = m·g + R·e₃·F_Σ
//! Ṙ = R·skew(ω_b)
//! J·ω̇_b = (J·ω_b) × ω_b + τ
//!
//! Rotor forces follow the plus configuration: motor 1 on +x, motor 2 on +y,
//! motor 3 on -x, motor 4 on -y. Motors 1 and 3 spin opposite to 2 and 4.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Conversion factor from RPM to rad/s.
pub const RPM_TO_RAD: f64 = std::f64::consts::TAU / 60.0;

/// Maximum rotor speed in RPM for the upgraded Crazyflie motors.
pub const MAX_ROTOR_RPM: f64 = 27102.0;

/// Thrust-to-weight ratio used to calibrate the thrust coefficient
/// ("slightly lower than 2" for the thrust-upgraded platform).
pub const THRUST_TO_WEIGHT: f64 = 1.9;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("rotor speed {speed} at index {index} is negative")]
    NegativeRotorSpeed { index: usize, speed: f64 },
    #[error("state became non-finite during integration")]
    NonFiniteState,
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
}

/// Physical constants of the simulated vehicle.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    /// Total mass [kg].
    pub mass: f64,
    /// Gravitational acceleration vector [m/s²], Earth frame (z-up: (0, 0, -9.81)).
    pub gravity: Vector3<f64>,
    /// Arm length from center of mass to each rotor [m].
    pub arm_length: f64,
    /// Thrust coefficient k_f [N/(rad/s)²]; per-rotor thrust is k_f·Ω².
    pub thrust_coeff: f64,
    /// Yaw-torque-to-thrust ratio C_d; yaw torque is C_d·k_f·(±Ω²) terms.
    pub drag_torque_ratio: f64,
    /// Diagonal of the body-frame inertia tensor [kg·m²].
    pub inertia: Vector3<f64>,
    /// Maximum rotor speed [rad/s].
    pub omega_max: f64,
    /// Motor first-order lag time constant [s].
    pub motor_tau: f64,
}

impl QuadParams {
    /// Crazyflie 2.1 (thrust-upgrade kit) simulator parameters.
    ///
    /// The thrust coefficient is calibrated from the thrust-to-weight ratio
    /// and the maximum rotor speed so that full throttle on all four motors
    /// produces `THRUST_TO_WEIGHT` times the vehicle weight.
    pub fn crazyflie() -> Self {
        let omega_max = MAX_ROTOR_RPM * RPM_TO_RAD;
        let mass = 0.033;
        let g = 9.81;
        let thrust_coeff = THRUST_TO_WEIGHT * mass * g / (4.0 * omega_max * omega_max);
        Self {
            mass,
            gravity: Vector3::new(0.0, 0.0, -g),
            arm_length: 0.028,
            thrust_coeff,
            drag_torque_ratio: 9.18e-7,
            inertia: Vector3::new(16.57e-6, 16.66e-6, 29.26e-6),
            omega_max,
            motor_tau: 0.05,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mass > 0.0) {
            return Err(DynamicsError::InvalidParam("mass must be > 0"));
        }
        if !(self.arm_length > 0.0) {
            return Err(DynamicsError::InvalidParam("arm_length must be > 0"));
        }
        if !(self.thrust_coeff > 0.0) {
            return Err(DynamicsError::InvalidParam("thrust_coeff must be > 0"));
        }
        if !(self.inertia.x > 0.0 && self.inertia.y > 0.0 && self.inertia.z > 0.0) {
            return Err(DynamicsError::InvalidParam("inertia entries must be > 0"));
        }
        if !(self.omega_max > 0.0) {
            return Err(DynamicsError::InvalidParam("omega_max must be > 0"));
        }
        if !(self.motor_tau > 0.0) {
            return Err(DynamicsError::InvalidParam("motor_tau must be > 0"));
        }
        Ok(())
    }

    /// Rotor speed [rad/s] at which four equal rotors exactly cancel gravity.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity.norm() / (4.0 * self.thrust_coeff)).sqrt()
    }
}

impl Default for QuadParams {
    fn default() -> Self {
        Self::crazyflie()
    }
}

/// Full simulator state: rigid body plus lagged rotor speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadState {
    /// Position [m], Earth frame.
    pub position: Vector3<f64>,
    /// Velocity [m/s], Earth frame.
    pub velocity: Vector3<f64>,
    /// Orientation, body to Earth.
    pub rotation: Matrix3<f64>,
    /// Angular velocity [rad/s], body frame.
    pub body_rates: Vector3<f64>,
    /// Actual rotor speeds [rad/s] after motor lag.
    pub rotor_speeds: [f64; 4],
}

impl QuadState {
    /// State at rest at the origin with stopped rotors.
    pub fn at_rest() -> Self {
        Self {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            body_rates: Vector3::zeros(),
            rotor_speeds: [0.0; 4],
        }
    }

    /// Level state at the origin with rotors at hover speed.
    pub fn hover(params: &QuadParams) -> Self {
        Self {
            rotor_speeds: [params.hover_speed(); 4],
            ..Self::at_rest()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.rotation.iter().all(|x| x.is_finite())
            && self.body_rates.iter().all(|x| x.is_finite())
            && self.rotor_speeds.iter().all(|x| x.is_finite())
    }

    /// Max-norm deviation of RᵀR from the identity.
    pub fn ortho_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Net thrust and torque produced by the rotors, body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchBody {
    /// Total thrust [N] along body +z.
    pub thrust: f64,
    /// Torque [N·m] about the body axes.
    pub torque: Vector3<f64>,
}

/// Rotation matrix (body to Earth) from roll/pitch/yaw via the ZYX
/// convention: R = Rz(yaw)·Ry(pitch)·Rx(roll).
pub fn euler_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Skew-symmetric matrix such that skew(a)·b = a × b.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Thrust and torques generated by the four rotors:
///
/// F_Σ = k_f·ΣΩᵢ²
/// τ₁ = L·k_f·(Ω₂² − Ω₄²)
/// τ₂ = L·k_f·(Ω₃² − Ω₁²)
/// τ₃ = C_d·k_f·(−Ω₁² + Ω₂² − Ω₃² + Ω₄²)
pub fn rotor_wrench(speeds: &[f64; 4], params: &QuadParams) -> Result<WrenchBody, DynamicsError> {
    for (index, &speed) in speeds.iter().enumerate() {
        if speed < 0.0 {
            return Err(DynamicsError::NegativeRotorSpeed { index, speed });
        }
    }
    let sq = [
        speeds[0] * speeds[0],
        speeds[1] * speeds[1],
        speeds[2] * speeds[2],
        speeds[3] * speeds[3],
    ];
    let kf = params.thrust_coeff;
    Ok(WrenchBody {
        thrust: kf * (sq[0] + sq[1] + sq[2] + sq[3]),
        torque: Vector3::new(
            params.arm_length * kf * (sq[1] - sq[3]),
            params.arm_length * kf * (sq[2] - sq[0]),
            params.drag_torque_ratio * kf * (-sq[0] + sq[1] - sq[2] + sq[3]),
        ),
    })
}

/// One motor-lag update toward the setpoints, exact exponential form:
///
/// Ω' = Ω_set + (Ω − Ω_set)·e^(−dt/τ)
///
/// then clamped to [0, Ω_max]. Composes exactly: n steps of dt equal one
/// step of n·dt.
pub fn motor_lag_step(
    current: &[f64; 4],
    setpoint: &[f64; 4],
    dt: f64,
    motor_tau: f64,
    omega_max: f64,
) -> [f64; 4] {
    debug_assert!(dt > 0.0 && motor_tau > 0.0);
    let decay = (-dt / motor_tau).exp();
    let mut out = [0.0; 4];
    for i in 0..4 {
        let next = setpoint[i] + (current[i] - setpoint[i]) * decay;
        out[i] = next.clamp(0.0, omega_max);
    }
    out
}

/// Time derivative of the rigid-body portion of the state.
#[derive(Debug, Clone)]
pub struct StateDerivative {
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub rotation_dot: Matrix3<f64>,
    pub body_rates_dot: Vector3<f64>,
}

/// Evaluates the equations of motion at `state` under a fixed body wrench.
pub fn dynamics_derivative(
    state: &QuadState,
    wrench: &WrenchBody,
    params: &QuadParams,
) -> StateDerivative {
    let thrust_earth = state.rotation * Vector3::new(0.0, 0.0, wrench.thrust);
    let acceleration = params.gravity + thrust_earth / params.mass;

    let rotation_dot = state.rotation * skew(&state.body_rates);

    let j = &params.inertia;
    let j_omega = Vector3::new(
        j.x * state.body_rates.x,
        j.y * state.body_rates.y,
        j.z * state.body_rates.z,
    );
    let momentum_term = j_omega.cross(&state.body_rates);
    let torque_total = momentum_term + wrench.torque;
    let body_rates_dot = Vector3::new(
        torque_total.x / j.x,
        torque_total.y / j.y,
        torque_total.z / j.z,
    );

    StateDerivative {
        velocity: state.velocity,
        acceleration,
        rotation_dot,
        body_rates_dot,
    }
}

/// Re-orthonormalizes a near-rotation matrix by Gram-Schmidt on its columns,
/// preserving det = +1 for inputs near SO(3).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let c1_raw = r.column(1).into_owned();
    let c1 = (c1_raw - c0 * c0.dot(&c1_raw)).normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

fn add_scaled(state: &QuadState, deriv: &StateDerivative, h: f64) -> QuadState {
    QuadState {
        position: state.position + deriv.velocity * h,
        velocity: state.velocity + deriv.acceleration * h,
        rotation: state.rotation + deriv.rotation_dot * h,
        body_rates: state.body_rates + deriv.body_rates_dot * h,
        rotor_speeds: state.rotor_speeds,
    }
}

/// Advances the state by `dt`: one motor-lag update toward `setpoints`,
/// then a classical RK4 step of the rigid-body dynamics under the
/// resulting (constant) wrench, then rotation re-orthonormalization.
///
/// `dt` must be in (0, 0.01].
pub fn integrate_step(
    state: &QuadState,
    setpoints: &[f64; 4],
    dt: f64,
    params: &QuadParams,
) -> Result<QuadState, DynamicsError> {
    assert!(dt > 0.0 && dt <= 0.01, "dt must be in (0, 0.01], got {dt}");
    if !state.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }

    let rotor_speeds = motor_lag_step(
        &state.rotor_speeds,
        setpoints,
        dt,
        params.motor_tau,
        params.omega_max,
    );
    let mut s = state.clone();
    s.rotor_speeds = rotor_speeds;
    let wrench = rotor_wrench(&rotor_speeds, params)?;

    let k1 = dynamics_derivative(&s, &wrench, params);
    let k2 = dynamics_derivative(&add_scaled(&s, &k1, dt / 2.0), &wrench, params);
    let k3 = dynamics_derivative(&add_scaled(&s, &k2, dt / 2.0), &wrench, params);
    let k4 = dynamics_derivative(&add_scaled(&s, &k3, dt), &wrench, params);

    let sixth = dt / 6.0;
    let mut next = QuadState {
        position: s.position
            + (k1.velocity + k2.velocity * 2.0 + k3.velocity * 2.0 + k4.velocity) * sixth,
        velocity: s.velocity
            + (k1.acceleration + k2.acceleration * 2.0 + k3.acceleration * 2.0 + k4.acceleration)
                * sixth,
        rotation: s.rotation
            + (k1.rotation_dot
                + k2.rotation_dot * 2.0
                + k3.rotation_dot * 2.0
                + k4.rotation_dot)
                * sixth,
        body_rates: s.body_rates
            + (k1.body_rates_dot
                + k2.body_rates_dot * 2.0
                + k3.body_rates_dot * 2.0
                + k4.body_rates_dot)
                * sixth,
        rotor_speeds,
    };
    next.rotation = orthonormalize(&next.rotation);

    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(next)
}
