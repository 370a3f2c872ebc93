//! Quadcopter flight-policy training stack.
//!
//! The crate simulates a Crazyflie-class quadcopter at the rotor level,
//! trains an end-to-end neural controller (state in, per-motor RPM
//! setpoints out) with twin-delayed deterministic policy gradients, and
//! evaluates it against a cascaded PID baseline on trajectory tracking.
//! Trained policies can be exported as dependency-free C source for
//! microcontroller deployment.

pub mod dynamics;
pub mod env;
pub mod eval;
pub mod export;
pub mod nn;
pub mod pid;
pub mod td3;
