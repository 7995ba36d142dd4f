//! Inverted pendulum, Euler-discretized, with a saturated torque input.
//!
//! State is `(θ, q)`: angle from upright in radians and angular velocity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::impl_simulator;

use super::control::dlqr;
use super::mlp::MlpPolicy;
use super::ClosedLoop;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub gravity: f64,
    pub dt: f64,
    /// Symmetric torque limit applied before the input enters the dynamics.
    pub saturation: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { mass: 0.15, length: 0.5, damping: 0.05, gravity: 9.81, dt: 0.02, saturation: 0.7 }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("length", self.length),
            ("damping", self.damping),
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("saturation", self.saturation),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("pendulum {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    /// Linearization `(A, B)` at the upright equilibrium.
    pub fn linearization(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[1.0, dt, self.gravity / self.length * dt, 1.0 - self.damping / self.inertia() * dt],
        );
        let b = DMatrix::from_row_slice(2, 1, &[0.0, dt / self.inertia()]);
        (a, b)
    }
}

/// One Euler step of the pendulum with torque `u` clamped to `±saturation`.
pub fn pendulum_step(x: (f64, f64), u: f64, params: &PendulumParams) -> (f64, f64) {
    let (theta, q) = x;
    let PendulumParams { length, damping, gravity, dt, saturation, .. } = *params;
    let ml2 = params.inertia();
    let u = u.clamp(-saturation, saturation);
    let theta_next = theta + q * dt;
    let q_next = q + (gravity / length * theta.sin() - damping / ml2 * q + u / ml2) * dt;
    (theta_next, q_next)
}

/// Pendulum closed with a feedforward policy `u = π(θ, q)`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    params: PendulumParams,
    policy: MlpPolicy,
}

impl Pendulum {
    pub fn new(params: PendulumParams, policy: MlpPolicy) -> Result<Self> {
        params.validate()?;
        if policy.input_dim() != 2 || policy.output_dim() != 1 {
            return Err(Error::Policy(format!(
                "pendulum policy must map 2 -> 1, got {} -> {}",
                policy.input_dim(),
                policy.output_dim()
            )));
        }
        Ok(Self { params, policy })
    }

    /// Pendulum with [`Pendulum::default_policy`].
    pub fn with_default_policy(params: PendulumParams) -> Result<Self> {
        let policy = Self::default_policy(&params)?;
        Self::new(params, policy)
    }

    /// A 16-unit tanh network whose linearization is the LQR gain
    /// (`Q = I`, `R = 1`) of the linearized pendulum.
    pub fn default_policy(params: &PendulumParams) -> Result<MlpPolicy> {
        params.validate()?;
        let (a, b) = params.linearization();
        let gain = dlqr(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1))?;
        MlpPolicy::tanh_from_gain(&gain, 16, 0.3, 2021)
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn policy(&self) -> &MlpPolicy {
        &self.policy
    }
}

impl ClosedLoop for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn control(&self, x: &State) -> Option<State> {
        Some(self.policy.forward_unchecked(x))
    }

    fn step(&self, x: &State) -> State {
        let u = self.policy.forward_unchecked(x)[0];
        let (t, q) = pendulum_step((x[0], x[1]), u, &self.params);
        State::from_column_slice(&[t, q])
    }

    fn vjp(&self, x: &State, cotangent: &State) -> State {
        let PendulumParams { length, damping, gravity, dt, saturation, .. } = self.params;
        let ml2 = self.params.inertia();
        let (p_theta, p_q) = (cotangent[0], cotangent[1]);
        let mut grad = State::from_column_slice(&[
            p_theta + p_q * gravity / length * x[0].cos() * dt,
            p_theta * dt + p_q * (1.0 - damping / ml2 * dt),
        ]);
        let u = self.policy.forward_unchecked(x)[0];
        if u.abs() < saturation {
            let du = State::from_element(1, p_q * dt / ml2);
            grad += self.policy.vjp_unchecked(x, &du);
        }
        grad
    }
}

impl_simulator!(Pendulum);
