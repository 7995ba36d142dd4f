//! Cart-pole with a single pole, explicit-Euler discretized.
//!
//! State is `(x, ẋ, θ, θ̇)` with `θ = 0` upright. The action is scaled by
//! `force_mag` after saturation, so the action limit is in policy units.

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::impl_simulator;

use super::control::dlqr;
use super::mlp::MlpPolicy;
use super::ClosedLoop;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's center of mass.
    pub half_length: f64,
    pub force_mag: f64,
    pub dt: f64,
    pub saturation: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            dt: 0.02,
            saturation: 1.0,
        }
    }
}

struct Partials {
    next: Vector4<f64>,
    /// ∂next/∂state
    a: Matrix4<f64>,
    /// ∂next/∂force
    b: Vector4<f64>,
}

impl CartpoleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("half_length", self.half_length),
            ("force_mag", self.force_mag),
            ("dt", self.dt),
            ("saturation", self.saturation),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("cartpole {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn step_with_partials(&self, x: &Vector4<f64>, force: f64) -> Partials {
        let (g, mp, l, dt) = (self.gravity, self.pole_mass, self.half_length, self.dt);
        let mt = self.cart_mass + mp;
        let (pos, vel, theta, omega) = (x[0], x[1], x[2], x[3]);
        let (s, c) = theta.sin_cos();

        let temp = (force + mp * l * omega * omega * s) / mt;
        let dtemp_dtheta = mp * l * omega * omega * c / mt;
        let dtemp_domega = 2.0 * mp * l * omega * s / mt;
        let dtemp_df = 1.0 / mt;

        let den = l * (4.0 / 3.0 - mp * c * c / mt);
        let dden_dtheta = l * 2.0 * mp * c * s / mt;
        let num = g * s - c * temp;
        let dnum_dtheta = g * c + s * temp - c * dtemp_dtheta;
        let dnum_domega = -c * dtemp_domega;
        let dnum_df = -c * dtemp_df;

        let theta_acc = num / den;
        let dtacc_dtheta = (dnum_dtheta * den - num * dden_dtheta) / (den * den);
        let dtacc_domega = dnum_domega / den;
        let dtacc_df = dnum_df / den;

        let k = mp * l / mt;
        let x_acc = temp - k * theta_acc * c;
        let dxacc_dtheta = dtemp_dtheta - k * (dtacc_dtheta * c - theta_acc * s);
        let dxacc_domega = dtemp_domega - k * c * dtacc_domega;
        let dxacc_df = dtemp_df - k * c * dtacc_df;

        let next = Vector4::new(pos + dt * vel, vel + dt * x_acc, theta + dt * omega, omega + dt * theta_acc);
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, dt,  0.0,                0.0,
            0.0, 1.0, dt * dxacc_dtheta,  dt * dxacc_domega,
            0.0, 0.0, 1.0,                dt,
            0.0, 0.0, dt * dtacc_dtheta,  1.0 + dt * dtacc_domega,
        );
        let b = Vector4::new(0.0, dt * dxacc_df, 0.0, dt * dtacc_df);
        Partials { next, a, b }
    }

    /// Linearization `(A, B)` at the upright equilibrium, with `B` in policy
    /// action units.
    pub fn linearization(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = self.step_with_partials(&Vector4::zeros(), 0.0);
        let a = DMatrix::from_iterator(4, 4, p.a.iter().copied());
        let b = DMatrix::from_iterator(4, 1, (p.b * self.force_mag).iter().copied());
        (a, b)
    }
}

#[derive(Clone, Debug)]
pub struct Cartpole {
    params: CartpoleParams,
    policy: MlpPolicy,
}

impl Cartpole {
    pub fn new(params: CartpoleParams, policy: MlpPolicy) -> Result<Self> {
        params.validate()?;
        if policy.input_dim() != 4 || policy.output_dim() != 1 {
            return Err(Error::Policy(format!(
                "cartpole policy must map 4 -> 1, got {} -> {}",
                policy.input_dim(),
                policy.output_dim()
            )));
        }
        Ok(Self { params, policy })
    }

    pub fn with_default_policy(params: CartpoleParams) -> Result<Self> {
        let policy = Self::default_policy(&params)?;
        Self::new(params, policy)
    }

    /// A 32-unit tanh network linearizing to the LQR gain (`Q = I`, `R = 1`).
    pub fn default_policy(params: &CartpoleParams) -> Result<MlpPolicy> {
        params.validate()?;
        let (a, b) = params.linearization();
        let gain = dlqr(&a, &b, &DMatrix::identity(4, 4), &DMatrix::identity(1, 1))?;
        MlpPolicy::tanh_from_gain(&gain, 32, 0.3, 2022)
    }

    pub fn params(&self) -> &CartpoleParams {
        &self.params
    }

    fn force(&self, u: f64) -> f64 {
        self.params.force_mag * u.clamp(-self.params.saturation, self.params.saturation)
    }
}

fn to4(x: &State) -> Vector4<f64> {
    Vector4::new(x[0], x[1], x[2], x[3])
}

impl ClosedLoop for Cartpole {
    fn state_dim(&self) -> usize {
        4
    }

    fn control(&self, x: &State) -> Option<State> {
        Some(self.policy.forward_unchecked(x))
    }

    fn step(&self, x: &State) -> State {
        let u = self.policy.forward_unchecked(x)[0];
        let p = self.params.step_with_partials(&to4(x), self.force(u));
        State::from_column_slice(p.next.as_slice())
    }

    fn vjp(&self, x: &State, cotangent: &State) -> State {
        let u = self.policy.forward_unchecked(x)[0];
        let p = self.params.step_with_partials(&to4(x), self.force(u));
        let ct = to4(cotangent);
        let mut grad = State::from_column_slice((p.a.transpose() * ct).as_slice());
        if u.abs() < self.params.saturation {
            let du = State::from_element(1, p.b.dot(&ct) * self.params.force_mag);
            grad += self.policy.vjp_unchecked(x, &du);
        }
        grad
    }
}

impl_simulator!(Cartpole);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::rollout_terminal;

    #[test]
    fn upright_is_equilibrium() {
        let sys = Cartpole::with_default_policy(CartpoleParams::default()).unwrap();
        assert_eq!(sys.step(&State::zeros(4)), State::zeros(4));
    }

    #[test]
    fn partials_match_finite_differences() {
        let params = CartpoleParams::default();
        let x = Vector4::new(0.1, -0.3, 0.4, 0.7);
        let f = 2.5;
        let p = params.step_with_partials(&x, f);
        let h = 1e-6;
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let d = (params.step_with_partials(&xp, f).next - params.step_with_partials(&xm, f).next)
                / (2.0 * h);
            for i in 0..4 {
                assert!((d[i] - p.a[(i, j)]).abs() < 1e-7, "a[{i},{j}]");
            }
        }
        let d = (params.step_with_partials(&x, f + h).next - params.step_with_partials(&x, f - h).next)
            / (2.0 * h);
        assert!((d - p.b).amax() < 1e-8);
    }

    #[test]
    fn default_policy_balances_small_tilt() {
        let sys = Cartpole::with_default_policy(CartpoleParams::default()).unwrap();
        let x0 = State::from_column_slice(&[0.0, 0.0, 0.05, 0.0]);
        let t = rollout_terminal(&sys, &x0, 1000).unwrap();
        assert!(!t.diverged);
        assert!(t.state.norm() < 1e-3, "{}", t.state);
    }
}
