//! Gradient of the terminal objective `L_T(ξ) = ‖g_T(ξ)‖²`.
//!
//! Two backends: an exact costate sweep for systems whose step is known and
//! differentiable, and a forward-difference estimate that only needs
//! terminal states from a black-box simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::systems::{simulate, Simulator, Terminal, OVERFLOW_BOUND};

/// Default finite-difference step relative to `max(1, ‖ξ‖)`.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum GradientBackend {
    Costate,
    FiniteDifference {
        /// Fixed step; `None` uses `1e-4 · max(1, ‖ξ‖)`.
        #[serde(default)]
        epsilon: Option<f64>,
        /// Central instead of forward differences (2n + 1 simulations).
        #[serde(default)]
        central: bool,
    },
}

impl Default for GradientBackend {
    fn default() -> Self {
        GradientBackend::FiniteDifference { epsilon: None, central: false }
    }
}

impl GradientBackend {
    pub fn forward_difference() -> Self {
        Self::default()
    }

    pub fn central_difference(epsilon: f64) -> Self {
        GradientBackend::FiniteDifference { epsilon: Some(epsilon), central: true }
    }

    pub fn validate(&self) -> Result<()> {
        if let GradientBackend::FiniteDifference { epsilon: Some(e), .. } = self {
            if !(e.is_finite() && *e > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {e}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientResult {
    pub gradient: State,
    /// `L_T(ξ)`, `+∞` when the rollout from `ξ` diverged.
    pub value: f64,
    pub simulations: usize,
    /// The rollout from `ξ` itself diverged; `gradient` is meaningless.
    pub diverged: bool,
    /// Perturbed rollouts that diverged (finite differences only).
    pub diverged_probes: usize,
}

/// Objective assigned to a diverged finite-difference probe: the value of a
/// state sitting on the overflow bound in every component.
fn diverged_surrogate(dim: usize) -> f64 {
    dim as f64 * OVERFLOW_BOUND * OVERFLOW_BOUND
}

fn score(t: &Terminal, dim: usize) -> f64 {
    if t.diverged {
        diverged_surrogate(dim)
    } else {
        t.state.norm_squared()
    }
}

pub fn default_epsilon(xi: &State) -> f64 {
    DEFAULT_RELATIVE_EPSILON * xi.norm().max(1.0)
}

pub fn gradient(sim: &dyn Simulator, xi: &State, horizon: usize, backend: GradientBackend) -> Result<GradientResult> {
    match backend {
        GradientBackend::Costate => grad_costate(sim, xi, horizon),
        GradientBackend::FiniteDifference { epsilon, central } => {
            let eps = epsilon.unwrap_or_else(|| default_epsilon(xi));
            if central {
                grad_central(sim, xi, horizon, eps)
            } else {
                grad_fd(sim, xi, horizon, eps)
            }
        }
    }
}

/// Exact gradient by a forward rollout followed by the backward costate
/// recursion `p_T = 2x_T`, `p_t = J(x_t)ᵀ p_{t+1}`; returns `p_0`.
pub fn grad_costate(sim: &dyn Simulator, xi: &State, horizon: usize) -> Result<GradientResult> {
    let sys = sim.closed_loop().ok_or_else(|| {
        Error::Unsupported("costate gradients need a model-based simulator".into())
    })?;
    let traj = simulate(sys, xi, horizon)?;
    if traj.diverged_at.is_some() {
        return Ok(GradientResult {
            gradient: State::zeros(xi.len()),
            value: f64::INFINITY,
            simulations: 1,
            diverged: true,
            diverged_probes: 0,
        });
    }
    let terminal = traj.states.last().expect("x_0 present");
    let value = terminal.norm_squared();
    let mut costate = terminal * 2.0;
    for x in traj.states[..horizon].iter().rev() {
        costate = sys.vjp(x, &costate);
    }
    Ok(GradientResult { gradient: costate, value, simulations: 1, diverged: false, diverged_probes: 0 })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {eps}")));
    }
    Ok(())
}

/// Forward differences `Γ_j = (L(ξ + εe_j) − L(ξ)) / ε` from exactly
/// `n + 1` simulations, issued as one batch.
///
/// A diverged probe is scored as a state on the overflow bound so the
/// estimate still points toward the blow-up.
pub fn grad_fd(sim: &dyn Simulator, xi: &State, horizon: usize, eps: f64) -> Result<GradientResult> {
    check_eps(eps)?;
    let n = xi.len();
    let mut points = Vec::with_capacity(n + 1);
    points.push(xi.clone());
    for j in 0..n {
        let mut p = xi.clone();
        p[j] += eps;
        points.push(p);
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("finite-difference probe".into()));
    }
    let terminals = sim.terminal_batch(&points, horizon)?;
    let diverged_probes = terminals[1..].iter().filter(|t| t.diverged).count();
    if terminals[0].diverged {
        return Ok(GradientResult {
            gradient: State::zeros(n),
            value: f64::INFINITY,
            simulations: n + 1,
            diverged: true,
            diverged_probes,
        });
    }
    let values: Vec<f64> = terminals.iter().map(|t| score(t, n)).collect();
    let gradient = State::from_iterator(n, values[1..].iter().map(|v| (v - values[0]) / eps));
    Ok(GradientResult { gradient, value: values[0], simulations: n + 1, diverged: false, diverged_probes })
}

/// Central differences from `2n + 1` simulations. Used as an oracle.
pub fn grad_central(sim: &dyn Simulator, xi: &State, horizon: usize, eps: f64) -> Result<GradientResult> {
    check_eps(eps)?;
    let n = xi.len();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(xi.clone());
    for j in 0..n {
        for sign in [1.0, -1.0] {
            let mut p = xi.clone();
            p[j] += sign * eps;
            points.push(p);
        }
    }
    let terminals = sim.terminal_batch(&points, horizon)?;
    let diverged_probes = terminals[1..].iter().filter(|t| t.diverged).count();
    if terminals[0].diverged {
        return Ok(GradientResult {
            gradient: State::zeros(n),
            value: f64::INFINITY,
            simulations: 2 * n + 1,
            diverged: true,
            diverged_probes,
        });
    }
    let gradient = State::from_iterator(
        n,
        (0..n).map(|j| (score(&terminals[1 + 2 * j], n) - score(&terminals[2 + 2 * j], n)) / (2.0 * eps)),
    );
    Ok(GradientResult {
        gradient,
        value: terminals[0].state.norm_squared(),
        simulations: 2 * n + 1,
        diverged: false,
        diverged_probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{CountingSimulator, Cubic, Linear};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> State {
        State::from_column_slice(xs)
    }

    #[test]
    fn costate_scalar_linear() {
        let sys = Linear::new(0.5, 1);
        let g = grad_costate(&sys, &v(&[1.0]), 2).unwrap();
        assert_relative_eq!(g.gradient[0], 2.0 * 0.5f64.powi(4), epsilon = 1e-15);
        assert_relative_eq!(g.value, 0.5f64.powi(4), epsilon = 1e-15);
    }

    #[test]
    fn costate_at_equilibrium_is_zero() {
        let sys = Cubic::identity(2);
        let g = grad_costate(&sys, &State::zeros(2), 100).unwrap();
        assert_eq!(g.gradient, State::zeros(2));
    }

    #[test]
    fn forward_difference_of_quadratic() {
        let sys = Linear::new(1.0, 2);
        let g = grad_fd(&sys, &v(&[1.0, 2.0]), 0, 1e-3).unwrap();
        assert_relative_eq!(g.gradient, v(&[2.001, 4.001]), epsilon = 1e-9);
        assert_eq!(g.simulations, 3);
    }

    #[test]
    fn forward_difference_vanishes_at_equilibrium() {
        let a: f64 = 0.8;
        let sys = Linear::new(a, 3);
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6] {
            let g = grad_fd(&sys, &State::zeros(3), 5, eps).unwrap();
            let bound = eps * a.powi(10);
            assert!(g.gradient.iter().all(|c| c.abs() <= bound * (1.0 + 1e-9)));
            assert!(g.gradient.amax() < last);
            last = g.gradient.amax();
        }
    }

    #[test]
    fn exact_simulation_budget() {
        let sim = CountingSimulator::new(Cubic::identity(5));
        let xi = State::from_element(5, 0.1);
        grad_fd(&sim, &xi, 10, 1e-5).unwrap();
        assert_eq!(sim.calls(), 6);
    }

    #[test]
    fn costate_unsupported_for_black_box() {
        struct Opaque;
        impl Simulator for Opaque {
            fn state_dim(&self) -> usize {
                1
            }
            fn terminal(&self, x0: &State, _: usize) -> Result<crate::systems::Terminal> {
                Ok(crate::systems::Terminal { state: x0.clone(), diverged: false })
            }
        }
        assert!(matches!(grad_costate(&Opaque, &v(&[1.0]), 1), Err(Error::Unsupported(_))));
        assert!(grad_fd(&Opaque, &v(&[1.0]), 1, 1e-3).is_ok());
    }

    #[test]
    fn diverged_base_is_flagged() {
        let sys = Linear::new(100.0, 2);
        let g = grad_fd(&sys, &v(&[1.0, 1.0]), 10, 1e-3).unwrap();
        assert!(g.diverged);
        assert_eq!(g.value, f64::INFINITY);
        assert_eq!(g.diverged_probes, 2);
        let c = grad_costate(&sys, &v(&[1.0, 1.0]), 10).unwrap();
        assert!(c.diverged);
    }

    #[test]
    fn diverged_probe_points_toward_blowup() {
        // xT = 10^T x: base stays below the bound, the probe does not.
        let sys = Linear::new(10.0, 1);
        let g = grad_fd(&sys, &v(&[0.999_999]), 6, 1e-3).unwrap();
        assert!(!g.diverged);
        assert_eq!(g.diverged_probes, 1);
        assert!(g.gradient[0] > 0.0);
    }
}
