//! Closed-loop simulators: the map from an initial state to the state after
//! `T` steps.
//!
//! Built-in systems implement [`ClosedLoop`] (one step of the autonomous
//! closed-loop map plus its vector-Jacobian product) and get a [`Simulator`]
//! implementation for free via [`impl_simulator!`]. Black-box systems only
//! implement [`Simulator`].

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::State;

pub mod cartpole;
pub mod control;
pub mod cubic;
pub mod external;
pub mod linear;
pub mod mlp;
pub mod pendulum;
pub mod spec;

pub use cartpole::{Cartpole, CartpoleParams};
pub use cubic::{true_roa_radius_cubic, Cubic};
pub use external::ExternalSimulator;
pub use linear::Linear;
pub use mlp::{Activation, Layer, MlpPolicy};
pub use pendulum::{pendulum_step, Pendulum, PendulumParams};
pub use spec::{MatrixSpec, PolicySource, SystemSpec};

/// Any state component beyond this magnitude marks the rollout as diverged.
pub const OVERFLOW_BOUND: f64 = 1e6;

/// The state reached at the horizon.
///
/// When the rollout diverged, `state` is the last state that stayed within
/// [`OVERFLOW_BOUND`].
#[derive(Clone, Debug, PartialEq)]
pub struct Terminal {
    pub state: State,
    pub diverged: bool,
}

impl Terminal {
    /// `‖x_T‖²`, or `+∞` for a diverged rollout.
    pub fn objective(&self) -> f64 {
        if self.diverged {
            f64::INFINITY
        } else {
            self.state.norm_squared()
        }
    }
}

pub(crate) fn out_of_bounds(x: &State) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_BOUND)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `x_0 ..= x_T`, truncated after the last in-bound state if diverged.
    pub states: Vec<State>,
    /// `u_0 .. u_{T-1}` for systems with an explicit control input.
    pub controls: Vec<State>,
    /// Step index at which the state first left the overflow bound.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn terminal(&self) -> Terminal {
        Terminal {
            state: self.states.last().cloned().expect("trajectory has x_0"),
            diverged: self.diverged_at.is_some(),
        }
    }
}

/// A memoryless, differentiable closed-loop map `x_{t+1} = f(x_t)`.
pub trait ClosedLoop: Send + Sync {
    fn state_dim(&self) -> usize;

    fn step(&self, x: &State) -> State;

    /// The control applied at `x`, for systems that have one.
    fn control(&self, _x: &State) -> Option<State> {
        None
    }

    /// `J_f(x)ᵀ · cotangent`.
    fn vjp(&self, x: &State, cotangent: &State) -> State;
}

/// Produces `g_T(x_0)`.
pub trait Simulator: Send + Sync {
    fn state_dim(&self) -> usize;

    fn terminal(&self, x0: &State, horizon: usize) -> Result<Terminal>;

    /// Evaluates several initial states; results are index-aligned with `x0s`.
    fn terminal_batch(&self, x0s: &[State], horizon: usize) -> Result<Vec<Terminal>> {
        x0s.par_iter().map(|x0| self.terminal(x0, horizon)).collect()
    }

    /// The differentiable step, when the dynamics are known.
    fn closed_loop(&self) -> Option<&dyn ClosedLoop> {
        None
    }
}

/// Implements [`Simulator`] for a [`ClosedLoop`] type by direct rollout.
#[macro_export]
macro_rules! impl_simulator {
    ($ty:ty) => {
        impl $crate::systems::Simulator for $ty {
            fn state_dim(&self) -> usize {
                $crate::systems::ClosedLoop::state_dim(self)
            }

            fn terminal(
                &self,
                x0: &$crate::geometry::State,
                horizon: usize,
            ) -> $crate::error::Result<$crate::systems::Terminal> {
                $crate::systems::rollout_terminal(self, x0, horizon)
            }

            fn closed_loop(&self) -> Option<&dyn $crate::systems::ClosedLoop> {
                Some(self)
            }
        }
    };
}

fn check_initial(dim: usize, x0: &State) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    Ok(())
}

/// Runs `horizon` steps and keeps only the final state.
pub fn rollout_terminal(sys: &(impl ClosedLoop + ?Sized), x0: &State, horizon: usize) -> Result<Terminal> {
    check_initial(sys.state_dim(), x0)?;
    let mut x = x0.clone();
    for _ in 0..horizon {
        let next = sys.step(&x);
        if out_of_bounds(&next) {
            return Ok(Terminal { state: x, diverged: true });
        }
        x = next;
    }
    Ok(Terminal { state: x, diverged: false })
}

/// Runs `horizon` steps and keeps the full state and control history.
pub fn simulate(sys: &(impl ClosedLoop + ?Sized), x0: &State, horizon: usize) -> Result<Trajectory> {
    check_initial(sys.state_dim(), x0)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::new();
    states.push(x0.clone());
    for t in 0..horizon {
        let x = &states[t];
        if let Some(u) = sys.control(x) {
            controls.push(u);
        }
        let next = sys.step(x);
        if out_of_bounds(&next) {
            return Ok(Trajectory { states, controls, diverged_at: Some(t + 1) });
        }
        states.push(next);
    }
    Ok(Trajectory { states, controls, diverged_at: None })
}

/// Counts every initial state evaluated by the wrapped simulator.
pub struct CountingSimulator<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S: Simulator> CountingSimulator<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Simulator> Simulator for CountingSimulator<S> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn terminal(&self, x0: &State, horizon: usize) -> Result<Terminal> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.terminal(x0, horizon)
    }

    fn terminal_batch(&self, x0s: &[State], horizon: usize) -> Result<Vec<Terminal>> {
        self.calls.fetch_add(x0s.len(), Ordering::SeqCst);
        self.inner.terminal_batch(x0s, horizon)
    }

    fn closed_loop(&self) -> Option<&dyn ClosedLoop> {
        self.inner.closed_loop()
    }
}

impl Simulator for Box<dyn Simulator> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn terminal(&self, x0: &State, horizon: usize) -> Result<Terminal> {
        (**self).terminal(x0, horizon)
    }

    fn terminal_batch(&self, x0s: &[State], horizon: usize) -> Result<Vec<Terminal>> {
        (**self).terminal_batch(x0s, horizon)
    }

    fn closed_loop(&self) -> Option<&dyn ClosedLoop> {
        (**self).closed_loop()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_contraction_terminal() {
        let sys = Linear::new(0.5, 1);
        let t = Simulator::terminal(&sys, &State::from_element(1, 1.0), 10).unwrap();
        assert!(!t.diverged);
        assert_eq!(t.state[0], 0.5f64.powi(10));
    }

    #[test]
    fn divergence_is_flagged_with_last_finite_state() {
        let sys = Linear::new(10.0, 1);
        let traj = simulate(&sys, &State::from_element(1, 1.0), 20).unwrap();
        assert_eq!(traj.diverged_at, Some(7));
        let term = traj.terminal();
        assert!(term.diverged);
        assert_eq!(term.state[0], 1e6);
        assert_eq!(term.objective(), f64::INFINITY);
        assert_eq!(Simulator::terminal(&sys, &State::from_element(1, 1.0), 20).unwrap(), term);
    }

    #[test]
    fn trajectory_length_is_horizon_plus_one() {
        let sys = Linear::new(0.9, 2);
        let traj = simulate(&sys, &State::from_element(2, 1.0), 5).unwrap();
        assert_eq!(traj.states.len(), 6);
        assert!(traj.controls.is_empty());
    }

    #[test]
    fn counting_wrapper_counts_batch_members() {
        let sys = CountingSimulator::new(Linear::new(0.5, 2));
        let xs = vec![State::zeros(2); 3];
        sys.terminal_batch(&xs, 4).unwrap();
        sys.terminal(&xs[0], 4).unwrap();
        assert_eq!(sys.calls(), 4);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let sys = Linear::new(0.5, 2);
        assert!(matches!(
            Simulator::terminal(&sys, &State::zeros(3), 1),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }
}
