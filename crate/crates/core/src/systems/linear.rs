use crate::geometry::State;
use crate::impl_simulator;

use super::ClosedLoop;

/// `x_{t+1} = a·x_t` in `dim` dimensions. Mostly useful as a test system with
/// closed-form answers.
#[derive(Clone, Debug)]
pub struct Linear {
    a: f64,
    dim: usize,
}

impl Linear {
    pub fn new(a: f64, dim: usize) -> Self {
        Self { a, dim }
    }

    pub fn factor(&self) -> f64 {
        self.a
    }
}

impl ClosedLoop for Linear {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn step(&self, x: &State) -> State {
        x * self.a
    }

    fn vjp(&self, _x: &State, cotangent: &State) -> State {
        cotangent * self.a
    }
}

impl_simulator!(Linear);
