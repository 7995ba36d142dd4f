//! Plugging in a user-defined system: the time-reversed Van der Pol
//! oscillator, whose stable origin is surrounded by an unstable limit cycle.
//!
//! `cargo run --release --example custom_system`

use nalgebra::DMatrix;
use roa_attack::systems::ClosedLoop;
use roa_attack::{bisect_radius, impl_simulator, AroaCriterion, BisectionConfig, GradientBackend, NormOrder, PgdConfig, State};

struct ReversedVanDerPol {
    mu: f64,
    dt: f64,
}

impl ClosedLoop for ReversedVanDerPol {
    fn state_dim(&self) -> usize {
        2
    }

    fn step(&self, x: &State) -> State {
        let (a, b) = (x[0], x[1]);
        State::from_column_slice(&[a - self.dt * b, b + self.dt * (a + self.mu * (a * a - 1.0) * b)])
    }

    fn vjp(&self, x: &State, w: &State) -> State {
        let (a, b) = (x[0], x[1]);
        let j = DMatrix::from_row_slice(
            2,
            2,
            &[1.0, -self.dt, self.dt * (1.0 + 2.0 * self.mu * a * b), 1.0 + self.dt * self.mu * (a * a - 1.0)],
        );
        j.transpose() * w
    }
}

impl_simulator!(ReversedVanDerPol);

fn main() -> roa_attack::Result<()> {
    let sys = ReversedVanDerPol { mu: 1.0, dt: 0.05 };
    for order in [NormOrder::L2, NormOrder::LInf] {
        let out = bisect_radius(
            &sys,
            order,
            &DMatrix::identity(2, 2),
            &AroaCriterion::new(300, 1e-2)?,
            &PgdConfig::default(),
            GradientBackend::Costate,
            &BisectionConfig::default(),
        )?;
        let w = out.witness.expect("the region is bounded");
        println!("p = {order}: r_hat = {:.4}, escaping start {:?}", out.r_hat, w.xi.as_slice());
    }
    Ok(())
}
