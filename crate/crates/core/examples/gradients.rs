//! Costate, forward-difference and central-difference gradients side by side.
//!
//! `cargo run --release --example gradients`

use roa_attack::gradients::{grad_central, grad_costate, grad_fd};
use roa_attack::systems::{CountingSimulator, Pendulum, PendulumParams};
use roa_attack::State;

fn main() -> roa_attack::Result<()> {
    let sim = CountingSimulator::new(Pendulum::with_default_policy(PendulumParams::default())?);
    let xi = State::from_column_slice(&[0.6, -0.4]);
    let horizon = 200;

    let exact = grad_costate(&sim, &xi, horizon)?;
    println!("L_T(xi) = {:.6e}", exact.value);
    println!("costate  {:?}", exact.gradient.as_slice());

    sim.reset();
    let fd = grad_fd(&sim, &xi, horizon, 1e-6)?;
    println!("forward  {:?} ({} simulations)", fd.gradient.as_slice(), sim.calls());

    sim.reset();
    let central = grad_central(&sim, &xi, horizon, 1e-6)?;
    println!("central  {:?} ({} simulations)", central.gradient.as_slice(), sim.calls());

    let rel = |g: &State| (g - &exact.gradient).norm() / exact.gradient.norm();
    println!("relative error: forward {:.2e}, central {:.2e}", rel(&fd.gradient), rel(&central.gradient));
    Ok(())
}
