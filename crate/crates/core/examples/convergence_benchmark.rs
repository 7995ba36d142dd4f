//! How many iterations each update rule needs to reach the violating part of
//! the boundary as the horizon grows.
//!
//! `cargo run --release --example convergence_benchmark`

use roa_attack::bench::{convergence_benchmark, rule_name, ConvergenceConfig};
use roa_attack::systems::{Pendulum, PendulumParams};
use roa_attack::{GradientBackend, NormOrder, Region};

fn main() -> roa_attack::Result<()> {
    let sys = Pendulum::with_default_policy(PendulumParams::default())?;
    let region = Region::ball(NormOrder::L2, 1.0, 2)?;
    let cfg = ConvergenceConfig { horizons: vec![100, 400], x0: vec![0.5, 0.0], ..Default::default() };

    for s in convergence_benchmark(&sys, &region, &cfg, GradientBackend::Costate)? {
        let reached = match s.iterations_to_converge {
            Some(k) => format!("converged after {k} iterations"),
            None => format!("not converged in {} iterations", s.distances.len()),
        };
        println!("{:<22} T = {:>4}: {reached}, best L = {:.4}", rule_name(s.rule), s.horizon, s.best_value);
    }
    Ok(())
}
