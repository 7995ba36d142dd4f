//! Worst-case search on a fixed region of the inverted pendulum.
//!
//! `cargo run --release --example attack_pendulum -- 1.5`

use roa_attack::systems::{Pendulum, PendulumParams, Simulator};
use roa_attack::{search, GradientBackend, NormOrder, PgdConfig, Region};

fn main() -> roa_attack::Result<()> {
    let r: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1.5);
    let sys = Pendulum::with_default_policy(PendulumParams::default())?;
    let (horizon, delta) = (200, 0.1);

    let region = Region::ball(NormOrder::L2, r, 2)?;
    let run = search(&sys, &region, horizon, &PgdConfig::default(), GradientBackend::Costate, &Default::default())?;

    for s in &run.restarts {
        println!(
            "restart {}: L = {:.3e} after {} iterations ({:?})",
            s.index, s.best_value, s.iterations, s.termination
        );
    }
    let fresh = sys.terminal(&run.best_xi, horizon)?.objective();
    if fresh > delta {
        println!("violation at xi = {:?}: L_T = {fresh:.4} > {delta}", run.best_xi.as_slice());
    } else {
        println!("no violation found on r = {r}: max L_T = {:.3e}", run.best_value);
    }
    Ok(())
}
