//! Drives an estimate through the line-delimited JSON protocol. The example
//! re-runs itself with `--serve` to act as the simulator process.
//!
//! `cargo run --release --example external_simulator`

use std::time::Duration;

use nalgebra::DMatrix;
use roa_attack::protocol::serve;
use roa_attack::systems::{Cubic, ExternalSimulator};
use roa_attack::{bisect_radius, AroaCriterion, BisectionConfig, GradientBackend, NormOrder, PgdConfig};

fn system() -> roa_attack::Result<Cubic> {
    Cubic::new(DMatrix::from_row_slice(2, 2, &[3.0, 0.8, 0.8, 1.5]), 0.1)
}

fn main() -> roa_attack::Result<()> {
    if std::env::args().nth(1).as_deref() == Some("--serve") {
        let stdin = std::io::stdin().lock();
        serve(&system()?, stdin, std::io::stdout().lock())?;
        return Ok(());
    }

    let me = std::env::current_exe()?.display().to_string();
    let sim = ExternalSimulator::spawn(&[me, "--serve".into()], 2, Duration::from_secs(30))?;
    println!("connected to {} simulator sessions, n_x = 2", sim.sessions());

    let out = bisect_radius(
        &sim,
        NormOrder::L2,
        &DMatrix::identity(2, 2),
        &AroaCriterion::new(100, 1e-2)?,
        &PgdConfig::default(),
        GradientBackend::forward_difference(),
        &BisectionConfig::default(),
    )?;
    let simulations: usize = out.trace.iter().map(|s| s.simulations).sum();
    println!("r_hat = {:.5} after {} checks and {simulations} simulations", out.r_hat, out.trace.len());
    println!("analytic r* = {:.5}", system()?.true_roa_radius());
    Ok(())
}
