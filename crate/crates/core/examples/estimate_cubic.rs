//! Bisection on the radius of a cubic system with a known answer.
//!
//! `cargo run --release --example estimate_cubic`

use nalgebra::DMatrix;
use roa_attack::systems::Cubic;
use roa_attack::{bisect_radius, AroaCriterion, BisectionConfig, GradientBackend, NormOrder, PgdConfig};

fn main() -> roa_attack::Result<()> {
    let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.0, 0.4, 1.5, -0.3, 0.0, -0.3, 1.0]);
    let sys = Cubic::new(m, 0.1)?;
    let criterion = AroaCriterion::new(100, 1e-2)?;

    let out = bisect_radius(
        &sys,
        NormOrder::L2,
        &DMatrix::identity(3, 3),
        &criterion,
        &PgdConfig::default(),
        GradientBackend::Costate,
        &BisectionConfig::default(),
    )?;

    for step in &out.trace {
        println!("{:?} r = {:.5} pass = {} max L = {:.3e}", step.phase, step.r, step.pass, step.best_value);
    }
    println!("r_hat = {:.5} (tol {:.1e}), analytic r* = {:.5}", out.r_hat, out.tol_r, sys.true_roa_radius());
    if let Some(w) = out.witness {
        println!("witness at r = {:.5}: xi = {:?}, L = {:.3e}", w.r, w.xi.as_slice(), w.value);
    }
    Ok(())
}
