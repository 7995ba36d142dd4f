//! Cross-checks a gradient search against a dense boundary grid in 2-D and
//! writes a sampled membership map next to it.
//!
//! `cargo run --release --example grid_oracle -- membership.csv`

use nalgebra::DMatrix;
use roa_attack::oracle::{boundary_grid_max, write_membership_csv};
use roa_attack::systems::Cubic;
use roa_attack::{search, GradientBackend, NormOrder, PgdConfig, Region, State};

fn main() -> roa_attack::Result<()> {
    let sys = Cubic::new(DMatrix::from_row_slice(2, 2, &[3.0, 0.8, 0.8, 1.5]), 0.1)?;
    let horizon = 100;

    for r in [0.3, 0.5, 0.6] {
        let region = Region::ball(NormOrder::L2, r, 2)?;
        let grid = boundary_grid_max(&sys, &region, horizon, 10_000)?;
        let run = search(&sys, &region, horizon, &PgdConfig::default(), GradientBackend::Costate, &Default::default())?;
        println!(
            "r = {r}: grid max {:.4e} at {:?}, search max {:.4e} at {:?}",
            grid.best_value,
            grid.best_xi.as_slice(),
            run.best_value,
            run.best_xi.as_slice()
        );
    }

    let path = std::env::args().nth(1).unwrap_or_else(|| "membership.csv".into());
    let k = 60;
    let points: Vec<State> = (0..k * k)
        .map(|i| {
            let (a, b) = ((i / k) as f64, (i % k) as f64);
            State::from_column_slice(&[-1.5 + 3.0 * a / (k - 1) as f64, -1.5 + 3.0 * b / (k - 1) as f64])
        })
        .collect();
    let members = write_membership_csv(&sys, &points, 400, 1e-2, path.as_ref())?;
    println!("{members} of {} grid points converge; wrote {path}", points.len());
    println!("largest ball inside the true region: r* = {:.4}", sys.true_roa_radius());
    Ok(())
}
