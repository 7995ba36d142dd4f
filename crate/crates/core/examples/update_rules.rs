//! The two update rules on l1, l2 and l-infinity regions with a shaped `C`.
//!
//! `cargo run --example update_rules`

use nalgebra::DMatrix;
use roa_attack::oracle::linearized_grid_max;
use roa_attack::pgd::{step_closed_form, step_projected};
use roa_attack::{NormOrder, Region, State};

fn main() -> roa_attack::Result<()> {
    let grad = State::from_column_slice(&[3.0, -1.0]);
    let shape = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.5, 1.0]);

    for order in [NormOrder::L1, NormOrder::L2, NormOrder::LInf] {
        let region = Region::new(order, 2.0, shape.clone())?;
        let xi = step_closed_form(&region, &grad)?;
        let grid = linearized_grid_max(&region, &grad, 100_000)?;
        println!(
            "p = {order}: closed form {:?}, gradᵀξ = {:.6}, grid maximum {:.6}",
            xi.as_slice(),
            grad.dot(&xi),
            grid.best_value
        );
    }

    let ball = Region::ball(NormOrder::L2, 1.0, 2)?;
    let mut xi = State::zeros(2);
    for k in 0..4 {
        xi = step_projected(&ball, &xi, &grad, 0.2)?;
        println!("projected step {k}: {:?} (‖ξ‖ = {:.4})", xi.as_slice(), xi.norm());
    }
    Ok(())
}
