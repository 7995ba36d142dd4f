//! Brute-force ground truth for tests and benchmarks.
//!
//! Nothing here is used by the estimator itself.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Region, State};
use crate::systems::{simulate, ClosedLoop, Simulator};

/// Largest state dimension the grid oracles accept.
pub const MAX_GRID_DIM: usize = 3;

const BATCH: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct GridOracleResult {
    pub best_xi: State,
    pub best_value: f64,
    pub points_evaluated: usize,
}

fn guard(region: &Region) -> Result<()> {
    if region.dim() > MAX_GRID_DIM {
        return Err(Error::DimensionGuard(format!(
            "grid oracles support n_x <= {MAX_GRID_DIM}, got {}",
            region.dim()
        )));
    }
    Ok(())
}

/// Grid over the boundary `‖Cξ‖_p = r`.
///
/// In 2-D, `resolution` equally spaced angles; in 3-D, a `resolution ×
/// 2·resolution` polar/azimuthal grid. Directions are normalized in the
/// `p`-norm and mapped through `C⁻¹`. Doubling the resolution keeps every
/// earlier point.
pub fn boundary_grid(region: &Region, resolution: usize) -> Result<Vec<State>> {
    guard(region)?;
    if resolution == 0 {
        return Err(Error::InvalidArgument("grid resolution must be >= 1".into()));
    }
    let tau = std::f64::consts::TAU;
    let dirs: Vec<State> = match region.dim() {
        1 => vec![State::from_element(1, 1.0), State::from_element(1, -1.0)],
        2 => (0..resolution)
            .map(|k| {
                let t = tau * k as f64 / resolution as f64;
                State::from_column_slice(&[t.cos(), t.sin()])
            })
            .collect(),
        _ => {
            let m = resolution;
            let mut out = Vec::with_capacity((m + 1) * 2 * m);
            for i in 0..=m {
                let theta = std::f64::consts::PI * i as f64 / m as f64;
                for j in 0..2 * m {
                    let phi = tau * j as f64 / (2 * m) as f64;
                    out.push(State::from_column_slice(&[
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    ]));
                }
            }
            out
        }
    };
    Ok(dirs.iter().filter_map(|d| region.boundary_point_along(d)).collect())
}

/// Evaluates `L_T` on [`boundary_grid`] and returns the maximizer. Ties
/// resolve to the first grid point.
pub fn boundary_grid_max(
    sim: &dyn Simulator,
    region: &Region,
    horizon: usize,
    resolution: usize,
) -> Result<GridOracleResult> {
    if sim.state_dim() != region.dim() {
        return Err(Error::DimensionMismatch { expected: sim.state_dim(), got: region.dim() });
    }
    let points = boundary_grid(region, resolution)?;
    let values: Vec<Vec<f64>> = points
        .par_chunks(BATCH)
        .map(|chunk| Ok(sim.terminal_batch(chunk, horizon)?.iter().map(|t| t.objective()).collect()))
        .collect::<Result<_>>()?;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.iter().flatten().enumerate() {
        if *v > best_value {
            best = i;
            best_value = *v;
        }
    }
    Ok(GridOracleResult { best_xi: points[best].clone(), best_value, points_evaluated: points.len() })
}

/// Maximum of the linear function `gradᵀξ` on [`boundary_grid`].
pub fn linearized_grid_max(region: &Region, grad: &State, resolution: usize) -> Result<GridOracleResult> {
    let points = boundary_grid(region, resolution)?;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let v = grad.dot(p);
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    Ok(GridOracleResult { best_xi: points[best].clone(), best_value, points_evaluated: points.len() })
}

/// Direct-simulation membership test for the region of attraction.
///
/// True iff the rollout stays bounded, `‖x_T‖² ≤ δ` at `t_long`, and every
/// state in the last 10% of the rollout also satisfies it.
pub fn roa_membership_sample(sys: &dyn ClosedLoop, x0: &State, t_long: usize, delta: f64) -> Result<bool> {
    let traj = simulate(sys, x0, t_long)?;
    if traj.diverged_at.is_some() {
        return Ok(false);
    }
    let tail = t_long - t_long / 10;
    Ok(traj.states[tail..].iter().all(|x| x.norm_squared() <= delta))
}

/// Classifies each point with [`roa_membership_sample`] and writes
/// `x_0,...,x_{n-1},member` rows.
pub fn write_membership_csv(
    sys: &dyn ClosedLoop,
    points: &[State],
    t_long: usize,
    delta: f64,
    path: &Path,
) -> Result<usize> {
    let flags: Vec<bool> = points
        .par_iter()
        .map(|p| roa_membership_sample(sys, p, t_long, delta))
        .collect::<Result<_>>()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = sys.state_dim();
    let header: Vec<String> = (0..n).map(|i| format!("x{i}")).chain(["member".into()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for (p, m) in points.iter().zip(&flags) {
        let cells: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", cells.join(","), u8::from(*m))?;
    }
    w.flush()?;
    Ok(flags.iter().filter(|m| **m).count())
}

/// Classical RK4 with `steps` equal substeps over `duration`.
pub fn integrate_rk4(f: impl Fn(&State) -> State, x0: &State, duration: f64, steps: usize) -> State {
    let h = duration / steps as f64;
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Flow of `ẋ = (xᵀMx − 1)x` over `duration`, by fine-step RK4.
pub fn cubic_flow(m: &DMatrix<f64>, x0: &State, duration: f64, steps: usize) -> State {
    integrate_rk4(|x| x * (x.dot(&(m * x)) - 1.0), x0, duration, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NormOrder;
    use crate::systems::{Cubic, Linear};

    #[test]
    fn linear_grid_max_is_constant_on_sphere() {
        let sys = Linear::new(0.5, 2);
        let region = Region::ball(NormOrder::L2, 1.0, 2).unwrap();
        for res in [8, 100, 1000] {
            let g = boundary_grid_max(&sys, &region, 10, res).unwrap();
            assert!((g.best_value - 0.5f64.powi(20)).abs() <= 1e-20);
            assert_eq!(g.points_evaluated, res);
        }
    }

    #[test]
    fn grid_points_lie_on_boundary() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 2.0, 0.1, 0.3, 0.0, 1.5]);
        for order in [NormOrder::L1, NormOrder::L2, NormOrder::LInf] {
            let region = Region::new(order, 0.7, c.clone()).unwrap();
            for p in boundary_grid(&region, 12).unwrap() {
                assert!((region.gauge(&p) - 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_guard() {
        let region = Region::ball(NormOrder::L2, 1.0, 4).unwrap();
        assert!(matches!(boundary_grid(&region, 4), Err(Error::DimensionGuard(_))));
    }

    #[test]
    fn membership() {
        let sys = Cubic::identity(2);
        assert!(roa_membership_sample(&sys, &State::zeros(2), 1000, 1e-2).unwrap());
        assert!(roa_membership_sample(&sys, &State::from_column_slice(&[0.5, 0.5]), 1000, 1e-2).unwrap());
        assert!(!roa_membership_sample(&sys, &State::from_column_slice(&[2.0, 0.0]), 1000, 1e-2).unwrap());
    }

    #[test]
    fn rk4_matches_scalar_closed_form() {
        // ẋ = (x² − 1)x has x(t)² = 1 / (1 + (1/x0² − 1)e^{2t}).
        let m = DMatrix::identity(1, 1);
        let x0 = 0.5;
        let t: f64 = 2.0;
        let exact = (1.0 / (1.0 + (1.0 / (x0 * x0) - 1.0) * (2.0 * t).exp())).sqrt();
        let x = cubic_flow(&m, &State::from_element(1, x0), t, 2000);
        assert!((x[0] - exact).abs() < 1e-12);
    }
}
