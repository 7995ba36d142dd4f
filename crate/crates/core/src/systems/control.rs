//! Default feedback gains for the built-in plants.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Infinite-horizon discrete LQR gain `K` (control law `u = -Kx`) by
/// fixed-point iteration of the Riccati recursion.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    let mut gain = DMatrix::zeros(b.ncols(), a.nrows());
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("LQR: singular R + BᵀPB".into()))?;
        gain = s_inv * &btp * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let change = (&next - &p).amax();
        p = next;
        if change <= 1e-12 * p.amax().max(1.0) {
            return Ok(gain);
        }
    }
    if gain.iter().all(|v| v.is_finite()) {
        Ok(gain)
    } else {
        Err(Error::InvalidArgument("LQR: Riccati iteration did not converge".into()))
    }
}
