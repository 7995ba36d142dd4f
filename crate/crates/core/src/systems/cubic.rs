//! The cubic system `ẋ = (1 − xᵀMx)·F·x` with `F = −I`, whose region of
//! attraction is exactly the ellipsoid `xᵀMx < 1`.
//!
//! Each discrete step of length `dt` is a fixed number of classical RK4
//! substeps (two by default).

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::impl_simulator;

use super::ClosedLoop;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_SUBSTEPS: usize = 2;

#[derive(Clone, Debug)]
pub struct Cubic {
    m: DMatrix<f64>,
    dt: f64,
    substeps: usize,
}

fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotPositiveDefinite(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entries".into()));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax() {
        return Err(Error::NotPositiveDefinite(format!("asymmetry {asym:e}")));
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::NotPositiveDefinite("Cholesky factorization failed".into()));
    }
    Ok(())
}

impl Cubic {
    pub fn new(m: DMatrix<f64>, dt: f64) -> Result<Self> {
        check_spd(&m)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("cubic dt must be > 0, got {dt}")));
        }
        Ok(Self { m, dt, substeps: DEFAULT_SUBSTEPS })
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim), dt: DEFAULT_DT, substeps: DEFAULT_SUBSTEPS }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidArgument("cubic substeps must be >= 1".into()));
        }
        self.substeps = substeps;
        Ok(self)
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    fn h(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Vector field and the `Mx` it was computed from.
    fn field(&self, x: &State) -> (State, State) {
        let mx = &self.m * x;
        let s = x.dot(&mx);
        (x * (s - 1.0), mx)
    }

    /// `J_v(y)ᵀ w` where `v(y) = (yᵀMy − 1) y`, given `My`.
    fn field_vjp(y: &State, my: &State, w: &State) -> State {
        let s = y.dot(my);
        w * (s - 1.0) + my * (2.0 * y.dot(w))
    }

    /// Largest radius of a ball around the origin inside the true region of
    /// attraction, `λ_max(M)^{-1/2}`.
    pub fn true_roa_radius(&self) -> f64 {
        lambda_max_radius(&self.m)
    }
}

fn lambda_max_radius(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max().powf(-0.5)
}

/// `λ_max(M)^{-1/2}` for a symmetric positive definite `M`.
pub fn true_roa_radius_cubic(m: &DMatrix<f64>) -> Result<f64> {
    check_spd(m)?;
    Ok(lambda_max_radius(m))
}

impl ClosedLoop for Cubic {
    fn state_dim(&self) -> usize {
        self.m.nrows()
    }

    fn step(&self, x: &State) -> State {
        let mut y = x.clone();
        for _ in 0..self.substeps {
            y = self.rk4(&y);
        }
        y
    }

    fn vjp(&self, x: &State, cotangent: &State) -> State {
        let mut stages = Vec::with_capacity(self.substeps);
        let mut y = x.clone();
        for _ in 0..self.substeps {
            let next = self.rk4(&y);
            stages.push(y);
            y = next;
        }
        stages.iter().rev().fold(cotangent.clone(), |adj, y| self.rk4_vjp(y, &adj))
    }
}

impl Cubic {
    fn rk4(&self, x: &State) -> State {
        let h = self.h();
        let (k1, _) = self.field(x);
        let (k2, _) = self.field(&(x + &k1 * (0.5 * h)));
        let (k3, _) = self.field(&(x + &k2 * (0.5 * h)));
        let (k4, _) = self.field(&(x + &k3 * h));
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    fn rk4_vjp(&self, x: &State, cotangent: &State) -> State {
        let h = self.h();
        let (k1, m1) = self.field(x);
        let y2 = x + &k1 * (0.5 * h);
        let (k2, m2) = self.field(&y2);
        let y3 = x + &k2 * (0.5 * h);
        let (k3, m3) = self.field(&y3);
        let y4 = x + &k3 * h;
        let m4 = &self.m * &y4;

        // reverse sweep through x' = x + h/6 (k1 + 2k2 + 2k3 + k4)
        let mut adj_x = cotangent.clone();
        let adj_k4 = cotangent * (h / 6.0);
        let mut adj_k3 = cotangent * (h / 3.0);
        let mut adj_k2 = cotangent * (h / 3.0);
        let mut adj_k1 = cotangent * (h / 6.0);

        let adj_y4 = Self::field_vjp(&y4, &m4, &adj_k4);
        adj_x += &adj_y4;
        adj_k3 += &adj_y4 * h;

        let adj_y3 = Self::field_vjp(&y3, &m3, &adj_k3);
        adj_x += &adj_y3;
        adj_k2 += &adj_y3 * (0.5 * h);

        let adj_y2 = Self::field_vjp(&y2, &m2, &adj_k2);
        adj_x += &adj_y2;
        adj_k1 += &adj_y2 * (0.5 * h);

        adj_x += Self::field_vjp(x, &m1, &adj_k1);
        adj_x
    }
}

impl_simulator!(Cubic);
