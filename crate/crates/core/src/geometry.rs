//! Candidate regions `{ξ : ‖Cξ‖_p ≤ r}` and the operations the search needs on
//! them: membership, Euclidean projection, and boundary/interior sampling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = DVector<f64>;

/// Smallest singular value of `C` must be at least this fraction of the largest.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Relative slack applied to the radius in membership tests.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

const ELLIPSOID_MAX_ITERS: usize = 200;

/// Accepts `1`, `2`, `"1"`, `"2"`, `"inf"`; serializes as a string.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawOrder")]
pub enum NormOrder {
    #[serde(rename = "1")]
    L1,
    #[default]
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl NormOrder {
    pub fn norm(self, v: &State) -> f64 {
        match self {
            NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
            NormOrder::L2 => v.norm(),
            NormOrder::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawOrder {
    Int(u64),
    Str(String),
}

impl TryFrom<RawOrder> for NormOrder {
    type Error = Error;

    fn try_from(raw: RawOrder) -> Result<Self> {
        match raw {
            RawOrder::Int(n) => n.to_string().parse(),
            RawOrder::Str(s) => s.parse(),
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormOrder::L1 => "1",
            NormOrder::L2 => "2",
            NormOrder::LInf => "inf",
        })
    }
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(NormOrder::L1),
            "2" | "l2" => Ok(NormOrder::L2),
            "inf" | "infinity" | "linf" => Ok(NormOrder::LInf),
            other => Err(Error::InvalidRegion(format!(
                "norm order must be 1, 2 or inf, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Identity,
    /// `CᵀC = s²I`: the region is a Euclidean ball in state coordinates.
    ScaledOrthogonal,
    /// Eigendecomposition of `CᵀC` for the ellipsoid projection.
    Ellipsoid { eigenvalues: State, eigenvectors: DMatrix<f64> },
}

/// A norm ball under a full-rank linear transform.
#[derive(Clone, Debug)]
pub struct Region {
    order: NormOrder,
    radius: f64,
    shape: DMatrix<f64>,
    shape_inv: DMatrix<f64>,
    kind: Shape,
}

impl Region {
    pub fn new(order: NormOrder, radius: f64, shape: DMatrix<f64>) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidRegion(format!("radius must be finite and > 0, got {radius}")));
        }
        if shape.nrows() != shape.ncols() || shape.nrows() == 0 {
            return Err(Error::InvalidRegion(format!(
                "shape matrix must be square and non-empty, got {}x{}",
                shape.nrows(),
                shape.ncols()
            )));
        }
        if shape.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRegion("shape matrix has non-finite entries".into()));
        }
        let n = shape.nrows();
        let singular = shape.clone().singular_values();
        let smax = singular.max();
        let smin = singular.min();
        if !(smax > 0.0 && smin >= RANK_TOLERANCE * smax) {
            return Err(Error::InvalidRegion(format!(
                "shape matrix is rank deficient (singular values {smin:e} / {smax:e})"
            )));
        }
        let shape_inv = shape
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidRegion("shape matrix is not invertible".into()))?;

        let kind = if shape == DMatrix::identity(n, n) {
            Shape::Identity
        } else {
            let gram = shape.transpose() * &shape;
            let scale = gram.trace() / n as f64;
            let off = (&gram - DMatrix::identity(n, n) * scale).amax();
            if off <= 1e-12 * scale {
                Shape::ScaledOrthogonal
            } else {
                let eig = SymmetricEigen::new(gram);
                Shape::Ellipsoid { eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors }
            }
        };

        Ok(Self { order, radius, shape, shape_inv, kind })
    }

    /// The plain ball `‖ξ‖_p ≤ r` in `dim` dimensions.
    pub fn ball(order: NormOrder, radius: f64, dim: usize) -> Result<Self> {
        Self::new(order, radius, DMatrix::identity(dim, dim))
    }

    /// Same order and shape, different radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidRegion(format!("radius must be finite and > 0, got {radius}")));
        }
        Ok(Self { radius, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    pub fn order(&self) -> NormOrder {
        self.order
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn shape_inv(&self) -> &DMatrix<f64> {
        &self.shape_inv
    }

    pub fn is_identity_shape(&self) -> bool {
        matches!(self.kind, Shape::Identity)
    }

    /// `‖Cξ‖_p`.
    pub fn gauge(&self, xi: &State) -> f64 {
        match self.kind {
            Shape::Identity => self.order.norm(xi),
            _ => self.order.norm(&(&self.shape * xi)),
        }
    }

    pub fn contains(&self, xi: &State) -> bool {
        xi.len() == self.dim() && self.gauge(xi) <= self.radius * (1.0 + BOUNDARY_TOLERANCE)
    }

    fn check_input(&self, xi: &State) -> Result<()> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: xi.len() });
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state vector passed to projection".into()));
        }
        Ok(())
    }

    /// Euclidean projection onto the region.
    ///
    /// Exact for `p = 2` with identity or scaled-orthogonal `C` and for
    /// `p ∈ {1, ∞}` with `C = I`. For a general ellipsoid the multiplier of
    /// `z = (I + μCᵀC)⁻¹ξ` is found by safeguarded Newton on the secular
    /// equation (relative residual 1e-14, at most 200 iterations) and the
    /// result is pulled radially onto the boundary if rounding leaves it outside.
    pub fn project(&self, xi: &State) -> Result<State> {
        self.check_input(xi)?;
        if self.contains(xi) {
            return Ok(xi.clone());
        }
        let r = self.radius;
        match (self.order, &self.kind) {
            (NormOrder::L2, Shape::Identity | Shape::ScaledOrthogonal) => {
                Ok(xi * (r / self.gauge(xi)))
            }
            (NormOrder::L2, Shape::Ellipsoid { eigenvalues, eigenvectors }) => {
                let y = eigenvectors.transpose() * xi;
                let mu = secular_root(eigenvalues, &y, r);
                let scaled = State::from_iterator(
                    y.len(),
                    y.iter().zip(eigenvalues.iter()).map(|(yi, li)| yi / (1.0 + mu * li)),
                );
                let mut z = eigenvectors * scaled;
                let g = self.gauge(&z);
                if g > r {
                    z *= r / g;
                }
                Ok(z)
            }
            (NormOrder::LInf, Shape::Identity) => Ok(xi.map(|v| v.clamp(-r, r))),
            (NormOrder::L1, Shape::Identity) => Ok(project_l1_ball(xi, r)),
            (order, _) => Err(Error::Unsupported(format!(
                "projection onto an l{order} region requires C = I"
            ))),
        }
    }

    /// Radially rescales a nonzero `ξ` onto `‖Cξ‖_p = r`.
    pub fn to_boundary(&self, xi: &State) -> Option<State> {
        if xi.len() != self.dim() {
            return None;
        }
        let g = self.gauge(xi);
        (g.is_finite() && g > 0.0).then(|| xi * (self.radius / g))
    }

    /// The boundary point in direction `dir` of the transformed coordinates,
    /// i.e. `C⁻¹ (r u / ‖u‖_p)`.
    pub fn boundary_point_along(&self, dir: &State) -> Option<State> {
        let n = self.order.norm(dir);
        if !(n > 0.0 && n.is_finite()) {
            return None;
        }
        let transformed = dir * (self.radius / n);
        let xi = match self.kind {
            Shape::Identity => transformed,
            _ => &self.shape_inv * transformed,
        };
        self.to_boundary(&xi)
    }

    /// A random point with `‖Cξ‖_p = r`.
    ///
    /// The transformed point `Cξ` is uniform on the surface of the `p`-sphere
    /// (for `p = 2` a normalized Gaussian, for `p = 1` signed normalized
    /// exponentials, for `p = ∞` a uniform point on a random face); `ξ` is its
    /// image under `C⁻¹`, rescaled so the boundary equation holds to rounding.
    pub fn boundary_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let n = self.dim();
        loop {
            let dir = match self.order {
                NormOrder::L2 => State::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)),
                NormOrder::L1 => State::from_fn(n, |_, _| {
                    let e: f64 = rng.sample(Exp1);
                    if rng.random::<bool>() { e } else { -e }
                }),
                NormOrder::LInf => {
                    let mut v = State::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
                    let face = rng.random_range(0..n);
                    v[face] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    v
                }
            };
            if let Some(xi) = self.boundary_point_along(&dir) {
                return xi;
            }
        }
    }

    /// A point uniformly distributed in the region.
    pub fn interior_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let b = self.boundary_sample(rng);
        let u: f64 = rng.random();
        b * u.powf(1.0 / self.dim() as f64)
    }
}

/// Root `μ ≥ 0` of `Σ λᵢ yᵢ² / (1 + μλᵢ)² = r²`, assuming the left side
/// exceeds `r²` at `μ = 0`.
fn secular_root(lambda: &State, y: &State, r: f64) -> f64 {
    let phi = |mu: f64| -> (f64, f64) {
        let mut f = -r * r;
        let mut df = 0.0;
        for (l, yi) in lambda.iter().zip(y.iter()) {
            let d = 1.0 + mu * l;
            let t = l * yi * yi / (d * d);
            f += t;
            df -= 2.0 * t * l / d;
        }
        (f, df)
    };
    let mut lo = 0.0;
    let mut hi = y
        .iter()
        .zip(lambda.iter())
        .map(|(yi, l)| yi * yi / l)
        .sum::<f64>()
        .sqrt()
        / r;
    let mut mu = 0.0;
    for _ in 0..ELLIPSOID_MAX_ITERS {
        let (f, df) = phi(mu);
        if f.abs() <= 1e-14 * r * r {
            break;
        }
        if f > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let newton = mu - f / df;
        mu = if df < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
    }
    mu
}

/// Euclidean projection onto `{z : ‖z‖₁ ≤ r}` by the sort-and-threshold rule.
fn project_l1_ball(xi: &State, r: f64) -> State {
    let mut mags: Vec<f64> = xi.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - r) / (j + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        }
    }
    xi.map(|v| v.signum() * (v.abs() - theta).max(0.0))
}
