//! The `(T, δ)` criterion and the radius bisection built on it.
//!
//! A region passes when the worst `L_T` found by [`search`] is at most `δ`.
//! A failure carries a concrete witness and is therefore a certificate; a
//! pass only means the search found nothing, so every estimate is flagged
//! as search-certified.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NormOrder, Region, State};
use crate::gradients::GradientBackend;
use crate::pgd::{search, PgdConfig, PgdRun, SearchOptions};
use crate::systems::Simulator;

pub const CERTIFICATION: &str = "search-certified, not proof-certified";

/// Smallest radius tried while shrinking toward a passing region.
pub const DEFAULT_FLOOR: f64 = 1e-9;
/// Largest radius tried while growing toward a failing region.
pub const DEFAULT_CEILING: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AroaCriterion {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub delta: f64,
}

impl AroaCriterion {
    pub fn new(horizon: usize, delta: f64) -> Result<Self> {
        let c = Self { horizon, delta };
        let v = c.violations();
        if v.is_empty() {
            Ok(c)
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.horizon == 0 {
            v.push("criterion.T must be >= 1".into());
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            v.push(format!("criterion.delta must be > 0, got {}", self.delta));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionCheck {
    pub pass: bool,
    pub best_xi: State,
    /// Largest `L_T` seen by the search.
    pub best_value: f64,
    /// `L_T(best_xi)` from a fresh simulation, present when the search
    /// reported a violation.
    pub confirmed_value: Option<f64>,
    pub best_grad_norm: f64,
    pub run: PgdRun,
}

impl RegionCheck {
    /// The violating point, if any.
    pub fn witness(&self) -> Option<(&State, f64)> {
        (!self.pass).then(|| (&self.best_xi, self.confirmed_value.unwrap_or(self.best_value)))
    }
}

/// Searches the region and decides `max L_T ≤ δ`.
///
/// The search stops as soon as any iterate exceeds `δ`. A reported violation
/// is re-simulated once; it only counts if the fresh value also exceeds `δ`.
pub fn check_region(
    sim: &dyn Simulator,
    region: &Region,
    criterion: &AroaCriterion,
    cfg: &PgdConfig,
    backend: GradientBackend,
    warm_start: Option<&State>,
) -> Result<RegionCheck> {
    let opts = SearchOptions {
        warm_start: warm_start.cloned(),
        stop_above: Some(criterion.delta),
        ..Default::default()
    };
    let run = search(sim, region, criterion.horizon, cfg, backend, &opts)?;
    let mut confirmed_value = None;
    let mut pass = run.best_value <= criterion.delta;
    if !pass {
        let fresh = sim.terminal(&run.best_xi, criterion.horizon)?.objective();
        confirmed_value = Some(fresh);
        pass = fresh <= criterion.delta;
    }
    Ok(RegionCheck {
        pass,
        best_xi: run.best_xi.clone(),
        best_value: run.best_value,
        confirmed_value,
        best_grad_norm: run.best_grad_norm,
        run,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Expand,
    Shrink,
    Bisect,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketStep {
    pub phase: Phase,
    pub r: f64,
    pub pass: bool,
    pub best_value: f64,
    pub best_grad_norm: f64,
    #[serde(skip)]
    pub best_xi: State,
    pub restarts_run: usize,
    pub simulations: usize,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bracket {
    pub r_lo: f64,
    pub r_hi: f64,
}

impl Bracket {
    /// Starting bracket when none is configured.
    pub const AUTO: Bracket = Bracket { r_lo: 0.5, r_hi: 1.0 };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BisectionConfig {
    /// `None` starts from [`Bracket::AUTO`]. Configured through the region.
    #[serde(skip)]
    pub bracket: Option<Bracket>,
    /// Final bracket width; `None` means `1e-3 · r_hi` of the bracket once
    /// it is established.
    pub tol_r: Option<f64>,
    pub floor: f64,
    pub ceiling: f64,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self { bracket: None, tol_r: None, floor: DEFAULT_FLOOR, ceiling: DEFAULT_CEILING }
    }
}

impl BisectionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(b) = self.bracket {
            if !(b.r_lo > 0.0 && b.r_lo < b.r_hi && b.r_hi.is_finite()) {
                v.push(format!("region.bracket needs 0 < r_lo < r_hi, got ({}, {})", b.r_lo, b.r_hi));
            }
        }
        if let Some(t) = self.tol_r {
            if !(t.is_finite() && t > 0.0) {
                v.push(format!("bisection.tol_r must be > 0, got {t}"));
            }
        }
        if !(self.floor > 0.0 && self.floor < self.ceiling && self.ceiling.is_finite()) {
            v.push("bisection needs 0 < floor < ceiling".into());
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub r: f64,
    pub xi: State,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BisectionOutcome {
    pub r_hat: f64,
    /// Violation found at the smallest failing radius; `None` only together
    /// with `unbounded_pass`.
    pub witness: Option<Witness>,
    pub trace: Vec<BracketStep>,
    pub tol_r: f64,
    /// No failing radius was found below the ceiling.
    pub unbounded_pass: bool,
    /// `‖∇L_T‖` at the worst point found for `r_hat`.
    pub grad_norm_at_r_hat: f64,
    pub certification: &'static str,
}

struct Bisector<'a> {
    sim: &'a dyn Simulator,
    order: NormOrder,
    shape: &'a DMatrix<f64>,
    criterion: &'a AroaCriterion,
    cfg: &'a PgdConfig,
    backend: GradientBackend,
    warm: Option<State>,
    trace: Vec<BracketStep>,
    witness: Option<Witness>,
    pass_grad_norm: f64,
}

impl Bisector<'_> {
    fn check(&mut self, r: f64, phase: Phase) -> Result<bool> {
        let region = Region::new(self.order, r, self.shape.clone())?;
        let started = Instant::now();
        let out = check_region(self.sim, &region, self.criterion, self.cfg, self.backend, self.warm.as_ref())?;
        self.trace.push(BracketStep {
            phase,
            r,
            pass: out.pass,
            best_value: out.confirmed_value.unwrap_or(out.best_value),
            best_grad_norm: out.best_grad_norm,
            best_xi: out.best_xi.clone(),
            restarts_run: out.run.restarts.len(),
            simulations: out.run.simulations,
            seconds: started.elapsed().as_secs_f64(),
        });
        if out.pass {
            self.pass_grad_norm = out.best_grad_norm;
        } else if self.witness.as_ref().is_none_or(|w| r < w.r) {
            let (xi, value) = out.witness().expect("failing check has a witness");
            self.witness = Some(Witness { r, xi: xi.clone(), value });
        }
        if out.best_xi.iter().any(|v| *v != 0.0) {
            self.warm = Some(out.best_xi);
        }
        Ok(out.pass)
    }
}

/// Largest radius `r` for which `{‖Cξ‖_p ≤ r}` passes the criterion.
///
/// Grows `r_hi` by doubling until a check fails and shrinks `r_lo` by
/// halving until one passes, then bisects to width `tol_r`. Each check is
/// warm-started from the worst point of the previous one.
pub fn bisect_radius(
    sim: &dyn Simulator,
    order: NormOrder,
    shape: &DMatrix<f64>,
    criterion: &AroaCriterion,
    cfg: &PgdConfig,
    backend: GradientBackend,
    bisection: &BisectionConfig,
) -> Result<BisectionOutcome> {
    let problems: Vec<String> = criterion.violations().into_iter().chain(bisection.violations()).collect();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let Bracket { mut r_lo, mut r_hi } = bisection.bracket.unwrap_or(Bracket::AUTO);
    let mut b = Bisector {
        sim,
        order,
        shape,
        criterion,
        cfg,
        backend,
        warm: None,
        trace: Vec::new(),
        witness: None,
        pass_grad_norm: f64::NAN,
    };

    let mut lo_known = false;
    while b.check(r_hi, Phase::Expand)? {
        r_lo = r_hi;
        lo_known = true;
        r_hi *= 2.0;
        if r_hi > bisection.ceiling {
            return Ok(BisectionOutcome {
                r_hat: r_lo,
                witness: None,
                trace: b.trace,
                tol_r: bisection.tol_r.unwrap_or(1e-3 * r_lo),
                unbounded_pass: true,
                grad_norm_at_r_hat: b.pass_grad_norm,
                certification: CERTIFICATION,
            });
        }
    }
    if !lo_known {
        while !b.check(r_lo, Phase::Shrink)? {
            r_hi = r_lo;
            r_lo /= 2.0;
            if r_lo < bisection.floor {
                return Err(Error::DegenerateRegion { floor: bisection.floor });
            }
        }
    }
    let mut grad_norm = b.pass_grad_norm;
    let tol_r = bisection.tol_r.unwrap_or(1e-3 * r_hi);
    while r_hi - r_lo > tol_r {
        let mid = 0.5 * (r_lo + r_hi);
        if b.check(mid, Phase::Bisect)? {
            r_lo = mid;
            grad_norm = b.pass_grad_norm;
        } else {
            r_hi = mid;
        }
    }
    Ok(BisectionOutcome {
        r_hat: r_lo,
        witness: b.witness,
        trace: b.trace,
        tol_r,
        unbounded_pass: false,
        grad_norm_at_r_hat: grad_norm,
        certification: CERTIFICATION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Cubic, Linear};

    #[test]
    fn criterion_validation() {
        assert!(AroaCriterion::new(10, 1e-2).is_ok());
        let Err(Error::Config(v)) = AroaCriterion::new(0, -1.0) else { panic!() };
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn check_region_linear_examples() {
        let sys = Linear::new(0.5, 2);
        let region = Region::ball(NormOrder::L2, 1.0, 2).unwrap();
        let cfg = PgdConfig::default();
        let pass = check_region(&sys, &region, &AroaCriterion::new(10, 1e-2).unwrap(), &cfg, GradientBackend::Costate, None)
            .unwrap();
        assert!(pass.pass);
        assert!((pass.best_value - 9.5367e-7).abs() < 1e-10);
        let fail = check_region(&sys, &region, &AroaCriterion::new(10, 1e-7).unwrap(), &cfg, GradientBackend::Costate, None)
            .unwrap();
        let (xi, value) = fail.witness().unwrap();
        assert!(value > 1e-7);
        assert!((xi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn check_region_cubic_exits_ellipsoid() {
        let sys = Cubic::new(DMatrix::from_diagonal(&State::from_column_slice(&[4.0, 1.0])), 0.1).unwrap();
        let region = Region::ball(NormOrder::L2, 0.6, 2).unwrap();
        let out = check_region(
            &sys,
            &region,
            &AroaCriterion::new(100, 1e-2).unwrap(),
            &PgdConfig::default(),
            GradientBackend::Costate,
            None,
        )
        .unwrap();
        assert!(!out.pass);
    }

    #[test]
    fn scalar_bisection_matches_closed_form() {
        let sys = Linear::new(0.5, 1);
        let shape = DMatrix::identity(1, 1);
        let out = bisect_radius(
            &sys,
            NormOrder::L2,
            &shape,
            &AroaCriterion::new(10, 1e-2).unwrap(),
            &PgdConfig::default(),
            GradientBackend::Costate,
            &BisectionConfig::default(),
        )
        .unwrap();
        assert!((out.r_hat - 102.4).abs() <= out.tol_r, "{}", out.r_hat);
        assert!(!out.unbounded_pass);
        assert!(out.witness.unwrap().value > 1e-2);
    }

    #[test]
    fn unstable_system_is_degenerate() {
        let sys = Linear::new(2.0, 1);
        let err = bisect_radius(
            &sys,
            NormOrder::L2,
            &DMatrix::identity(1, 1),
            &AroaCriterion::new(40, 1e-2).unwrap(),
            &PgdConfig { restarts: 1, ..Default::default() },
            GradientBackend::Costate,
            &BisectionConfig { floor: 1e-6, ..Default::default() },
        );
        assert!(matches!(err, Err(Error::DegenerateRegion { .. })));
    }

    #[test]
    fn zero_map_passes_everywhere() {
        let sys = Linear::new(0.0, 1);
        let out = bisect_radius(
            &sys,
            NormOrder::L2,
            &DMatrix::identity(1, 1),
            &AroaCriterion::new(1, 1e-2).unwrap(),
            &PgdConfig { restarts: 1, ..Default::default() },
            GradientBackend::Costate,
            &BisectionConfig { ceiling: 100.0, ..Default::default() },
        )
        .unwrap();
        assert!(out.unbounded_pass);
        assert_eq!(out.r_hat, 64.0);
    }
}
