//! Worst-case initial-condition search over a region.
//!
//! Maximizes `L_T(ξ) = ‖g_T(ξ)‖²` over `‖Cξ‖_p ≤ r` with either projected
//! gradient ascent or the closed-form boundary update that maximizes the
//! linearized objective on `‖Cξ‖_p = r`. Several restarts are run and the
//! largest value found is reported.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NormOrder, Region, State};
use crate::gradients::{gradient, GradientBackend, GradientResult};
use crate::systems::Simulator;

/// Below this norm of `C^{-T}∇L` the closed-form update is undefined.
pub const DEGENERATE_GRADIENT_NORM: f64 = 1e-300;

const MAX_RESEEDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `ξ ← Π(ξ + α∇L)`.
    Projected,
    /// `ξ ← argmax_{‖Cξ‖_p = r} ∇Lᵀξ`.
    BoundaryClosedForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepSize {
    /// `α = factor · r / (‖∇L‖ + 1e-12)`: every step moves about `factor · r`.
    /// A step that lowers `L_T` is undone and the factor halved.
    Normalized { factor: f64 },
    /// A fixed `α`, so the step length scales with the gradient.
    Fixed { alpha: f64 },
}

impl StepSize {
    fn alpha(&self, radius: f64, grad_norm: f64) -> f64 {
        match *self {
            StepSize::Normalized { factor } => factor * radius / (grad_norm + 1e-12),
            StepSize::Fixed { alpha } => alpha,
        }
    }
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Normalized { factor: 3e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdConfig {
    pub rule: UpdateRule,
    /// Only used by the projected rule.
    pub step: StepSize,
    pub max_iters: usize,
    pub restarts: usize,
    /// Stop a restart once an update moves less than this; `None` means
    /// `1e-9 · r`.
    pub stop_tol: Option<f64>,
    pub seed: u64,
    /// Restarts run concurrently in waves of this size. Early stopping is
    /// checked between waves, so results do not depend on the thread count.
    pub wave: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            rule: UpdateRule::BoundaryClosedForm,
            step: StepSize::default(),
            max_iters: 200,
            restarts: 8,
            stop_tol: None,
            seed: 0,
            wave: 4,
        }
    }
}

impl PgdConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.step {
            StepSize::Normalized { factor } if !(factor.is_finite() && factor > 0.0) => {
                v.push(format!("pgd.step.factor must be > 0, got {factor}"))
            }
            StepSize::Fixed { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                v.push(format!("pgd.step.alpha must be > 0, got {alpha}"))
            }
            _ => {}
        }
        if self.max_iters == 0 {
            v.push("pgd.max_iters must be >= 1".into());
        }
        if self.restarts == 0 {
            v.push("pgd.restarts must be >= 1".into());
        }
        if self.wave == 0 {
            v.push("pgd.wave must be >= 1".into());
        }
        if let Some(t) = self.stop_tol {
            if !(t >= 0.0) {
                v.push(format!("pgd.stop_tol must be >= 0, got {t}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    fn stop_tol(&self, radius: f64) -> f64 {
        self.stop_tol.unwrap_or(1e-9 * radius)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    Converged,
    /// The rollout from an iterate diverged.
    DivergedWitness,
    /// An iterate exceeded the caller's `stop_above` threshold.
    ThresholdExceeded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub xi: State,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartSummary {
    pub index: usize,
    pub start: State,
    pub best_xi: State,
    pub best_value: f64,
    pub best_grad_norm: f64,
    pub iterations: usize,
    pub simulations: usize,
    pub termination: Termination,
    /// Every evaluated iterate, when requested.
    pub history: Vec<Iterate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgdRun {
    pub best_xi: State,
    /// Largest `L_T` found; `+∞` for a diverged witness.
    pub best_value: f64,
    /// `‖∇L_T‖` at `best_xi`.
    pub best_grad_norm: f64,
    pub best_restart: usize,
    pub termination: Termination,
    pub restarts: Vec<RestartSummary>,
    pub simulations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SearchOptions {
    /// Rescaled onto the boundary and used as restart 0.
    pub warm_start: Option<State>,
    /// Explicit starting points for the first restarts (after the warm start).
    pub seeds: Vec<State>,
    /// End a restart, and skip remaining waves, once `L_T` exceeds this.
    pub stop_above: Option<f64>,
    pub record_history: bool,
}

/// Projected ascent step `Π(ξ + α·grad)`.
pub fn step_projected(region: &Region, xi: &State, grad: &State, alpha: f64) -> Result<State> {
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    region.project(&(xi + grad * alpha))
}

/// Maximizer of `gradᵀξ` over `‖Cξ‖_p = r`.
///
/// With `v = C^{-T} grad`: for `p = 2`, `ξ = r (CᵀC)⁻¹grad / ‖v‖`; for
/// `p = 1`, all of the budget goes to the largest `|v_i|` (lowest index on
/// ties); for `p = ∞`, every transformed coordinate is `r·sign(v_j)` with
/// `sign(0) = +1`.
pub fn step_closed_form(region: &Region, grad: &State) -> Result<State> {
    if grad.len() != region.dim() {
        return Err(Error::DimensionMismatch { expected: region.dim(), got: grad.len() });
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let v = if region.is_identity_shape() { grad.clone() } else { region.shape_inv().tr_mul(grad) };
    let norm = v.norm();
    if !(norm >= DEGENERATE_GRADIENT_NORM) {
        return Err(Error::DegenerateGradient { norm });
    }
    let r = region.radius();
    let transformed = match region.order() {
        NormOrder::L2 => &v * (r / norm),
        NormOrder::L1 => {
            let mut best = 0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > v[best].abs() {
                    best = i;
                }
            }
            let mut t = State::zeros(v.len());
            t[best] = r * v[best].signum();
            t
        }
        NormOrder::LInf => v.map(|x| if x < 0.0 { -r } else { r }),
    };
    let xi = if region.is_identity_shape() { transformed } else { region.shape_inv() * transformed };
    region.to_boundary(&xi).ok_or(Error::DegenerateGradient { norm })
}

struct RestartError {
    error: Error,
    partial: RestartSummary,
}

fn run_restart(
    sim: &dyn Simulator,
    region: &Region,
    horizon: usize,
    cfg: &PgdConfig,
    backend: GradientBackend,
    index: usize,
    start: State,
    rng: &mut ChaCha8Rng,
    opts: &SearchOptions,
) -> std::result::Result<RestartSummary, RestartError> {
    let stop_tol = cfg.stop_tol(region.radius());
    let mut summary = RestartSummary {
        index,
        start: start.clone(),
        best_xi: start.clone(),
        best_value: f64::NEG_INFINITY,
        best_grad_norm: f64::NAN,
        iterations: 0,
        simulations: 0,
        termination: Termination::MaxIters,
        history: Vec::new(),
    };
    let backtrack = cfg.rule == UpdateRule::Projected && matches!(cfg.step, StepSize::Normalized { .. });
    let mut xi = start;
    let mut reseeds = 0;
    let mut shrink = 1.0;
    let mut accepted: Option<(State, GradientResult)> = None;
    for _ in 0..cfg.max_iters {
        let mut g = match gradient(sim, &xi, horizon, backend) {
            Ok(g) => g,
            Err(error) => return Err(RestartError { error, partial: summary }),
        };
        summary.iterations += 1;
        summary.simulations += g.simulations;
        if opts.record_history {
            summary.history.push(Iterate { xi: xi.clone(), value: g.value });
        }
        if g.value > summary.best_value {
            summary.best_value = g.value;
            summary.best_xi = xi.clone();
            summary.best_grad_norm = if g.diverged { f64::NAN } else { g.gradient.norm() };
        }
        if g.diverged {
            summary.termination = Termination::DivergedWitness;
            return Ok(summary);
        }
        if opts.stop_above.is_some_and(|t| g.value > t) {
            summary.termination = Termination::ThresholdExceeded;
            return Ok(summary);
        }
        if backtrack {
            match &accepted {
                Some((prev_xi, prev_g)) if g.value < prev_g.value => {
                    shrink *= 0.5;
                    xi = prev_xi.clone();
                    g = prev_g.clone();
                }
                _ => accepted = Some((xi.clone(), g.clone())),
            }
        }
        let next = match cfg.rule {
            UpdateRule::Projected => {
                let alpha = shrink * cfg.step.alpha(region.radius(), g.gradient.norm());
                step_projected(region, &xi, &g.gradient, alpha)
            }
            UpdateRule::BoundaryClosedForm => step_closed_form(region, &g.gradient),
        };
        let next = match next {
            Ok(n) => n,
            Err(Error::DegenerateGradient { .. }) if reseeds < MAX_RESEEDS => {
                reseeds += 1;
                region.boundary_sample(rng)
            }
            Err(Error::DegenerateGradient { .. }) => {
                summary.termination = Termination::Converged;
                return Ok(summary);
            }
            Err(error) => return Err(RestartError { error, partial: summary }),
        };
        if (&next - &xi).norm() < stop_tol {
            summary.termination = Termination::Converged;
            return Ok(summary);
        }
        xi = next;
    }
    Ok(summary)
}

fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn assemble(mut restarts: Vec<RestartSummary>) -> PgdRun {
    restarts.sort_by_key(|r| r.index);
    let best = restarts
        .iter()
        .fold(None::<&RestartSummary>, |acc, r| match acc {
            Some(b) if b.best_value >= r.best_value => Some(b),
            _ => Some(r),
        })
        .expect("at least one restart");
    PgdRun {
        best_xi: best.best_xi.clone(),
        best_value: best.best_value,
        best_grad_norm: best.best_grad_norm,
        best_restart: best.index,
        termination: best.termination,
        simulations: restarts.iter().map(|r| r.simulations).sum(),
        restarts,
    }
}

/// Runs `cfg.restarts` independent ascents and returns the best.
///
/// Restart 0 is the warm start when one is given; explicit seeds come next;
/// the rest start from random boundary points (closed-form rule) or random
/// interior points (projected rule), each from its own seeded generator.
pub fn search(
    sim: &dyn Simulator,
    region: &Region,
    horizon: usize,
    cfg: &PgdConfig,
    backend: GradientBackend,
    opts: &SearchOptions,
) -> Result<PgdRun> {
    cfg.validate()?;
    backend.validate()?;
    if sim.state_dim() != region.dim() {
        return Err(Error::DimensionMismatch { expected: sim.state_dim(), got: region.dim() });
    }
    if region.order() != NormOrder::L2 && !region.is_identity_shape() && cfg.rule == UpdateRule::Projected {
        return Err(Error::Unsupported(format!(
            "projected rule on an l{} region requires C = I",
            region.order()
        )));
    }

    let mut fixed: Vec<State> = Vec::new();
    if let Some(w) = opts.warm_start.as_ref().and_then(|w| region.to_boundary(w)) {
        fixed.push(w);
    }
    for s in &opts.seeds {
        fixed.push(if region.contains(s) { s.clone() } else { region.project(s)? });
    }

    let mut done: Vec<RestartSummary> = Vec::with_capacity(cfg.restarts);
    let indices: Vec<usize> = (0..cfg.restarts).collect();
    for wave in indices.chunks(cfg.wave) {
        let results: Vec<std::result::Result<RestartSummary, RestartError>> = wave
            .par_iter()
            .map(|&i| {
                let mut rng = restart_rng(cfg.seed, i);
                let start = match fixed.get(i) {
                    Some(s) => s.clone(),
                    None => match cfg.rule {
                        UpdateRule::BoundaryClosedForm => region.boundary_sample(&mut rng),
                        UpdateRule::Projected => region.interior_sample(&mut rng),
                    },
                };
                run_restart(sim, region, horizon, cfg, backend, i, start, &mut rng, opts)
            })
            .collect();
        let mut failure = None;
        for r in results {
            match r {
                Ok(s) => done.push(s),
                Err(RestartError { error, partial }) => {
                    if failure.is_none() {
                        failure = Some(error);
                    }
                    done.push(partial);
                }
            }
        }
        if let Some(error) = failure {
            if error.is_transport() {
                let partial = assemble(done);
                return Err(Error::Interrupted { source: Box::new(error), partial: Box::new(partial) });
            }
            return Err(error);
        }
        if let Some(t) = opts.stop_above {
            if done.iter().any(|r| r.best_value > t) {
                break;
            }
        }
    }
    Ok(assemble(done))
}
