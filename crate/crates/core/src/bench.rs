//! Benchmarks: estimate quality against the analytic cubic radius as the
//! dimension grows, and per-iteration convergence of the two update rules.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{bisect_radius, AroaCriterion, BisectionConfig};
use crate::geometry::{NormOrder, Region, State};
use crate::gradients::GradientBackend;
use crate::oracle::boundary_grid;
use crate::pgd::{search, PgdConfig, SearchOptions, StepSize, UpdateRule};
use crate::systems::cubic::DEFAULT_DT;
use crate::systems::{Cubic, Simulator};

/// Random symmetric positive definite matrix `AᵀA + 0.1·I` (standard normal
/// `A`), rescaled so that `λ_max` is uniform on `[1, 10]`. Returns the
/// matrix and its `λ_max`.
pub fn random_pd_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (DMatrix<f64>, f64) {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut m = a.tr_mul(&a) + DMatrix::identity(n, n) * 0.1;
    let current = SymmetricEigen::new(m.clone()).eigenvalues.max();
    let target = rng.random_range(1.0..=10.0);
    m *= target / current;
    m = (&m + m.transpose()) * 0.5;
    (m, target)
}

fn sample_rng(seed: u64, n: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | sample as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub dims: Vec<usize>,
    pub samples: usize,
    pub criterion: AroaCriterion,
    pub pgd: PgdConfig,
    pub gradient: GradientBackend,
    pub bisection: BisectionConfig,
    pub seed: u64,
    /// Record wall time per sample; when off the column is written as 0 so
    /// reruns are byte-identical.
    pub timing: bool,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            dims: vec![2, 5, 10, 20, 50],
            samples: 10,
            criterion: AroaCriterion { horizon: 100, delta: 1e-2 },
            pgd: PgdConfig::default(),
            gradient: GradientBackend::Costate,
            bisection: BisectionConfig::default(),
            seed: 0,
            timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n_x: usize,
    pub sample: usize,
    pub r_hat: Option<f64>,
    pub r_star: f64,
    pub ratio: Option<f64>,
    pub cpu_seconds: f64,
    #[serde(skip)]
    pub error: Option<String>,
}

/// One bisection per `(n_x, sample)` on a random cubic system with `C = I`.
/// A failing sample is recorded with its error and does not stop the rest.
pub fn scaling_benchmark(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if cfg.dims.is_empty() || cfg.dims.contains(&0) {
        return Err(Error::Config(vec!["bench.dims must be a nonempty list of positive sizes".into()]));
    }
    let jobs: Vec<(usize, usize)> =
        cfg.dims.iter().flat_map(|&n| (0..cfg.samples).map(move |s| (n, s))).collect();
    Ok(jobs
        .par_iter()
        .map(|&(n, sample)| {
            let (m, lambda_max) = random_pd_matrix(n, &mut sample_rng(cfg.seed, n, sample));
            let r_star = lambda_max.powf(-0.5);
            let started = Instant::now();
            let outcome = Cubic::new(m, DEFAULT_DT).and_then(|sys| {
                bisect_radius(
                    &sys,
                    NormOrder::L2,
                    &DMatrix::identity(n, n),
                    &cfg.criterion,
                    &cfg.pgd,
                    cfg.gradient,
                    &cfg.bisection,
                )
            });
            let cpu_seconds = if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 };
            match outcome {
                Ok(o) => ScalingRow {
                    n_x: n,
                    sample,
                    r_hat: Some(o.r_hat),
                    r_star,
                    ratio: Some(o.r_hat / r_star),
                    cpu_seconds,
                    error: None,
                },
                Err(e) => ScalingRow {
                    n_x: n,
                    sample,
                    r_hat: None,
                    r_star,
                    ratio: None,
                    cpu_seconds,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub n_x: usize,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub mean_cpu_seconds: f64,
    pub failures: usize,
}

pub fn summarize_scaling(rows: &[ScalingRow]) -> Vec<ScalingSummary> {
    let mut dims: Vec<usize> = rows.iter().map(|r| r.n_x).collect();
    dims.dedup();
    dims.into_iter()
        .map(|n| {
            let these: Vec<&ScalingRow> = rows.iter().filter(|r| r.n_x == n).collect();
            let ratios: Vec<f64> = these.iter().filter_map(|r| r.ratio).collect();
            let k = ratios.len() as f64;
            let mean = ratios.iter().sum::<f64>() / k;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
            ScalingSummary {
                n_x: n,
                mean_ratio: mean,
                std_ratio: var.sqrt(),
                mean_cpu_seconds: these.iter().map(|r| r.cpu_seconds).sum::<f64>() / these.len() as f64,
                failures: these.len() - ratios.len(),
            }
        })
        .collect()
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub horizons: Vec<usize>,
    /// Each rule runs once per horizon from the same starting point.
    pub rules: Vec<PgdConfig>,
    pub x0: Vec<f64>,
    /// Threshold defining a violating point.
    pub delta: f64,
    /// Distance at which an iterate counts as converged.
    pub tolerance: f64,
    /// Boundary grid resolution for the reference set.
    pub resolution: usize,
    /// End each run at the first iterate with `L_T > δ`.
    pub stop_at_violation: bool,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        let run = PgdConfig { restarts: 1, max_iters: 1000, stop_tol: Some(0.0), ..Default::default() };
        Self {
            horizons: vec![100, 400, 1600],
            rules: vec![
                PgdConfig { rule: UpdateRule::BoundaryClosedForm, ..run.clone() },
                PgdConfig { rule: UpdateRule::Projected, step: StepSize::Fixed { alpha: 1.0 }, ..run },
            ],
            x0: Vec::new(),
            delta: 1e-1,
            tolerance: 1e-2,
            resolution: 3600,
            stop_at_violation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSeries {
    pub rule: UpdateRule,
    pub horizon: usize,
    pub distances: Vec<f64>,
    pub values: Vec<f64>,
    /// Index of the first iterate within tolerance of the reference set.
    pub iterations_to_converge: Option<usize>,
    pub best_value: f64,
}

impl ConvergenceSeries {
    /// Iterations to converge, or the number run when it never did (a lower
    /// bound in that case).
    pub fn iterations(&self) -> usize {
        self.iterations_to_converge.unwrap_or(self.distances.len())
    }
}

/// The points an ascent is trying to reach: boundary grid points with
/// `L_T > δ`, or the grid maximizer when there are none.
struct Reference {
    points: Vec<State>,
    threshold: f64,
}

impl Reference {
    fn build(sim: &dyn Simulator, region: &Region, horizon: usize, delta: f64, resolution: usize) -> Result<Self> {
        let grid = boundary_grid(region, resolution)?;
        let values: Vec<f64> = sim.terminal_batch(&grid, horizon)?.iter().map(|t| t.objective()).collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = if max > delta { delta } else { max };
        let points = grid
            .into_iter()
            .zip(&values)
            .filter(|(_, v)| if max > delta { **v > delta } else { **v >= max })
            .map(|(p, _)| p)
            .collect();
        Ok(Self { points, threshold })
    }

    fn distance(&self, xi: &State, value: f64) -> f64 {
        if value > self.threshold || (value == self.threshold && value.is_finite()) {
            return 0.0;
        }
        self.points.iter().map(|p| (p - xi).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// Runs every rule at every horizon from `x0` and records the distance of
/// each iterate to the reference set.
pub fn convergence_benchmark(
    sim: &dyn Simulator,
    region: &Region,
    cfg: &ConvergenceConfig,
    backend: GradientBackend,
) -> Result<Vec<ConvergenceSeries>> {
    let x0 = State::from_column_slice(&cfg.x0);
    if x0.len() != region.dim() {
        return Err(Error::DimensionMismatch { expected: region.dim(), got: x0.len() });
    }
    let mut out = Vec::new();
    for &horizon in &cfg.horizons {
        let reference = Reference::build(sim, region, horizon, cfg.delta, cfg.resolution)?;
        for rule in &cfg.rules {
            let rule = PgdConfig { restarts: 1, ..rule.clone() };
            let opts = SearchOptions {
                seeds: vec![x0.clone()],
                stop_above: cfg.stop_at_violation.then_some(cfg.delta),
                record_history: true,
                ..Default::default()
            };
            let run = search(sim, region, horizon, &rule, backend, &opts)?;
            let history = &run.restarts[0].history;
            let distances: Vec<f64> = history.iter().map(|it| reference.distance(&it.xi, it.value)).collect();
            out.push(ConvergenceSeries {
                rule: rule.rule,
                horizon,
                iterations_to_converge: distances.iter().position(|d| *d <= cfg.tolerance),
                values: history.iter().map(|it| it.value).collect(),
                distances,
                best_value: run.best_value,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ConvergenceRow<'a> {
    rule: &'a str,
    #[serde(rename = "T")]
    horizon: usize,
    iteration: usize,
    distance: f64,
    #[serde(rename = "L_value")]
    value: f64,
}

pub fn rule_name(rule: UpdateRule) -> &'static str {
    match rule {
        UpdateRule::Projected => "projected",
        UpdateRule::BoundaryClosedForm => "boundary_closed_form",
    }
}

pub fn write_convergence_csv<W: Write>(series: &[ConvergenceSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        for (i, (d, v)) in s.distances.iter().zip(&s.values).enumerate() {
            w.serialize(ConvergenceRow { rule: rule_name(s.rule), horizon: s.horizon, iteration: i, distance: *d, value: *v })?;
        }
    }
    w.flush()?;
    Ok(())
}
