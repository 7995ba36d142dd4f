//! JSON experiment configuration.
//!
//! A config is resolved before anything runs: every default is filled in,
//! policy files are inlined, and all problems are reported together. The
//! resolved form is written next to the results so a run can be replayed
//! from its output directory.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::{ConvergenceConfig, ScalingConfig};
use crate::error::{Error, Result};
use crate::estimator::{AroaCriterion, BisectionConfig, Bracket};
use crate::geometry::{NormOrder, Region, State};
use crate::gradients::GradientBackend;
use crate::pgd::PgdConfig;
use crate::systems::spec::MatrixSpec;
use crate::systems::SystemSpec;

pub const DEFAULT_OUTPUT: &str = "roa-output";

/// `"auto"` or an explicit `{"r_lo", "r_hi"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BracketSpec {
    Named(String),
    Range(Bracket),
}

impl Default for BracketSpec {
    fn default() -> Self {
        BracketSpec::Named("auto".into())
    }
}

impl BracketSpec {
    fn bracket(&self) -> Option<Bracket> {
        match self {
            BracketSpec::Named(_) => None,
            BracketSpec::Range(b) => Some(*b),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub p: NormOrder,
    #[serde(rename = "C")]
    pub shape: MatrixSpec,
    pub bracket: BracketSpec,
    /// Fixed radius for `attack` and `bench convergence`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSettings {
    pub dims: Vec<usize>,
    pub samples: usize,
    pub timing: bool,
}

impl Default for ScalingSettings {
    fn default() -> Self {
        let d = ScalingConfig::default();
        Self { dims: d.dims, samples: d.samples, timing: d.timing }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub horizons: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub tolerance: f64,
    pub resolution: usize,
    pub stop_at_violation: bool,
    /// The rules to compare; by default the closed-form rule and the
    /// projected rule with a fixed step.
    pub rules: Vec<PgdConfig>,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        let d = ConvergenceConfig::default();
        Self {
            horizons: d.horizons,
            x0: None,
            tolerance: d.tolerance,
            resolution: d.resolution,
            stop_at_violation: d.stop_at_violation,
            rules: d.rules,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub scaling: ScalingSettings,
    pub convergence: ConvergenceSettings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    pub region: RegionConfig,
    /// Defaults depend on the system kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<AroaCriterion>,
    pub pgd: PgdConfig,
    /// Defaults to costate for built-in systems, forward differences for
    /// external ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<GradientBackend>,
    pub bisection: BisectionConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Overrides `pgd.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub bench: BenchSettings,
}

/// What the config will be used for; decides which fields are required.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Estimate,
    Attack,
    Scaling,
    Convergence,
    Serve,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))
    }

    fn needs_system(purpose: Purpose) -> bool {
        purpose != Purpose::Scaling
    }

    /// Every problem with the config for `purpose`.
    pub fn violations(&self, purpose: Purpose) -> Vec<String> {
        let mut v = Vec::new();
        let mut dim = None;
        match &self.system {
            Some(s) => {
                v.extend(s.violations());
                dim = s.state_dim();
            }
            None if Self::needs_system(purpose) => v.push("system is required".into()),
            None => {}
        }
        if purpose == Purpose::Serve {
            return v;
        }
        if let Some(c) = &self.criterion {
            v.extend(c.violations());
        }
        v.extend(self.pgd.violations());
        if let Some(g) = &self.gradient {
            if let Err(e) = g.validate() {
                v.push(format!("gradient: {e}"));
            }
        }
        let bisection = BisectionConfig { bracket: self.region.bracket.bracket(), ..self.bisection };
        v.extend(bisection.violations());
        if let BracketSpec::Named(name) = &self.region.bracket {
            if name != "auto" {
                v.push(format!("region.bracket must be \"auto\" or {{\"r_lo\", \"r_hi\"}}, got {name:?}"));
            }
        }
        if let Some(r) = self.region.r {
            if !(r.is_finite() && r > 0.0) {
                v.push(format!("region.r must be > 0, got {r}"));
            }
        }
        if purpose != Purpose::Scaling {
            let shape_dim = dim.or(self.region.shape.dim());
            match self.region.shape.to_matrix(shape_dim) {
                Ok(c) => {
                    if let Err(e) = Region::new(self.region.p, 1.0, c) {
                        v.push(format!("region.C: {e}"));
                    }
                }
                Err(Error::InvalidArgument(_)) if shape_dim.is_none() => {}
                Err(e) => v.push(format!("region.C: {e}")),
            }
        }
        match purpose {
            Purpose::Attack if self.region.r.is_none() => {
                v.push("region.r (or --r) is required for attack; a bracket cannot be attacked".into())
            }
            Purpose::Convergence => {
                if self.region.r.is_none() {
                    v.push("region.r is required for bench convergence".into());
                }
                let c = &self.bench.convergence;
                match (&c.x0, dim) {
                    (None, _) => v.push("bench.convergence.x0 is required".into()),
                    (Some(x0), Some(n)) if x0.len() != n => {
                        v.push(format!("bench.convergence.x0 has {} entries, system has {n}", x0.len()))
                    }
                    _ => {}
                }
                if c.horizons.is_empty() || c.horizons.contains(&0) {
                    v.push("bench.convergence.horizons must be a nonempty list of positive horizons".into());
                }
                if c.rules.is_empty() {
                    v.push("bench.convergence.rules must not be empty".into());
                }
                for (i, r) in c.rules.iter().enumerate() {
                    v.extend(r.violations().into_iter().map(|m| format!("bench.convergence.rules[{i}]: {m}")));
                }
                if !(c.tolerance >= 0.0) {
                    v.push("bench.convergence.tolerance must be >= 0".into());
                }
                if c.resolution == 0 {
                    v.push("bench.convergence.resolution must be >= 1".into());
                }
            }
            Purpose::Scaling => {
                let s = &self.bench.scaling;
                if s.dims.is_empty() || s.dims.contains(&0) {
                    v.push("bench.scaling.dims must be a nonempty list of positive sizes".into());
                }
                if s.samples == 0 {
                    v.push("bench.scaling.samples must be >= 1".into());
                }
            }
            _ => {}
        }
        v
    }

    /// Checks the config and fills in every default. Relative policy paths
    /// are read from `base`.
    pub fn resolve(&self, base: &Path, purpose: Purpose) -> Result<ExperimentConfig> {
        let problems = self.violations(purpose);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut out = self.clone();
        if let Some(s) = &self.system {
            out.system = Some(s.resolved(base)?);
        }
        let default_criterion = match &self.system {
            Some(s) if purpose != Purpose::Scaling => s.default_criterion(),
            _ => (100, 1e-2),
        };
        out.criterion = Some(
            self.criterion
                .unwrap_or(AroaCriterion { horizon: default_criterion.0, delta: default_criterion.1 }),
        );
        let model_free = matches!(self.system, Some(SystemSpec::External { .. })) && purpose != Purpose::Scaling;
        out.gradient = Some(self.gradient.unwrap_or(if model_free {
            GradientBackend::forward_difference()
        } else {
            GradientBackend::Costate
        }));
        let seed = self.seed.unwrap_or(self.pgd.seed);
        out.seed = Some(seed);
        out.pgd.seed = seed;
        out.output = Some(self.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)));
        if let Some(s) = &out.system {
            if let Some(n) = s.state_dim() {
                out.region.shape = MatrixSpec::from_matrix(&self.region.shape.to_matrix(Some(n))?);
            }
        }
        Ok(out)
    }

    pub fn criterion(&self) -> AroaCriterion {
        self.criterion.unwrap_or(AroaCriterion { horizon: 100, delta: 1e-2 })
    }

    pub fn gradient(&self) -> GradientBackend {
        self.gradient.unwrap_or(GradientBackend::Costate)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    pub fn shape(&self, dim: usize) -> Result<DMatrix<f64>> {
        self.region.shape.to_matrix(Some(dim))
    }

    pub fn bisection(&self) -> BisectionConfig {
        BisectionConfig { bracket: self.region.bracket.bracket(), ..self.bisection }
    }

    pub fn scaling(&self) -> ScalingConfig {
        ScalingConfig {
            dims: self.bench.scaling.dims.clone(),
            samples: self.bench.scaling.samples,
            criterion: self.criterion(),
            pgd: self.pgd.clone(),
            gradient: self.gradient(),
            bisection: self.bisection(),
            seed: self.pgd.seed,
            timing: self.bench.scaling.timing,
        }
    }

    pub fn convergence(&self) -> ConvergenceConfig {
        let c = &self.bench.convergence;
        ConvergenceConfig {
            horizons: c.horizons.clone(),
            rules: c.rules.iter().map(|r| PgdConfig { seed: self.pgd.seed, ..r.clone() }).collect(),
            x0: c.x0.clone().unwrap_or_default(),
            delta: self.criterion().delta,
            tolerance: c.tolerance,
            resolution: c.resolution,
            stop_at_violation: c.stop_at_violation,
        }
    }

    pub fn region(&self, dim: usize, radius: f64) -> Result<Region> {
        Region::new(self.region.p, radius, self.shape(dim)?)
    }

    pub fn x0(&self) -> Option<State> {
        self.bench.convergence.x0.as_deref().map(State::from_column_slice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
