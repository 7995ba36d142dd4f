//! Declarative system descriptions as they appear in experiment configs.

use std::path::Path;
use std::time::Duration;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;

use super::cubic::{DEFAULT_DT, DEFAULT_SUBSTEPS};
use super::external::DEFAULT_TIMEOUT;
use super::{Cartpole, CartpoleParams, Cubic, ExternalSimulator, Linear, MlpPolicy, Pendulum, PendulumParams, Simulator};

/// A dense matrix: `"identity"`, row-major rows, or `{"diag": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Rows(Vec<Vec<f64>>),
    Diagonal { diag: Vec<f64> },
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec::Named("identity".into())
    }
}

impl MatrixSpec {
    /// The dimension this spec pins down on its own, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            MatrixSpec::Named(_) => None,
            MatrixSpec::Rows(rows) => Some(rows.len()),
            MatrixSpec::Diagonal { diag } => Some(diag.len()),
        }
    }

    pub fn to_matrix(&self, dim: Option<usize>) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Named(name) if name.eq_ignore_ascii_case("identity") => {
                let n = dim.ok_or_else(|| Error::InvalidArgument("\"identity\" needs a state_dim".into()))?;
                DMatrix::identity(n, n)
            }
            MatrixSpec::Named(name) => {
                return Err(Error::InvalidArgument(format!("unknown matrix shorthand {name:?}")))
            }
            MatrixSpec::Rows(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidArgument("matrix rows must form a square matrix".into()));
                }
                DMatrix::from_row_slice(n, n, &rows.concat())
            }
            MatrixSpec::Diagonal { diag } => DMatrix::from_diagonal(&State::from_column_slice(diag)),
        };
        if let Some(n) = dim {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.nrows() });
            }
        }
        Ok(m)
    }

    /// Explicit rows, so the dimension survives the round trip.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec::Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

/// Where a policy comes from: a JSON file path or inline weights. Absent
/// means the built-in default policy for the plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySource {
    File(String),
    Inline(MlpPolicy),
}

impl PolicySource {
    fn load(&self, base: &Path) -> Result<MlpPolicy> {
        match self {
            PolicySource::File(p) => MlpPolicy::load(base.join(p)),
            PolicySource::Inline(p) => Ok(p.clone()),
        }
    }
}

fn default_cubic_dt() -> f64 {
    DEFAULT_DT
}

fn default_cubic_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Linear {
        state_dim: usize,
        a: f64,
    },
    Pendulum {
        #[serde(default)]
        params: PendulumParams,
        #[serde(default)]
        policy: Option<PolicySource>,
    },
    Cartpole {
        #[serde(default)]
        params: CartpoleParams,
        #[serde(default)]
        policy: Option<PolicySource>,
    },
    Cubic {
        #[serde(default)]
        state_dim: Option<usize>,
        #[serde(default)]
        m: MatrixSpec,
        #[serde(default = "default_cubic_dt")]
        dt: f64,
        #[serde(default = "default_cubic_substeps")]
        substeps: usize,
    },
    External {
        command: Vec<String>,
        #[serde(default)]
        sessions: Option<usize>,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

impl SystemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SystemSpec::Linear { .. } => "linear",
            SystemSpec::Pendulum { .. } => "pendulum",
            SystemSpec::Cartpole { .. } => "cartpole",
            SystemSpec::Cubic { .. } => "cubic",
            SystemSpec::External { .. } => "external",
        }
    }

    /// State dimension when known without starting anything.
    pub fn state_dim(&self) -> Option<usize> {
        match self {
            SystemSpec::Linear { state_dim, .. } => Some(*state_dim),
            SystemSpec::Pendulum { .. } => Some(2),
            SystemSpec::Cartpole { .. } => Some(4),
            SystemSpec::Cubic { state_dim, m, .. } => state_dim.or(m.dim()),
            SystemSpec::External { .. } => None,
        }
    }

    /// Default `(horizon, delta)` for this kind of system.
    pub fn default_criterion(&self) -> (usize, f64) {
        match self {
            SystemSpec::Linear { .. } => (10, 1e-2),
            SystemSpec::Cubic { .. } => (100, 1e-2),
            SystemSpec::Pendulum { .. } | SystemSpec::Cartpole { .. } | SystemSpec::External { .. } => {
                (200, 1e-1)
            }
        }
    }

    /// Every problem with the spec, without building it.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            SystemSpec::Linear { state_dim, a } => {
                if *state_dim == 0 {
                    v.push("system.state_dim must be >= 1".into());
                }
                if !a.is_finite() {
                    v.push("system.a must be finite".into());
                }
            }
            SystemSpec::Pendulum { params, .. } => {
                if let Err(e) = params.validate() {
                    v.push(format!("system.params: {e}"));
                }
            }
            SystemSpec::Cartpole { params, .. } => {
                if let Err(e) = params.validate() {
                    v.push(format!("system.params: {e}"));
                }
            }
            SystemSpec::Cubic { state_dim, m, dt, substeps } => {
                if *substeps == 0 {
                    v.push("system.substeps must be >= 1".into());
                }
                if state_dim.or(m.dim()).is_none_or(|n| n == 0) {
                    v.push("system.state_dim must be >= 1 (or give m explicitly)".into());
                } else if let Err(e) = m.to_matrix(*state_dim) {
                    v.push(format!("system.m: {e}"));
                }
                if !(dt.is_finite() && *dt > 0.0) {
                    v.push(format!("system.dt must be > 0, got {dt}"));
                }
            }
            SystemSpec::External { command, sessions, timeout_secs } => {
                if command.is_empty() {
                    v.push("system.command must name a program".into());
                }
                if *sessions == Some(0) {
                    v.push("system.sessions must be >= 1".into());
                }
                if timeout_secs.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
                    v.push("system.timeout_secs must be > 0".into());
                }
            }
        }
        v
    }

    /// Copy with policy files inlined, so the spec no longer depends on the
    /// filesystem.
    pub fn resolved(&self, base: &Path) -> Result<SystemSpec> {
        let inline = |p: &Option<PolicySource>| -> Result<Option<PolicySource>> {
            p.as_ref().map(|src| src.load(base).map(PolicySource::Inline)).transpose()
        };
        Ok(match self {
            SystemSpec::Pendulum { params, policy } => {
                SystemSpec::Pendulum { params: *params, policy: inline(policy)? }
            }
            SystemSpec::Cartpole { params, policy } => {
                SystemSpec::Cartpole { params: *params, policy: inline(policy)? }
            }
            other => other.clone(),
        })
    }

    /// Instantiates the simulator. `workers` sizes the session pool of
    /// external simulators when the spec does not.
    pub fn build(&self, base: &Path, workers: usize) -> Result<Box<dyn Simulator>> {
        let problems = self.violations();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(match self {
            SystemSpec::Linear { state_dim, a } => Box::new(Linear::new(*a, *state_dim)),
            SystemSpec::Pendulum { params, policy } => match policy {
                Some(src) => Box::new(Pendulum::new(*params, src.load(base)?)?),
                None => Box::new(Pendulum::with_default_policy(*params)?),
            },
            SystemSpec::Cartpole { params, policy } => match policy {
                Some(src) => Box::new(Cartpole::new(*params, src.load(base)?)?),
                None => Box::new(Cartpole::with_default_policy(*params)?),
            },
            SystemSpec::Cubic { state_dim, m, dt, substeps } => {
                Box::new(Cubic::new(m.to_matrix(*state_dim)?, *dt)?.with_substeps(*substeps)?)
            }
            SystemSpec::External { command, sessions, timeout_secs } => Box::new(ExternalSimulator::spawn(
                command,
                sessions.unwrap_or(workers).max(1),
                timeout_secs.map(Duration::from_secs_f64).unwrap_or(DEFAULT_TIMEOUT),
            )?),
        })
    }
}
