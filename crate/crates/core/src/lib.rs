pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod gradients;
pub mod oracle;
pub mod pgd;
pub mod protocol;
pub mod systems;

pub use error::{Error, Result};
pub use estimator::{bisect_radius, check_region, AroaCriterion, BisectionConfig, BisectionOutcome, Bracket};
pub use geometry::{NormOrder, Region, State};
pub use gradients::{gradient, GradientBackend, GradientResult};
pub use pgd::{search, PgdConfig, PgdRun, SearchOptions, StepSize, Termination, UpdateRule};
pub use systems::{Simulator, Terminal};
