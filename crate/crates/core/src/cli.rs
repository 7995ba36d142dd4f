//! The `roa` command line.
//!
//! Exit codes: 0 success (or pass), 1 error, 2 degenerate region, 3 witness
//! found by `attack`. Every error line on stderr starts with `error:`.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bench::{
    convergence_benchmark, rule_name, scaling_benchmark, summarize_scaling, write_convergence_csv, write_scaling_csv,
};
use crate::config::{ExperimentConfig, Purpose};
use crate::error::{Error, Result};
use crate::estimator::{bisect_radius, BisectionOutcome};
use crate::pgd::{search, SearchOptions};
use crate::protocol::serve;
use crate::systems::Simulator;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_WITNESS: i32 = 3;

/// Below this gradient norm at `r_hat` the horizon is probably too long.
pub const VANISHING_GRADIENT: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "roa", version, about = "Region-of-attraction estimation by worst-case initial-condition search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bisect on the radius and report the largest passing region.
    Estimate(Common),
    /// Search one fixed region for a violating initial condition.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Region radius (overrides region.r).
        #[arg(long)]
        r: Option<f64>,
    },
    /// Benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Serve the configured system over the simulator protocol on stdio.
    #[command(hide = true)]
    Serve(Common),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Estimated vs analytic radius on random cubic systems.
    Scaling(Common),
    /// Per-iteration convergence of the update rules across horizons.
    Convergence(Common),
}

fn report(e: &Error) {
    match e {
        Error::Config(items) => {
            for item in items {
                eprintln!("error: invalid config: {item}");
            }
        }
        other => eprintln!("error: {}", other.to_string().replace('\n', " ")),
    }
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            report(&e);
            match e {
                Error::DegenerateRegion { .. } => EXIT_DEGENERATE,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Estimate(c) => estimate(&c),
        Command::Attack { common, r } => attack(&common, r),
        Command::Bench(BenchCommand::Scaling(c)) => bench_scaling(&c),
        Command::Bench(BenchCommand::Convergence(c)) => bench_convergence(&c),
        Command::Serve(c) => serve_stdio(&c),
    }
}

struct Prepared {
    config: ExperimentConfig,
    base: PathBuf,
    workers: usize,
    output: PathBuf,
}

fn prepare(c: &Common, purpose: Purpose, r: Option<f64>) -> Result<Prepared> {
    let mut config = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &c.output {
        config.output = Some(out.clone());
    }
    if r.is_some() {
        config.region.r = r;
    }
    if c.workers == Some(0) {
        return Err(Error::Config(vec!["--workers must be >= 1".into()]));
    }
    let base = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let config = config.resolve(&base, purpose)?;
    let workers = c.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    let output = config.output_dir();
    Ok(Prepared { config, base, workers, output })
}

impl Prepared {
    fn build(&self) -> Result<Box<dyn Simulator>> {
        self.config.system.as_ref().expect("resolved config has a system").build(&self.base, self.workers)
    }

    fn write_snapshot(&self) -> Result<()> {
        fs::create_dir_all(&self.output)?;
        fs::write(self.output.join("config.json"), self.config.to_json() + "\n")?;
        Ok(())
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        fs::write(self.output.join(name), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        Ok(BufWriter::new(fs::File::create(self.output.join(name))?))
    }
}

fn vec_of(x: &nalgebra::DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

/// JSON has no infinity; diverged values are written as `null`.
fn finite(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

#[derive(Serialize)]
struct TraceRow {
    phase: &'static str,
    r: f64,
    pass: bool,
    best_l: f64,
    grad_norm: f64,
    restarts: usize,
    simulations: usize,
    seconds: f64,
}

fn write_trace(p: &Prepared, outcome: &BisectionOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(p.create("trace.csv")?);
    for s in &outcome.trace {
        w.serialize(TraceRow {
            phase: match s.phase {
                crate::estimator::Phase::Expand => "expand",
                crate::estimator::Phase::Shrink => "shrink",
                crate::estimator::Phase::Bisect => "bisect",
            },
            r: s.r,
            pass: s.pass,
            best_l: s.best_value,
            grad_norm: s.best_grad_norm,
            restarts: s.restarts_run,
            simulations: s.simulations,
            seconds: s.seconds,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn estimate(c: &Common) -> Result<i32> {
    let p = prepare(c, Purpose::Estimate, None)?;
    p.write_snapshot()?;
    let sim = p.build()?;
    let n = sim.state_dim();
    let started = Instant::now();
    let outcome = bisect_radius(
        sim.as_ref(),
        p.config.region.p,
        &p.config.shape(n)?,
        &p.config.criterion(),
        &p.config.pgd,
        p.config.gradient(),
        &p.config.bisection(),
    )?;
    let wall = started.elapsed().as_secs_f64();
    let mut warnings = Vec::new();
    if outcome.grad_norm_at_r_hat < VANISHING_GRADIENT {
        warnings.push(format!(
            "gradient norm {:e} at r_hat is below {VANISHING_GRADIENT:e}; T may be too long for the search to make progress",
            outcome.grad_norm_at_r_hat
        ));
    }
    if outcome.unbounded_pass {
        warnings.push("no failing radius below the ceiling; r_hat is the ceiling".into());
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let summary = json!({
        "r_hat": outcome.r_hat,
        "tol_r": outcome.tol_r,
        "unbounded_pass": outcome.unbounded_pass,
        "certification": outcome.certification,
        "witness": outcome.witness.as_ref().map(|w| json!({"r": w.r, "xi": vec_of(&w.xi), "L": finite(w.value)})),
        "grad_norm_at_r_hat": finite(outcome.grad_norm_at_r_hat),
        "checks": outcome.trace.len(),
        "warnings": warnings,
        "wall_seconds": wall,
        "config": p.config,
    });
    p.write_json("summary.json", &summary)?;
    write_trace(&p, &outcome)?;
    println!("r_hat = {} (tol {:e}, {} checks)", outcome.r_hat, outcome.tol_r, outcome.trace.len());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RestartRow {
    restart: usize,
    best_l: f64,
    grad_norm: f64,
    iterations: usize,
    simulations: usize,
    termination: String,
}

fn attack(c: &Common, r: Option<f64>) -> Result<i32> {
    let p = prepare(c, Purpose::Attack, r)?;
    p.write_snapshot()?;
    let sim = p.build()?;
    let radius = p.config.region.r.expect("resolved attack config has a radius");
    let region = p.config.region(sim.state_dim(), radius)?;
    let criterion = p.config.criterion();
    let started = Instant::now();
    let run = search(
        sim.as_ref(),
        &region,
        criterion.horizon,
        &p.config.pgd,
        p.config.gradient(),
        &SearchOptions::default(),
    )?;
    let confirmed = if run.best_value > criterion.delta {
        Some(sim.terminal(&run.best_xi, criterion.horizon)?.objective())
    } else {
        None
    };
    let pass = confirmed.unwrap_or(run.best_value) <= criterion.delta;
    let summary = json!({
        "r": radius,
        "pass": pass,
        "best_L": finite(run.best_value),
        "confirmed_L": confirmed.map(finite),
        "worst_xi": vec_of(&run.best_xi),
        "grad_norm": finite(run.best_grad_norm),
        "termination": run.termination,
        "simulations": run.simulations,
        "wall_seconds": started.elapsed().as_secs_f64(),
        "config": p.config,
    });
    p.write_json("summary.json", &summary)?;
    let mut w = csv::Writer::from_writer(p.create("restarts.csv")?);
    for s in &run.restarts {
        w.serialize(RestartRow {
            restart: s.index,
            best_l: s.best_value,
            grad_norm: s.best_grad_norm,
            iterations: s.iterations,
            simulations: s.simulations,
            termination: serde_json::to_value(s.termination)?.as_str().unwrap_or_default().to_string(),
        })?;
    }
    w.flush()?;
    if pass {
        println!("pass: max L_T = {:e} <= {:e} at r = {radius}", run.best_value, criterion.delta);
        Ok(EXIT_OK)
    } else {
        println!("witness: L_T = {:e} > {:e} at xi = {:?}", confirmed.unwrap_or(run.best_value), criterion.delta, vec_of(&run.best_xi));
        Ok(EXIT_WITNESS)
    }
}

fn bench_scaling(c: &Common) -> Result<i32> {
    let p = prepare(c, Purpose::Scaling, None)?;
    p.write_snapshot()?;
    let rows = scaling_benchmark(&p.config.scaling())?;
    write_scaling_csv(&rows, p.create("scaling.csv")?)?;
    let failures: Vec<_> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| json!({"n_x": r.n_x, "sample": r.sample, "error": e})))
        .collect();
    let summary = summarize_scaling(&rows);
    p.write_json("scaling_summary.json", &json!({"dims": summary, "failures": failures}))?;
    for s in &summary {
        println!(
            "n_x = {:>5}: ratio {:.4} ± {:.4}, {:.3} s/sample, {} failed",
            s.n_x, s.mean_ratio, s.std_ratio, s.mean_cpu_seconds, s.failures
        );
    }
    Ok(EXIT_OK)
}

fn bench_convergence(c: &Common) -> Result<i32> {
    let p = prepare(c, Purpose::Convergence, None)?;
    p.write_snapshot()?;
    let sim = p.build()?;
    let radius = p.config.region.r.expect("resolved convergence config has a radius");
    let region = p.config.region(sim.state_dim(), radius)?;
    let series = convergence_benchmark(sim.as_ref(), &region, &p.config.convergence(), p.config.gradient())?;
    write_convergence_csv(&series, p.create("convergence.csv")?)?;
    let summary: Vec<_> = series
        .iter()
        .map(|s| {
            json!({
                "rule": rule_name(s.rule),
                "T": s.horizon,
                "iterations_to_converge": s.iterations_to_converge,
                "iterations_run": s.distances.len(),
                "best_L": finite(s.best_value),
            })
        })
        .collect();
    p.write_json("convergence_summary.json", &json!(summary))?;
    for s in &series {
        let its = s.iterations_to_converge.map_or_else(|| format!(">{}", s.distances.len()), |k| k.to_string());
        println!("{:<22} T = {:>5}: {its} iterations", rule_name(s.rule), s.horizon);
    }
    Ok(EXIT_OK)
}

fn serve_stdio(c: &Common) -> Result<i32> {
    let p = prepare(c, Purpose::Serve, None)?;
    let sim = p.build()?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve(sim.as_ref(), stdin.lock(), stdout.lock())?;
    io::stdout().flush()?;
    Ok(EXIT_OK)
}
