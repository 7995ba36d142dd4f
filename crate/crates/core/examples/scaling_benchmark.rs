//! Estimated versus analytic radius on random cubic systems of growing size.
//!
//! `cargo run --release --example scaling_benchmark`

use roa_attack::bench::{scaling_benchmark, summarize_scaling, write_scaling_csv, ScalingConfig};

fn main() -> roa_attack::Result<()> {
    let cfg = ScalingConfig { dims: vec![2, 5, 10], samples: 4, seed: 7, ..Default::default() };
    let rows = scaling_benchmark(&cfg)?;
    write_scaling_csv(&rows, std::io::stdout())?;
    println!();
    for s in summarize_scaling(&rows) {
        println!(
            "n_x = {:>3}: mean ratio {:.4} ± {:.4}, {:.2} s per estimate, {} failures",
            s.n_x, s.mean_ratio, s.std_ratio, s.mean_cpu_seconds, s.failures
        );
    }
    Ok(())
}
