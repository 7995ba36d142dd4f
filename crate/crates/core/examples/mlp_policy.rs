//! Saves a tanh controller to JSON, loads it back, and estimates the region
//! of the pendulum under it for several torque limits.
//!
//! `cargo run --release --example mlp_policy`

use nalgebra::DMatrix;
use roa_attack::systems::{MlpPolicy, Pendulum, PendulumParams};
use roa_attack::{bisect_radius, AroaCriterion, BisectionConfig, GradientBackend, NormOrder, PgdConfig, State};

fn estimate(params: PendulumParams, policy: MlpPolicy) -> roa_attack::Result<f64> {
    let sys = Pendulum::new(params, policy)?;
    let out = bisect_radius(
        &sys,
        NormOrder::L2,
        &DMatrix::identity(2, 2),
        &AroaCriterion::new(200, 1e-1)?,
        &PgdConfig::default(),
        GradientBackend::Costate,
        &BisectionConfig::default(),
    )?;
    Ok(out.r_hat)
}

fn main() -> roa_attack::Result<()> {
    let params = PendulumParams::default();
    let path = std::env::temp_dir().join("pendulum_policy.json");
    std::fs::write(&path, Pendulum::default_policy(&params)?.to_json()?)?;
    let policy = MlpPolicy::load(&path)?;
    println!("policy: {} inputs, {} layers, saturation {:?}", policy.input_dim(), policy.layers().len(), policy.saturation());
    println!("u(0.2, -0.1) = {:.6}", policy.forward(&State::from_column_slice(&[0.2, -0.1]))?[0]);

    for limit in [0.5, 0.7, 1.0, 1.5] {
        let r_hat = estimate(PendulumParams { saturation: limit, ..params }, policy.clone())?;
        println!("torque limit {limit:.1}: r_hat = {r_hat:.4}");
    }
    Ok(())
}
