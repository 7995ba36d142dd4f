use std::sync::atomic::{AtomicUsize, Ordering};

use approx::assert_relative_eq;
use nalgebra::{DMatrix, Rotation2};
use roa_attack::geometry::{NormOrder, Region, State};
use roa_attack::pgd::{step_closed_form, step_projected};
use roa_attack::systems::{ClosedLoop, Cubic, Linear, Pendulum, PendulumParams, Simulator, Terminal};
use roa_attack::{gradient, search, Error, GradientBackend, PgdConfig, Result, SearchOptions, StepSize, UpdateRule};

fn v(xs: &[f64]) -> State {
    State::from_column_slice(xs)
}

fn history() -> SearchOptions {
    SearchOptions { record_history: true, ..Default::default() }
}

#[test]
fn step_examples() {
    let ball = Region::ball(NormOrder::L2, 1.0, 2).unwrap();
    let xi = v(&[0.1, 0.2]);
    assert_eq!(step_projected(&ball, &xi, &State::zeros(2), 1.0).unwrap(), xi);
    let on = v(&[0.6, 0.8]);
    assert!((step_projected(&ball, &on, &on, 1.0).unwrap() - &on).amax() < 1e-15);
    assert!((step_projected(&ball, &State::zeros(2), &v(&[3.0, 4.0]), 1.0).unwrap() - &on).amax() < 1e-15);
    assert!((step_closed_form(&ball, &v(&[3.0, 4.0])).unwrap() - &on).amax() < 1e-15);

    let l1 = Region::ball(NormOrder::L1, 2.0, 2).unwrap();
    assert_eq!(step_closed_form(&l1, &v(&[3.0, -1.0])).unwrap(), v(&[2.0, 0.0]));
    let linf = Region::ball(NormOrder::LInf, 2.0, 2).unwrap();
    assert_eq!(step_closed_form(&linf, &v(&[3.0, -1.0])).unwrap(), v(&[2.0, -2.0]));

    assert!(matches!(step_closed_form(&ball, &State::zeros(2)), Err(Error::DegenerateGradient { .. })));
}

#[test]
fn linear_search_reaches_sphere_value() {
    let sys = Linear::new(0.5, 2);
    let ball = Region::ball(NormOrder::L2, 1.0, 2).unwrap();
    for rule in [UpdateRule::BoundaryClosedForm, UpdateRule::Projected] {
        let cfg = PgdConfig { rule, ..Default::default() };
        let run = search(&sys, &ball, 10, &cfg, GradientBackend::Costate, &Default::default()).unwrap();
        assert_relative_eq!(run.best_value, 0.5f64.powi(20), max_relative = 1e-9);
        assert_relative_eq!(run.best_xi.norm(), 1.0, epsilon = 1e-9);
    }
}

#[test]
fn closed_form_iterates_stay_on_boundary() {
    let sys = Cubic::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), 0.1).unwrap();
    let shape = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, -0.1, 0.8]);
    for order in [NormOrder::L1, NormOrder::L2, NormOrder::LInf] {
        let region = Region::new(order, 0.4, shape.clone()).unwrap();
        let cfg = PgdConfig { restarts: 3, max_iters: 30, ..Default::default() };
        let run = search(&sys, &region, 50, &cfg, GradientBackend::Costate, &history()).unwrap();
        for r in &run.restarts {
            assert!(!r.history.is_empty());
            for it in &r.history {
                assert_relative_eq!(region.gauge(&it.xi), 0.4, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn converged_closed_form_satisfies_stationarity() {
    // At a fixed point of the l2 rule the gradient is normal to the
    // ellipsoid, i.e. parallel to CᵀCξ.
    let sys = Cubic::new(DMatrix::from_diagonal(&v(&[2.0, 1.0])), 0.1).unwrap();
    let shape = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.2]);
    let region = Region::new(NormOrder::L2, 0.5, shape.clone()).unwrap();
    let cfg = PgdConfig { restarts: 4, max_iters: 1000, ..Default::default() };
    let run = search(&sys, &region, 30, &cfg, GradientBackend::Costate, &Default::default()).unwrap();
    assert_eq!(run.termination, roa_attack::Termination::Converged);
    let g = gradient(&sys, &run.best_xi, 30, GradientBackend::Costate).unwrap().gradient;
    let normal = shape.tr_mul(&(&shape * &run.best_xi));
    let cos = g.dot(&normal) / (g.norm() * normal.norm());
    assert!(cos >= 1.0 - 1e-8, "cos = {cos}");
}

#[test]
fn more_restarts_never_lower_the_best_value() {
    let sys = Pendulum::with_default_policy(PendulumParams::default()).unwrap();
    let region = Region::ball(NormOrder::L2, 1.0, 2).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for restarts in 1..=8 {
        let cfg = PgdConfig { restarts, max_iters: 40, seed: 9, ..Default::default() };
        let run = search(&sys, &region, 100, &cfg, GradientBackend::Costate, &Default::default()).unwrap();
        assert!(run.best_value >= prev);
        assert_eq!(run.restarts.len(), restarts);
        prev = run.best_value;
    }
}

#[test]
fn isotropic_system_is_rotation_invariant() {
    let sys = Cubic::identity(2);
    let region = Region::ball(NormOrder::L2, 0.8, 2).unwrap();
    let seeds = vec![v(&[0.8, 0.0]), v(&[0.1, 0.3]), v(&[-0.5, 0.5])];
    let cfg = PgdConfig { restarts: 3, ..Default::default() };
    let base = search(&sys, &region, 100, &cfg, GradientBackend::Costate, &SearchOptions {
        seeds: seeds.clone(),
        ..Default::default()
    })
    .unwrap();
    for angle in [0.3, 1.7, -2.4] {
        let rot = Rotation2::new(angle);
        let rotated: Vec<State> = seeds.iter().map(|s| State::from_column_slice((rot * nalgebra::Vector2::new(s[0], s[1])).as_slice())).collect();
        let run = search(&sys, &region, 100, &cfg, GradientBackend::Costate, &SearchOptions {
            seeds: rotated,
            ..Default::default()
        })
        .unwrap();
        assert_relative_eq!(run.best_value, base.best_value, max_relative = 1e-10);
    }
}

#[test]
fn cubic_unit_sphere_pass_and_fail() {
    let sys = Cubic::identity(2);
    let cfg = PgdConfig::default();
    for backend in [GradientBackend::Costate, GradientBackend::forward_difference()] {
        let inside = Region::ball(NormOrder::L2, 0.9, 2).unwrap();
        let run = search(&sys, &inside, 100, &cfg, backend, &Default::default()).unwrap();
        assert!(run.best_value <= 1e-2);

        let outside = Region::ball(NormOrder::L2, 1.1, 2).unwrap();
        let run = search(&sys, &outside, 100, &cfg, backend, &Default::default()).unwrap();
        assert!(run.best_value > 1e-2);
        assert!(sys.terminal(&(v(&[1.1, 0.0])), 100).unwrap().objective() > 1e-2);
    }
}

#[test]
fn projected_rule_with_fixed_step() {
    // L = a^{2T}‖ξ‖² has gradient 2a^{2T}ξ, so a fixed step walks radially
    // out to the boundary.
    let sys = Linear::new(0.9, 3);
    let region = Region::ball(NormOrder::L2, 2.0, 3).unwrap();
    let cfg = PgdConfig {
        rule: UpdateRule::Projected,
        step: StepSize::Fixed { alpha: 1.0 },
        max_iters: 500,
        ..Default::default()
    };
    let run = search(&sys, &region, 5, &cfg, GradientBackend::Costate, &Default::default()).unwrap();
    assert_relative_eq!(run.best_value, 0.9f64.powi(10) * 4.0, max_relative = 1e-12);
    assert!(region.contains(&run.best_xi));
}

#[test]
fn projected_rule_rejects_shaped_polytopes() {
    let sys = Cubic::identity(2);
    let region = Region::new(NormOrder::L1, 0.5, DMatrix::from_diagonal(&v(&[2.0, 1.0]))).unwrap();
    let cfg = PgdConfig { rule: UpdateRule::Projected, ..Default::default() };
    let err = search(&sys, &region, 10, &cfg, GradientBackend::Costate, &Default::default()).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
}

#[test]
fn search_is_deterministic_across_thread_counts() {
    let sys = Pendulum::with_default_policy(PendulumParams::default()).unwrap();
    let region = Region::ball(NormOrder::L2, 1.3, 2).unwrap();
    let cfg = PgdConfig { seed: 42, ..Default::default() };
    let run_in = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| search(&sys, &region, 200, &cfg, GradientBackend::Costate, &Default::default()).unwrap())
    };
    let a = run_in(1);
    let b = run_in(4);
    assert_eq!(a.best_xi, b.best_xi);
    assert_eq!(a.best_value, b.best_value);
    assert_eq!(a.simulations, b.simulations);
}

#[test]
fn stop_above_ends_after_the_wave() {
    let sys = Cubic::identity(2);
    let region = Region::ball(NormOrder::L2, 1.2, 2).unwrap();
    let cfg = PgdConfig { restarts: 12, wave: 4, ..Default::default() };
    let opts = SearchOptions { stop_above: Some(1e-2), ..Default::default() };
    let run = search(&sys, &region, 100, &cfg, GradientBackend::Costate, &opts).unwrap();
    assert_eq!(run.restarts.len(), 4);
    assert!(run.best_value > 1e-2);
}

#[test]
fn warm_start_is_restart_zero_on_the_boundary() {
    let sys = Cubic::identity(2);
    let region = Region::ball(NormOrder::L2, 0.7, 2).unwrap();
    let opts = SearchOptions { warm_start: Some(v(&[0.1, 0.1])), ..Default::default() };
    let run = search(&sys, &region, 50, &PgdConfig::default(), GradientBackend::Costate, &opts).unwrap();
    let start = &run.restarts[0].start;
    assert_relative_eq!(start.norm(), 0.7, epsilon = 1e-12);
    assert_relative_eq!(start[0], start[1], epsilon = 1e-12);
}

/// Fails with a transport error once `budget` initial states have been used.
struct Flaky<S> {
    inner: S,
    budget: usize,
    used: AtomicUsize,
}

impl<S: Simulator> Simulator for Flaky<S> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn terminal(&self, x0: &State, horizon: usize) -> Result<Terminal> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(Error::Transport("connection reset".into()));
        }
        self.inner.terminal(x0, horizon)
    }

    fn closed_loop(&self) -> Option<&dyn ClosedLoop> {
        None
    }
}

#[test]
fn transport_failure_returns_partial_run() {
    let sim = Flaky { inner: Cubic::identity(2), budget: 100, used: AtomicUsize::new(0) };
    let region = Region::ball(NormOrder::L2, 0.9, 2).unwrap();
    let cfg = PgdConfig { restarts: 8, ..Default::default() };
    let err = search(&sim, &region, 50, &cfg, GradientBackend::forward_difference(), &Default::default()).unwrap_err();
    assert!(err.is_transport());
    let Error::Interrupted { partial, .. } = err else { panic!("expected an interrupted search") };
    assert!(!partial.restarts.is_empty());
    assert!(partial.simulations > 0 && partial.simulations <= 100);
    assert!(region.contains(&partial.best_xi));
}

#[test]
fn input_errors_are_not_interruptions() {
    let sys = Cubic::identity(3);
    let region = Region::ball(NormOrder::L2, 0.5, 2).unwrap();
    let err = search(&sys, &region, 10, &PgdConfig::default(), GradientBackend::Costate, &Default::default())
        .unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 }));
    let bad = PgdConfig { restarts: 0, max_iters: 0, ..Default::default() };
    assert_eq!(bad.violations().len(), 2);
}
