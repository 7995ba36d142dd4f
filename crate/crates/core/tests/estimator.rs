use nalgebra::DMatrix;
use roa_attack::estimator::Phase;
use roa_attack::geometry::{NormOrder, Region, State};
use roa_attack::systems::{Cubic, Linear, Simulator};
use roa_attack::{
    bisect_radius, check_region, AroaCriterion, BisectionConfig, BisectionOutcome, Bracket, Error, GradientBackend,
    PgdConfig,
};

fn estimate(sim: &dyn Simulator, criterion: AroaCriterion, bisection: BisectionConfig) -> BisectionOutcome {
    let n = sim.state_dim();
    bisect_radius(
        sim,
        NormOrder::L2,
        &DMatrix::identity(n, n),
        &criterion,
        &PgdConfig::default(),
        GradientBackend::Costate,
        &bisection,
    )
    .unwrap()
}

fn assert_sound(sim: &dyn Simulator, criterion: &AroaCriterion, out: &BisectionOutcome) {
    let passed = out.trace.iter().filter(|s| s.pass).map(|s| s.r).fold(0.0, f64::max);
    let failed = out.trace.iter().filter(|s| !s.pass).map(|s| s.r).fold(f64::INFINITY, f64::min);
    assert!(passed < failed, "a failing radius lies below a passing one");
    assert_eq!(out.r_hat, passed);
    if let Some(w) = &out.witness {
        assert_eq!(w.r, failed);
        assert!(w.r - out.r_hat <= out.tol_r * (1.0 + 1e-12));
        assert!((w.xi.norm() - w.r).abs() <= 1e-9 * w.r.max(1.0));
        assert!(sim.terminal(&w.xi, criterion.horizon).unwrap().objective() > criterion.delta);
    }
}

#[test]
fn scalar_contraction_matches_closed_form() {
    let criterion = AroaCriterion::new(10, 1e-2).unwrap();
    for a in [0.3f64, 0.5, 0.9] {
        let sys = Linear::new(a, 1);
        let out = estimate(&sys, criterion, BisectionConfig::default());
        let exact = 1e-2f64.sqrt() * a.powi(-10);
        assert!((out.r_hat - exact).abs() <= out.tol_r, "a = {a}: {} vs {exact}", out.r_hat);
        assert!(!out.unbounded_pass);
        assert_sound(&sys, &criterion, &out);
    }
}

#[test]
fn explicit_bracket_and_tolerance() {
    let sys = Linear::new(0.5, 2);
    let criterion = AroaCriterion::new(10, 1e-2).unwrap();
    let bisection = BisectionConfig { bracket: Some(Bracket { r_lo: 100.0, r_hi: 110.0 }), tol_r: Some(1e-6), ..Default::default() };
    let out = estimate(&sys, criterion, bisection);
    assert_eq!(out.tol_r, 1e-6);
    assert!((out.r_hat - 102.4).abs() <= 1e-6);
    // The bracket is confirmed at both ends before bisecting.
    assert_eq!((out.trace[0].phase, out.trace[0].r, out.trace[0].pass), (Phase::Expand, 110.0, false));
    assert_eq!((out.trace[1].phase, out.trace[1].r, out.trace[1].pass), (Phase::Shrink, 100.0, true));
    assert!(out.trace[2..].iter().all(|s| s.phase == Phase::Bisect));
}

#[test]
fn larger_delta_never_shrinks_the_estimate() {
    let sys = Cubic::new(DMatrix::from_row_slice(2, 2, &[3.0, 0.8, 0.8, 1.5]), 0.1).unwrap();
    let mut prev: Option<BisectionOutcome> = None;
    for delta in [1e-3, 1e-2, 1e-1] {
        let out = estimate(&sys, AroaCriterion::new(100, delta).unwrap(), BisectionConfig::default());
        if let Some(p) = prev {
            assert!(out.r_hat >= p.r_hat - p.tol_r.max(out.tol_r));
        }
        prev = Some(out);
    }
}

#[test]
fn cubic_ground_truth_radii() {
    let criterion = AroaCriterion::new(100, 1e-2).unwrap();
    let cases = [
        (DMatrix::identity(2, 2), 0.95, 1.10),
        (DMatrix::from_diagonal(&State::from_column_slice(&[4.0, 1.0])), 0.47, 0.56),
        (DMatrix::from_element(1, 1, 4.0), 0.47, 0.53),
    ];
    for (m, lo, hi) in cases {
        let sys = Cubic::new(m, 0.1).unwrap();
        let out = estimate(&sys, criterion, BisectionConfig::default());
        assert!((lo..=hi).contains(&out.r_hat), "r_hat = {}", out.r_hat);
        assert!(out.witness.is_some());
        assert_sound(&sys, &criterion, &out);
    }
}

#[test]
fn region_check_examples() {
    let sys = Linear::new(0.5, 2);
    let region = Region::ball(NormOrder::L2, 1.0, 2).unwrap();
    let cfg = PgdConfig::default();
    let pass = check_region(&sys, &region, &AroaCriterion::new(10, 1e-2).unwrap(), &cfg, GradientBackend::Costate, None).unwrap();
    assert!(pass.pass);
    assert!((pass.best_value - 0.5f64.powi(20)).abs() <= 1e-15);
    assert!(pass.witness().is_none());

    let fail = check_region(&sys, &region, &AroaCriterion::new(10, 1e-7).unwrap(), &cfg, GradientBackend::Costate, None).unwrap();
    assert!(!fail.pass);
    let (xi, value) = fail.witness().unwrap();
    assert!((xi.norm() - 1.0).abs() <= 1e-9);
    assert!(value > 1e-7);

    let cubic = Cubic::new(DMatrix::from_diagonal(&State::from_column_slice(&[4.0, 1.0])), 0.1).unwrap();
    let region = Region::ball(NormOrder::L2, 0.6, 2).unwrap();
    let check =
        check_region(&cubic, &region, &AroaCriterion::new(100, 1e-2).unwrap(), &cfg, GradientBackend::Costate, None).unwrap();
    assert!(!check.pass);
    assert!(cubic.terminal(&State::from_column_slice(&[0.6, 0.0]), 100).unwrap().objective() > 1e-2);
}

#[test]
fn shaped_regions_estimate_in_their_own_gauge() {
    // With C = diag(2, 1) and M = diag(4, 1) the region ‖Cξ‖ ≤ r is the
    // ellipsoid ξᵀMξ ≤ r², which lies inside the true region iff r ≤ 1.
    let sys = Cubic::new(DMatrix::from_diagonal(&State::from_column_slice(&[4.0, 1.0])), 0.1).unwrap();
    let shape = DMatrix::from_diagonal(&State::from_column_slice(&[2.0, 1.0]));
    let out = bisect_radius(
        &sys,
        NormOrder::L2,
        &shape,
        &AroaCriterion::new(100, 1e-2).unwrap(),
        &PgdConfig::default(),
        GradientBackend::Costate,
        &BisectionConfig::default(),
    )
    .unwrap();
    assert!((0.95..=1.10).contains(&out.r_hat), "r_hat = {}", out.r_hat);
}

#[test]
fn unstable_equilibrium_is_degenerate() {
    let sys = Linear::new(2.0, 1);
    let err = bisect_radius(
        &sys,
        NormOrder::L2,
        &DMatrix::identity(1, 1),
        &AroaCriterion::new(40, 1e-2).unwrap(),
        &PgdConfig::default(),
        GradientBackend::Costate,
        &BisectionConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::DegenerateRegion { .. }));
}

#[test]
fn contracting_everywhere_hits_the_ceiling() {
    let sys = Linear::new(0.0, 2);
    let out = estimate(&sys, AroaCriterion::new(5, 1e-2).unwrap(), BisectionConfig { ceiling: 100.0, ..Default::default() });
    assert!(out.unbounded_pass);
    assert!(out.witness.is_none());
    assert!(out.r_hat <= 100.0);
}

#[test]
fn invalid_settings_are_reported_together() {
    assert!(AroaCriterion::new(10, 0.0).is_err());
    let bad = BisectionConfig { bracket: Some(Bracket { r_lo: 2.0, r_hi: 1.0 }), tol_r: Some(-1.0), ..Default::default() };
    assert_eq!(bad.violations().len(), 2);
    let sys = Linear::new(0.5, 1);
    let err = bisect_radius(
        &sys,
        NormOrder::L2,
        &DMatrix::identity(1, 1),
        &AroaCriterion { horizon: 10, delta: -1.0 },
        &PgdConfig::default(),
        GradientBackend::Costate,
        &bad,
    )
    .unwrap_err();
    let Error::Config(items) = err else { panic!("expected a config error") };
    assert_eq!(items.len(), 3);
}
