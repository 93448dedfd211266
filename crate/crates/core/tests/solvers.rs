//! Solver behaviour on the model problem `q = 2`, `s = 0.4` and neighbours.

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fraclab_core::*;

fn model(n: usize) -> (StiffnessSystem, ProblemParams, Field) {
    let grid = build_grid(-1.0, 1.0, n).unwrap();
    let params = ProblemParams::new(0.4, 2.0, 0.0).unwrap();
    let sys = assemble_stiffness(&grid, &params).unwrap();
    let (w, rep) = solve_pure_singular(&sys, &params).unwrap();
    assert!(rep.converged);
    (sys, params, w)
}

#[test]
fn regularized_solutions_increase_as_regularization_vanishes() {
    let (sys, params, _) = model(96);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let g = Field::from_fn(96, |_| rng.gen_range(0.0..3.0));
        let path = regularization_path(&sys, &params, &g, &RegularizationSchedule::default()).unwrap();
        assert!(path.windows(2).all(|p| p[1].0 < p[0].0));
        for pair in path.windows(2) {
            assert!(pair[0].1.below(&pair[1].1, 1e-9).is_ok(), "eps {} -> {}", pair[0].0, pair[1].0);
        }
    }
}

#[test]
fn singular_solution_does_not_depend_on_schedule() {
    let (sys, params, _) = model(128);
    let g = Field::from_fn(128, |i| 1.0 + (i as f64 * 0.1).sin());
    let schedules = [
        RegularizationSchedule::default(),
        RegularizationSchedule::geometric(0.5, 0.5, 30, 1e-14).unwrap(),
        RegularizationSchedule::new(vec![1.0, 1e-2, 1e-4, 1e-8], 1e-14).unwrap(),
    ];
    let solutions: Vec<Field> = schedules
        .iter()
        .map(|sch| {
            let (u, rep) = solve_singular_semilinear_with(&sys, &params, &g, sch).unwrap();
            assert!(rep.converged && rep.residual <= 1e-8);
            u
        })
        .collect();
    for u in &solutions[1..] {
        assert!((&u.0 - &solutions[0].0).amax() <= 1e-6);
    }
}

#[test]
fn bad_schedules_and_loads_are_rejected() {
    assert!(RegularizationSchedule::new(vec![], 1e-14).unwrap_err().is_parameter());
    assert!(RegularizationSchedule::new(vec![0.1, 0.2], 1e-14).unwrap_err().is_parameter());
    assert!(RegularizationSchedule::new(vec![0.1, -0.2], 1e-14).is_err());
    let (sys, params, _) = model(32);
    let mut g = Field::zeros(32);
    g[3] = -1.0;
    assert!(solve_singular_semilinear(&sys, &params, &g).unwrap_err().is_parameter());
}

#[test]
fn sobolev_estimate_does_not_increase_under_nested_refinement() {
    let params = ProblemParams::new(0.4, 2.0, 0.0).unwrap();
    let values: Vec<f64> = [31usize, 63, 127]
        .iter()
        .map(|&n| {
            let sys = assemble_stiffness(&build_grid(-1.0, 1.0, n).unwrap(), &params).unwrap();
            let est = sobolev_constant(&sys, &params).unwrap();
            assert!(est.gradient_norm <= 1e-6, "n = {n}: gradient {}", est.gradient_norm);
            let direct = sobolev_quotient(&sys, &params, &est.minimizer.0);
            assert_relative_eq!(direct, est.value, max_relative = 1e-12);
            est.value
        })
        .collect();
    assert!(values.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9)), "{values:?}");
}

#[test]
fn sobolev_quotient_is_scale_invariant() {
    let (sys, params, w) = model(64);
    let r = sobolev_quotient(&sys, &params, &w.0);
    assert_relative_eq!(sobolev_quotient(&sys, &params, &(&w.0 * 7.5)), r, max_relative = 1e-12);
}

#[test]
fn energy_gap_shrinks_as_bubble_concentrates() {
    let (sys, params, w) = model(256);
    let sobolev = sobolev_constant(&sys, &params).unwrap().value;
    let at = params.with_lambda(0.04).unwrap();
    let minimal = monotone_iteration(&sys, &at, &w, None, &MonotoneOptions::default()).unwrap();
    let gap = energy_gap_check(&sys, &at, &minimal.solution, &[0.08, 0.04, 0.02], 0.2, sobolev).unwrap();
    assert!(gap.passes());
    assert!(gap.entries.iter().all(|e| e.gap > 0.0 && e.argmax_t > 0.0));
    let (with, without) = gap_thresholds(&at, sobolev);
    assert_relative_eq!(with, gap.threshold, max_relative = 1e-14);
    assert!(with > without);
}

#[test]
fn minimal_branch_increases_with_lambda_and_stays_enveloped() {
    let (sys, params, w) = model(128);
    let mut previous = w.clone();
    for lambda in [0.01, 0.02, 0.04, 0.06] {
        let at = params.with_lambda(lambda).unwrap();
        let out = monotone_iteration(&sys, &at, &w, None, &MonotoneOptions::default()).unwrap();
        assert_eq!(out.status, MonotoneStatus::Converged);
        assert!(out.min_increment >= -1e-10);
        assert!(previous.below(&out.solution, 1e-9).is_ok());
        assert!(envelope_check(&sys, &at, &w, &out.solution).unwrap().passes());
        previous = out.solution;
    }
}

#[test]
fn envelope_rejects_fields_outside_the_band() {
    let (sys, params, w) = model(64);
    let at = params.with_lambda(0.02).unwrap();
    let below = Field(&w.0 * 0.9);
    let report = envelope_check(&sys, &at, &w, &below).unwrap();
    assert!(report.lower_violation.is_some() && !report.passes());
    // at λ = 0 the upper envelope is w itself, so any bump above w violates it
    let mut bump = w.clone();
    bump[32] += 0.1;
    let report = envelope_check(&sys, &params, &w, &bump).unwrap();
    assert!(report.lower_violation.is_none());
    assert_eq!(report.upper_violation.map(|v| v.0), Some(32));
}

#[test]
fn comparison_holds_for_random_ordered_loads() {
    let (sys, params, _) = model(64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let g1 = Field::from_fn(64, |_| rng.gen_range(0.0..4.0));
        let g2 = Field::from_fn(64, |i| g1[i] + rng.gen_range(0.0..1.0));
        let (u1, _) = solve_singular_semilinear(&sys, &params, &g1).unwrap();
        let (u2, _) = solve_singular_semilinear(&sys, &params, &g2).unwrap();
        let c = comparison_check(&sys, &params, &u1, &u2, &g1, &g2);
        assert!(c.holds && !c.indeterminate, "worst {:?}", c.worst);
    }
}

#[test]
fn gateaux_derivative_matches_central_differences() {
    let (sys, params, w) = model(128);
    let at = params.with_lambda(0.03).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let u = Field::from_fn(128, |i| w[i] + rng.gen_range(0.0..0.5));
        let phi = Field::from_fn(128, |_| rng.gen_range(-1.0..1.0));
        let t = 1e-5;
        let d = gateaux_derivative(&sys, &at, &u, &phi).unwrap();
        let fd = (energy(&sys, &at, &Field(&u.0 + &phi.0 * t)).unwrap() - energy(&sys, &at, &Field(&u.0 - &phi.0 * t)).unwrap())
            / (2.0 * t);
        assert!((d - fd).abs() <= 1e-4 * (1.0 + d.abs()), "{d} vs {fd}");
    }
}

#[test]
fn energy_edge_cases() {
    let (sys, params, w) = model(32);
    let mut zero = w.clone();
    zero[0] = 0.0;
    assert_eq!(energy(&sys, &params, &zero).unwrap(), f64::INFINITY);
    let mut negative = w.clone();
    negative[1] = -0.1;
    assert!(energy(&sys, &params, &negative).unwrap_err().is_parameter());
    // q < 1: zero values are allowed
    let sub = ProblemParams::new(0.4, 0.5, 0.0).unwrap();
    assert!(energy(&sys, &sub, &zero).unwrap().is_finite());
}

#[test]
fn extremal_parameter_is_stable_under_refinement() {
    let estimates: Vec<f64> = [128usize, 256]
        .iter()
        .map(|&n| {
            let (sys, params, w) = model(n);
            let lam1 = principal_eigenpair(&sys).unwrap().lam1;
            let cert = lambda_certificate(&params, lam1).unwrap();
            let star = estimate_lambda_star(&sys, &params, &w, cert, 1e-3).unwrap();
            assert!(star.lower < star.upper && star.upper <= cert);
            assert!(star.relative_width() <= 1e-3 * 1.01);
            star.estimate
        })
        .collect();
    let drift = (estimates[1] - estimates[0]).abs() / estimates[1];
    assert!(drift <= 0.05, "{estimates:?}");
}

#[test]
fn sweep_reports_both_branches_below_the_extremal_parameter() {
    let (sys, params, w) = model(128);
    let lam1 = principal_eigenpair(&sys).unwrap().lam1;
    let cert = lambda_certificate(&params, lam1).unwrap();
    let sobolev = sobolev_constant(&sys, &params).unwrap().value;
    let opts = MountainPassOptions::default();
    let diagram = sweep_lambda(&sys, &params, &w, &[0.03, 1.0], cert, Some((sobolev, &opts))).unwrap();
    let minimal: Vec<_> = diagram.branch(Branch::Minimal).collect();
    assert_eq!(minimal.len(), 2);
    assert!(minimal[0].converged && !minimal[1].converged);
    let second: Vec<_> = diagram.branch(Branch::MountainPass).collect();
    assert!(!second.is_empty() && second[0].converged);
    assert!(second[0].supnorm > minimal[0].supnorm && second[0].energy > minimal[0].energy);
}

#[test]
fn boundary_fit_with_logarithmic_correction() {
    let grid = build_graded_grid(-1.0, 1.0, 512, 2.5).unwrap();
    let params = ProblemParams::new(0.4, 1.0, 0.0).unwrap();
    let sys = assemble_stiffness(&grid, &params).unwrap();
    let (w, rep) = solve_pure_singular(&sys, &params).unwrap();
    assert!(rep.converged);
    let fit = holder_fit(&w, &grid, &params, None).unwrap();
    assert!(fit.log_correction && fit.trusted());
    assert!((fit.alpha_fit - 0.4).abs() <= 0.05, "{}", fit.alpha_fit);
    let eig = principal_eigenpair(&sys).unwrap();
    let (k1, k2) = profile_sandwich(&w, &eig.phi1, &grid, 1.0, fit.fit_width);
    assert!(0.0 < k1 && k1 <= k2 && k2.is_finite());
}

#[test]
fn cached_assembly_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let grid = build_grid(-1.0, 1.0, 48).unwrap();
    let params = ProblemParams::new(0.3, 2.0, 0.0).unwrap();
    let first = assemble_cached(dir.path(), &grid, &params).unwrap();
    let second = assemble_cached(dir.path(), &grid, &params).unwrap();
    assert_eq!(first.matrix(), second.matrix());
    let other = assemble_cached(dir.path(), &grid, &ProblemParams::new(0.35, 2.0, 0.0).unwrap()).unwrap();
    assert_ne!(first.matrix(), other.matrix());
}
