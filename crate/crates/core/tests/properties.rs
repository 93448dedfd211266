//! Structural invariants over random inputs.

use proptest::prelude::*;

use fraclab_core::*;

fn small_cases() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

proptest! {
    #[test]
    fn graded_grid_partitions_interval(a in -5.0f64..5.0, len in 0.1f64..10.0, n in 2usize..300, mu in 1.0f64..3.0) {
        let b = a + len;
        let g = build_graded_grid(a, b, n, mu).unwrap();
        let v = g.vertices();
        prop_assert_eq!(v.len(), n + 2);
        prop_assert!(v.windows(2).all(|p| p[1] > p[0]));
        let total: f64 = (0..g.num_elements()).map(|k| g.element_size(k)).sum();
        prop_assert!((total - len).abs() <= 1e-12 * len);
        let weights: f64 = g.lumped_weights().iter().sum();
        let ends = 0.5 * (g.element_size(0) + g.element_size(n));
        prop_assert!((weights + ends - len).abs() <= 1e-12 * len);
        // symmetric about the midpoint
        for (x, y) in g.nodes().iter().zip(g.nodes().iter().rev()) {
            prop_assert!((x - a - (b - y)).abs() <= 1e-12 * len);
        }
    }

    #[test]
    fn boundary_distance_is_positive_and_one_lipschitz(a in -5.0f64..5.0, len in 0.1f64..10.0, n in 2usize..300) {
        let g = build_grid(a, a + len, n).unwrap();
        let d = boundary_distance(&g).values;
        prop_assert!(d.iter().all(|v| *v > 0.0 && *v <= 0.5 * len + 1e-12));
        for (x, dx) in g.nodes().iter().zip(d.iter()) {
            prop_assert!((dx - (x - a).min(a + len - x)).abs() <= 1e-12 * len);
        }
        prop_assert!(d.windows(2).all(|p| (p[1] - p[0]).abs() <= g.spacing() * (1.0 + 1e-12)));
    }

    #[test]
    fn certificate_is_positive_and_grows_with_lam1(
        q in 0.1f64..4.0, s in 0.05f64..0.45, lam1 in 0.1f64..50.0,
    ) {
        let p = critical_exponent(1, s).unwrap();
        let base = certificate_value(q, p, lam1).unwrap();
        prop_assert!(base > 0.0 && base.is_finite());
        prop_assert!(certificate_value(q, p, 1.5 * lam1).unwrap() > base);
    }
}

proptest! {
    #![proptest_config(small_cases())]

    #[test]
    fn stiffness_is_symmetric_positive_definite(
        s in 0.05f64..0.49, n in 8usize..48, mu in 1.0f64..3.0, seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let grid = build_graded_grid(-1.0, 1.0, n, mu).unwrap();
        let sys = assemble_stiffness(&grid, &ProblemParams::new(s, 0.5, 0.0).unwrap()).unwrap();
        let a = sys.matrix();
        prop_assert!((a - a.transpose()).amax() <= 1e-12 * a.amax());
        prop_assert!(a.clone().cholesky().is_some());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let v = Field::from_fn(n, |_| rng.gen_range(-1.0..1.0));
            prop_assert!(sys.quadratic_form(&v.0) > 0.0);
        }
    }

    #[test]
    fn linear_solve_preserves_order(s in 0.25f64..0.49, n in 8usize..64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let grid = build_grid(-1.0, 1.0, n).unwrap();
        let sys = assemble_stiffness(&grid, &ProblemParams::new(s, 0.5, 0.0).unwrap()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f1 = Field::from_fn(n, |_| rng.gen_range(-1.0..1.0));
        let f2 = Field::from_fn(n, |i| f1[i] + rng.gen_range(0.0..1.0));
        let u1 = sys.solve_dirichlet(&f1).unwrap();
        let u2 = sys.solve_dirichlet(&f2).unwrap();
        prop_assert!(u1.below(&u2, 1e-10).is_ok());
    }

    #[test]
    fn cone_projection_is_admissible_and_idempotent(values in prop::collection::vec(-2.0f64..2.0, 1..64)) {
        let n = values.len();
        let floor = Field::from_fn(n, |i| 0.1 + (i as f64 * 0.37).sin().abs());
        let cone = ConeConstraint { floor: floor.clone() };
        let u = Field::from_slice(&values);
        let projected = cone.project(&u);
        prop_assert!(cone.admits(&projected));
        let twice = cone.project(&projected);
        prop_assert_eq!(twice.as_slice(), projected.as_slice());
        for i in 0..n {
            prop_assert!(projected[i] == u[i] || projected[i] == floor[i]);
        }
        if cone.admits(&u) {
            prop_assert_eq!(projected.as_slice(), u.as_slice());
        }
    }

    #[test]
    fn bubble_is_supported_near_center_and_concentrates(eps in 0.005f64..0.2, nu in 0.05f64..0.25) {
        let grid = build_grid(-1.0, 1.0, 255).unwrap();
        let params = ProblemParams::new(0.4, 2.0, 0.0).unwrap();
        let b = make_bubble(&grid, &params, eps, nu, 3.7).unwrap();
        let c = grid.midpoint();
        for (x, v) in grid.nodes().iter().zip(b.values.iter()) {
            let r = (x - c).abs();
            prop_assert!(*v >= 0.0);
            if r >= 2.0 * nu {
                prop_assert!(*v == 0.0);
            }
        }
        let sharper = make_bubble(&grid, &params, 0.5 * eps, nu, 3.7).unwrap();
        prop_assert!(sharper.values.max() > b.values.max());
    }
}
