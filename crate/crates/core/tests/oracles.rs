//! Assembly, spectrum and energy against independent closed forms.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, SymmetricEigen};

use fraclab_core::*;

/// Stiffness of P1 hats on the uniform mesh of the whole line:
/// `K h^(1-2s) Σ_j c_j F(k + j)`, `F(x) = |x|^(3-2s)`, fourth difference `c = (1,-4,6,-4,1)`.
fn toeplitz_entry(s: f64, h: f64, k: usize) -> f64 {
    let c = normalization_constant(1, s).unwrap();
    let kk = 2.0 * c / (2.0 * s * (1.0 - 2.0 * s) * (2.0 - 2.0 * s) * (3.0 - 2.0 * s));
    let f = |x: f64| x.abs().powf(3.0 - 2.0 * s);
    let k = k as f64;
    kk * h.powf(1.0 - 2.0 * s) * (f(k - 2.0) - 4.0 * f(k - 1.0) + 6.0 * f(k) - 4.0 * f(k + 1.0) + f(k + 2.0))
}

fn toeplitz_matrix(s: f64, h: f64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| toeplitz_entry(s, h, i.abs_diff(j)))
}

#[test]
fn uniform_assembly_matches_whole_line_toeplitz() {
    for &s in &[0.1, 0.25, 0.4, 0.45] {
        for &n in &[16usize, 63] {
            let grid = build_grid(-1.0, 1.0, n).unwrap();
            let sys = assemble_stiffness(&grid, &ProblemParams::new(s, 0.5, 0.0).unwrap()).unwrap();
            let oracle = toeplitz_matrix(s, grid.spacing(), n);
            let defect = (sys.matrix() - &oracle).amax() / oracle.amax();
            assert!(defect <= 1e-10, "s = {s}, n = {n}: relative defect {defect:e}");
        }
    }
}

#[test]
fn assembly_is_translation_and_scale_covariant() {
    let s = 0.3;
    let params = ProblemParams::new(s, 0.5, 0.0).unwrap();
    let base = assemble_stiffness(&build_graded_grid(-1.0, 1.0, 40, 2.0).unwrap(), &params).unwrap();
    // x -> 3 x + 5 scales the form by 3^(1-2s)
    let moved = assemble_stiffness(&build_graded_grid(2.0, 8.0, 40, 2.0).unwrap(), &params).unwrap();
    let defect = (moved.matrix() - base.matrix() * 3f64.powf(1.0 - 2.0 * s)).amax() / moved.matrix().amax();
    assert!(defect <= 1e-10, "relative defect {defect:e}");
}

#[test]
fn principal_pair_matches_dense_symmetric_eigensolver() {
    let grid = build_grid(-1.0, 1.0, 96).unwrap();
    let sys = assemble_stiffness(&grid, &ProblemParams::new(0.35, 2.0, 0.0).unwrap()).unwrap();
    let scale = sys.mass().map(|m| m.sqrt().recip());
    let sym = DMatrix::from_fn(96, 96, |i, j| scale[i] * sys.matrix()[(i, j)] * scale[j]);
    let eig = SymmetricEigen::new(sym);
    let (k, &lam) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let ours = principal_eigenpair(&sys).unwrap();
    assert_relative_eq!(ours.lam1, lam, max_relative = 1e-9);
    let mut v = eig.eigenvectors.column(k).component_mul(&scale);
    v /= v.iter().copied().fold(f64::NEG_INFINITY, |m, x| m.max(x.abs())) * v[48].signum();
    assert!((&v - &ours.phi1.0).amax() <= 1e-7);
    assert!(ours.phi1.min() > 0.0);
}

#[test]
fn energy_matches_toeplitz_oracle_at_pure_singular_solution() {
    let n = 256;
    let grid = build_grid(-1.0, 1.0, n).unwrap();
    let params = ProblemParams::new(0.4, 2.0, 0.1).unwrap();
    let sys = assemble_stiffness(&grid, &params).unwrap();
    let (w, rep) = solve_pure_singular(&sys, &params.with_lambda(0.0).unwrap()).unwrap();
    assert!(rep.converged);
    let h = grid.spacing();
    let t = toeplitz_matrix(0.4, h, n);
    let p = 10.0;
    let quad = 0.5 * w.0.dot(&(&t * &w.0));
    // uniform lumped weights are h; singular term -Σ h w^(-1) / (-1)
    let singular: f64 = w.iter().map(|v| h / v).sum();
    let critical: f64 = w.iter().map(|v| h * v.powf(p)).sum();
    let oracle = quad + singular - 0.1 / p * critical;
    // entrywise agreement ~1e-11 accumulates over N² terms of the form
    assert_relative_eq!(energy(&sys, &params, &w).unwrap(), oracle, max_relative = 1e-8);
}

#[test]
fn torsion_function_on_uniform_mesh_converges() {
    use statrs::function::gamma::gamma;
    let s = 0.4;
    let kappa = 2f64.powf(2.0 * s) * gamma(0.5 + s) * gamma(1.0 + s) / gamma(0.5);
    let params = ProblemParams::new(s, 0.5, 0.0).unwrap();
    let mut errors = Vec::new();
    for &n in &[63usize, 127, 255] {
        let grid = build_grid(-1.0, 1.0, n).unwrap();
        let sys = assemble_stiffness(&grid, &params).unwrap();
        let u = sys.solve_dirichlet(&Field::constant(n, 1.0)).unwrap();
        let err: f64 = grid
            .nodes()
            .iter()
            .zip(u.iter())
            .map(|(x, v)| (kappa * v - (1.0 - x * x).powf(s)).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    assert!(errors.windows(2).all(|p| p[1] < p[0]), "{errors:?}");
    assert!(errors[2] < 0.02, "{errors:?}");
}

#[test]
fn certificate_matches_stationary_point_formula() {
    for &(q, s, lam1) in &[(2.0, 0.4, 1.05839), (0.5, 0.25, 3.0), (3.0, 0.3, 0.2)] {
        let p: f64 = 2.0 / (1.0 - 2.0 * s);
        let t = ((p + q - 1.0) / (2.0 * lam1 * (p - 2.0))).powf(1.0 / (1.0 + q));
        let exact = (2.0 * lam1 * t - t.powf(-q)) / t.powf(p - 1.0);
        let params = ProblemParams::new(s, q, 0.0).unwrap();
        assert_relative_eq!(lambda_certificate(&params, lam1).unwrap(), exact, max_relative = 1e-9);
    }
}
