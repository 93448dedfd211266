//! Discrete integral fractional Laplacian on a one-dimensional mesh.
//!
//! The stiffness matrix realizes `C^n_s` times the Gagliardo form
//!
//! ```text
//!   ∫∫_{R×R} (u(x)-u(y)) (v(x)-v(y)) |x-y|^(-1-2s) dx dy
//! ```
//!
//! for continuous piecewise-linear nodal functions vanishing outside `(a, b)`.
//! The double integral splits into the `Ω×Ω` part, assembled over element
//! pairs, and the interaction with the exterior, which reduces to
//! `2 ∫_Ω u v κ` with `κ(x) = ((x-a)^(-2s) + (b-x)^(-2s)) / (2s)`.
//!
//! Element pairs are handled by distance:
//! * identical elements: the integrand is `slope_i slope_j |x-y|^(1-2s)`,
//!   integrated in closed form;
//! * elements sharing a vertex: Duffy splitting of the rectangle moves the
//!   corner singularity into an explicit power of the radial variable, the
//!   remaining angular integral is smooth;
//! * separated elements: tensor Gauss-Legendre with the order chosen from the
//!   gap-to-size ratio.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{build_graded_grid, Grid};
use crate::params::ProblemParams;
use crate::quadrature::{gauss_legendre, order_for_gap};

/// Assembled stiffness matrix, lumped mass weights and the Cholesky factor.
#[derive(Clone, Debug)]
pub struct StiffnessSystem {
    matrix: DMatrix<f64>,
    mass: DVector<f64>,
    grid: Grid,
    s: f64,
    cns: f64,
    chol: Cholesky<f64, Dyn>,
}

impl StiffnessSystem {
    fn from_parts(matrix: DMatrix<f64>, grid: Grid, s: f64, cns: f64) -> Result<Self> {
        let mass = DVector::from_vec(grid.lumped_weights());
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::SingularSystem("stiffness matrix is not positive definite".into()))?;
        Ok(StiffnessSystem { matrix, mass, grid, s, cns, chol })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lumped quadrature weights for `∫_Ω (·) dx`.
    pub fn mass(&self) -> &DVector<f64> {
        &self.mass
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> f64 {
        self.s
    }

    pub fn cns(&self) -> f64 {
        self.cns
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// `uᵀ A u`.
    pub fn quadratic_form(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.matrix * u))
    }

    /// Operator norm `(uᵀ A u)^(1/2)`.
    pub fn a_norm(&self, u: &DVector<f64>) -> f64 {
        self.quadratic_form(u).max(0.0).sqrt()
    }

    /// `A⁻¹ r` through the cached factor.
    pub fn apply_inverse(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    /// Solves `A u = massw ∘ f`.
    pub fn solve_dirichlet(&self, f: &Field) -> Result<Field> {
        if f.len() != self.len() {
            return Err(Error::param(format!(
                "load has {} entries, system has {}",
                f.len(),
                self.len()
            )));
        }
        if !f.is_finite() {
            return Err(Error::NonFinite("Dirichlet load".into()));
        }
        let rhs = self.mass.component_mul(f);
        let mut u = self.chol.solve(&rhs);
        // one step of iterative refinement keeps the relative residual far below 1e-10
        let r = &rhs - &self.matrix * &u;
        u += self.chol.solve(&r);
        let scale = rhs.amax();
        if scale > 0.0 {
            let rel = (&rhs - &self.matrix * &u).amax() / scale;
            if !(rel <= 1e-10) {
                return Err(Error::SingularSystem(format!(
                    "Dirichlet solve relative residual {rel:e}"
                )));
            }
        }
        Ok(Field(u))
    }
}

/// Builds the stiffness system for `grid` and `params.s`.
pub fn assemble_stiffness(grid: &Grid, params: &ProblemParams) -> Result<StiffnessSystem> {
    let s = params.s;
    if !(s > 0.0 && s < 0.5) {
        return Err(Error::param(format!("assembly supports s in (0, 1/2), got {s}")));
    }
    let gagliardo = gagliardo_matrix(grid, s);
    let cns = params.cns();
    let mut matrix = gagliardo * cns;
    let n = grid.len();
    for j in 0..n {
        for i in 0..n {
            let v = matrix[(i, j)];
            if !v.is_finite() {
                return Err(Error::Quadrature { row: i, col: j, value: v });
            }
        }
    }
    // exact symmetry: blocks are symmetric, this only removes summation-order noise
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = avg;
            matrix[(j, i)] = avg;
        }
    }
    StiffnessSystem::from_parts(matrix, grid.clone(), s, cns)
}

/// Local contribution over a set of up to four mesh vertices.
#[derive(Clone, Copy)]
struct Block {
    verts: [usize; 4],
    len: usize,
    vals: [[f64; 4]; 4],
}

impl Block {
    fn new(verts: &[usize]) -> Self {
        let mut v = [0; 4];
        v[..verts.len()].copy_from_slice(verts);
        Block { verts: v, len: verts.len(), vals: [[0.0; 4]; 4] }
    }
}

/// Unscaled `∫∫_{R×R}` form (without the constant `C^n_s`).
fn gagliardo_matrix(grid: &Grid, s: f64) -> DMatrix<f64> {
    let ne = grid.num_elements();
    let blocks: Vec<Vec<Block>> = (0..ne)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::with_capacity(ne - k + 1);
            out.push(same_element_block(grid, k, s));
            if k + 1 < ne {
                out.push(adjacent_block(grid, k, s));
            }
            for l in (k + 2)..ne {
                out.push(separated_block(grid, k, l, s));
            }
            out.push(exterior_block(grid, k, s));
            out
        })
        .collect();

    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    for block in blocks.iter().flatten() {
        for p in 0..block.len {
            let vi = block.verts[p];
            if vi == 0 || vi > n {
                continue;
            }
            for r in 0..block.len {
                let vj = block.verts[r];
                if vj == 0 || vj > n {
                    continue;
                }
                m[(vi - 1, vj - 1)] += block.vals[p][r];
            }
        }
    }
    m
}

/// `T_k × T_k`: `(φ_i(x) - φ_i(y)) = slope_i (x - y)`.
fn same_element_block(grid: &Grid, k: usize, s: f64) -> Block {
    let h = grid.element_size(k);
    let slopes = [-1.0 / h, 1.0 / h];
    let integral = 2.0 * h.powf(3.0 - 2.0 * s) / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
    let mut b = Block::new(&[k, k + 1]);
    for p in 0..2 {
        for r in 0..2 {
            b.vals[p][r] = slopes[p] * slopes[r] * integral;
        }
    }
    b
}

/// `∫_0^rho t^c (1+t)^(-1-2s) dt` by Gauss-Legendre, splitting at `t = 1`.
fn duffy_angular(c: i32, rho: f64, s: f64) -> f64 {
    let sigma = 1.0 + 2.0 * s;
    let f = |t: f64| t.powi(c) * (1.0 + t).powf(-sigma);
    let head = rho.min(1.0);
    let mut total = gauss_legendre(order_for_gap(1.0, head)).integrate(0.0, head, f);
    if rho > 1.0 {
        total += gauss_legendre(order_for_gap(2.0, rho - 1.0)).integrate(1.0, rho, f);
    }
    total
}

/// `T_k × T_{k+1}` and its mirror image, sharing the vertex `p = x_{k+1}`.
///
/// With `x = p - ξ`, `y = p + η` every difference is
/// `-(gL_i ξ + gR_i η)`, so the block is a combination of the moments
/// `∫∫ ξ^a η^b (ξ+η)^(-1-2s)` over `[0,H_k]×[0,H_{k+1}]`, `a + b = 2`.
fn adjacent_block(grid: &Grid, k: usize, s: f64) -> Block {
    let hk = grid.element_size(k);
    let hl = grid.element_size(k + 1);
    let r = hl / hk;
    let e = 3.0 - 2.0 * s;
    let pk = hk.powf(e) / e;
    let pl = hl.powf(e) / e;
    let moment = |a: i32, b: i32| pk * duffy_angular(b, r, s) + pl * duffy_angular(a, 1.0 / r, s);
    let m20 = moment(2, 0);
    let m11 = moment(1, 1);
    let m02 = moment(0, 2);
    let gl = [-1.0 / hk, 1.0 / hk, 0.0];
    let gr = [0.0, -1.0 / hl, 1.0 / hl];
    let mut b = Block::new(&[k, k + 1, k + 2]);
    for p in 0..3 {
        for q in 0..3 {
            let v = gl[p] * gl[q] * m20 + (gl[p] * gr[q] + gr[p] * gl[q]) * m11 + gr[p] * gr[q] * m02;
            b.vals[p][q] = 2.0 * v;
        }
    }
    b
}

/// `T_k × T_l` with `l ≥ k + 2` and its mirror image; the kernel is smooth.
fn separated_block(grid: &Grid, k: usize, l: usize, s: f64) -> Block {
    let x0 = grid.vertices()[k];
    let hk = grid.element_size(k);
    let y0 = grid.vertices()[l];
    let hl = grid.element_size(l);
    let gap = y0 - (x0 + hk);
    let rule = gauss_legendre(order_for_gap(gap, hk.max(hl)));
    let sigma = -1.0 - 2.0 * s;
    // moments: [∫∫ φ_p(x) φ_r(x) K], [∫∫ φ_p(y) φ_r(y) K], [∫∫ φ_p(x) φ_r(y) K]
    let mut xx = [[0.0; 2]; 2];
    let mut yy = [[0.0; 2]; 2];
    let mut xy = [[0.0; 2]; 2];
    for (x, wx) in rule.on(x0, x0 + hk) {
        let fx = [(x0 + hk - x) / hk, (x - x0) / hk];
        for (y, wy) in rule.on(y0, y0 + hl) {
            let fy = [(y0 + hl - y) / hl, (y - y0) / hl];
            let w = wx * wy * (y - x).powf(sigma);
            for p in 0..2 {
                for r in 0..2 {
                    xx[p][r] += w * fx[p] * fx[r];
                    yy[p][r] += w * fy[p] * fy[r];
                    xy[p][r] += w * fx[p] * fy[r];
                }
            }
        }
    }
    let mut b = Block::new(&[k, k + 1, l, l + 1]);
    for p in 0..2 {
        for r in 0..2 {
            b.vals[p][r] = 2.0 * xx[p][r];
            b.vals[p + 2][r + 2] = 2.0 * yy[p][r];
            b.vals[p][r + 2] = -2.0 * xy[p][r];
            b.vals[r + 2][p] = -2.0 * xy[p][r];
        }
    }
    b
}

/// `2 ∫_{T_k} φ_p φ_r κ`, the interaction of `T_k` with the exterior.
fn exterior_block(grid: &Grid, k: usize, s: f64) -> Block {
    let x0 = grid.vertices()[k];
    let h = grid.element_size(k);
    let dl = x0 - grid.a();
    let dr = grid.b() - (x0 + h);
    // left singularity: y = x - a, φ_left = (dl + h - y)/h, φ_right = (y - dl)/h
    let left = power_weighted_products(dl, h, s, [(dl + h) / h, -1.0 / h], [-dl / h, 1.0 / h]);
    // right singularity: y = b - x, φ_left = (y - dr)/h, φ_right = (dr + h - y)/h
    let right = power_weighted_products(dr, h, s, [-dr / h, 1.0 / h], [(dr + h) / h, -1.0 / h]);
    let mut b = Block::new(&[k, k + 1]);
    for p in 0..2 {
        for r in 0..2 {
            b.vals[p][r] = 2.0 * (left[p][r] + right[p][r]) / (2.0 * s);
        }
    }
    b
}

/// `∫_d^{d+h} f_p(y) f_r(y) y^(-2s) dy` for linear `f = c0 + c1 y`.
fn power_weighted_products(d: f64, h: f64, s: f64, f0: [f64; 2], f1: [f64; 2]) -> [[f64; 2]; 2] {
    let fs = [f0, f1];
    let mut out = [[0.0; 2]; 2];
    if d >= 2.0 * h {
        let rule = gauss_legendre(order_for_gap(d, h));
        for (y, w) in rule.on(d, d + h) {
            let wk = w * y.powf(-2.0 * s);
            let v = [fs[0][0] + fs[0][1] * y, fs[1][0] + fs[1][1] * y];
            for p in 0..2 {
                for r in 0..2 {
                    out[p][r] += wk * v[p] * v[r];
                }
            }
        }
        return out;
    }
    let moment = |m: i32| {
        let e = m as f64 + 1.0 - 2.0 * s;
        let lo = if d > 0.0 { d.powf(e) } else { 0.0 };
        ((d + h).powf(e) - lo) / e
    };
    let mom = [moment(0), moment(1), moment(2)];
    for p in 0..2 {
        for r in 0..2 {
            let (a0, a1) = (fs[p][0], fs[p][1]);
            let (b0, b1) = (fs[r][0], fs[r][1]);
            out[p][r] = a0 * b0 * mom[0] + (a0 * b1 + a1 * b0) * mom[1] + a1 * b1 * mom[2];
        }
    }
    out
}

/// Principal eigenvalue and sup-normalized positive eigenfunction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralData {
    pub lam1: f64,
    pub phi1: Field,
    pub iterations: usize,
}

/// Smallest eigenvalue of `A x = λ diag(massw) x` by inverse iteration.
pub fn principal_eigenpair(sys: &StiffnessSystem) -> Result<SpectralData> {
    const CAP: usize = 2000;
    let m = sys.mass();
    let mut x = m.clone();
    x /= x.norm();
    let mut lam = f64::INFINITY;
    for it in 1..=CAP {
        let y = sys.apply_inverse(&m.component_mul(&x));
        let norm = y.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::SingularSystem("inverse iteration produced a degenerate vector".into()));
        }
        x = y / norm;
        let ax = sys.matrix() * &x;
        let mx = m.component_mul(&x);
        let next = x.dot(&ax) / x.dot(&mx);
        let resid = (&ax - &mx * next).norm() / ax.norm();
        let done = (next - lam).abs() <= 1e-15 * next && resid <= 1e-11;
        lam = next;
        if done {
            let sign = if x.sum() < 0.0 { -1.0 } else { 1.0 };
            x *= sign;
            let top = x.max();
            x /= top;
            return Ok(SpectralData { lam1: lam, phi1: Field(x), iterations: it });
        }
    }
    Err(Error::Convergence {
        method: "inverse iteration",
        iterations: CAP,
        detail: format!("last Rayleigh quotient {lam}"),
    })
}

const CACHE_VERSION: u32 = 1;

/// JSON sidecar holding an assembled matrix and optional eigendata,
/// keyed by `(a, b, N, s)` and the grading exponent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StiffnessCache {
    pub version: u32,
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub s: f64,
    pub grading: f64,
    /// Row-major entries of the stiffness matrix.
    pub entries: Vec<f64>,
    pub spectral: Option<SpectralData>,
}

impl StiffnessCache {
    pub fn from_system(sys: &StiffnessSystem, spectral: Option<SpectralData>) -> Self {
        let n = sys.len();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(sys.matrix[(i, j)]);
            }
        }
        let g = sys.grid();
        StiffnessCache {
            version: CACHE_VERSION,
            a: g.a(),
            b: g.b(),
            n,
            s: sys.s,
            grading: g.grading(),
            entries,
            spectral,
        }
    }

    pub fn matches(&self, grid: &Grid, s: f64) -> bool {
        self.version == CACHE_VERSION
            && self.a == grid.a()
            && self.b == grid.b()
            && self.n == grid.len()
            && self.s == s
            && self.grading == grid.grading()
            && self.entries.len() == self.n * self.n
    }

    pub fn file_name(grid: &Grid, s: f64) -> String {
        format!(
            "stiffness_a{}_b{}_N{}_s{}_g{}.json",
            grid.a(),
            grid.b(),
            grid.len(),
            s,
            grid.grading()
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_system(self, params: &ProblemParams) -> Result<StiffnessSystem> {
        if params.s != self.s {
            return Err(Error::param("cache order does not match the requested s"));
        }
        let grid = build_graded_grid(self.a, self.b, self.n, self.grading)?;
        let matrix = DMatrix::from_row_slice(self.n, self.n, &self.entries);
        StiffnessSystem::from_parts(matrix, grid, self.s, params.cns())
    }
}

/// Loads the system from `dir` when a matching sidecar exists, otherwise
/// assembles it and writes the sidecar.
pub fn assemble_cached(dir: &Path, grid: &Grid, params: &ProblemParams) -> Result<StiffnessSystem> {
    let path = dir.join(StiffnessCache::file_name(grid, params.s));
    if let Ok(cache) = StiffnessCache::load(&path) {
        if cache.matches(grid, params.s) {
            return cache.into_system(params);
        }
    }
    let sys = assemble_stiffness(grid, params)?;
    std::fs::create_dir_all(dir)?;
    StiffnessCache::from_system(&sys, None).save(&path)?;
    Ok(sys)
}
