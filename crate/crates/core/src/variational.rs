//! Energy functional, its directional derivative, the Sobolev quotient,
//! concentrating bubbles and the second-solution search in the cone above
//! the minimal solution.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::operator::{principal_eigenpair, StiffnessSystem};
use crate::params::ProblemParams;
use crate::quadrature::bracket_and_refine;
use crate::singular::{critical_defect, newton_critical, weak_residual, Branch, SolveReport, ORDER_SLACK};

/// `½ uᵀAu - Σ massw u^(1-q)/(1-q) - (λ/p) Σ massw u^p`, with `p` the critical
/// exponent and `-Σ massw log u` in place of the middle term when `q = 1`.
/// Returns `+∞` when `q ≥ 1` and some nodal value is zero.
pub fn energy(sys: &StiffnessSystem, params: &ProblemParams, u: &Field) -> Result<f64> {
    if u.len() != sys.len() {
        return Err(Error::param("field size does not match the system"));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("energy argument".into()));
    }
    if let Some((i, v)) = u.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::param(format!("energy needs u >= 0, u[{i}] = {v}")));
    }
    let q = params.q;
    if q >= 1.0 && u.iter().any(|v| *v == 0.0) {
        return Ok(f64::INFINITY);
    }
    let p = params.crit();
    let m = sys.mass();
    let mut singular = 0.0;
    let mut critical = 0.0;
    for i in 0..u.len() {
        singular += m[i] * if q == 1.0 { u[i].ln() } else { u[i].powf(1.0 - q) / (1.0 - q) };
        critical += m[i] * u[i].powf(p);
    }
    Ok(0.5 * sys.quadratic_form(&u.0) - singular - params.lambda / p * critical)
}

/// Derivative of the energy at `u > 0` in the direction `phi`.
pub fn gateaux_derivative(sys: &StiffnessSystem, params: &ProblemParams, u: &Field, phi: &Field) -> Result<f64> {
    if phi.len() != sys.len() || !phi.is_finite() {
        return Err(Error::param("direction must be finite and match the system"));
    }
    let r = critical_defect(sys, params, u).ok_or_else(|| Error::param("derivative needs u > 0 at every node"))?;
    Ok(r.dot(&phi.0))
}

/// Result of minimizing the discrete Sobolev quotient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevEstimate {
    pub value: f64,
    pub minimizer: Field,
    /// Final `‖∇R‖` in the dual operator norm, relative to `R`.
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// `(uᵀAu / C^n_s) / (Σ massw |u|^p)^(2/p)`.
pub fn sobolev_quotient(sys: &StiffnessSystem, params: &ProblemParams, u: &DVector<f64>) -> f64 {
    let p = params.crit();
    let lp: f64 = u.iter().zip(sys.mass().iter()).map(|(v, m)| m * v.abs().powf(p)).sum();
    sys.quadratic_form(u) / sys.cns() / lp.powf(2.0 / p)
}

fn sobolev_gradient(sys: &StiffnessSystem, params: &ProblemParams, u: &DVector<f64>) -> (f64, DVector<f64>) {
    let p = params.crit();
    let m = sys.mass();
    let au = sys.matrix() * u;
    let num = u.dot(&au) / sys.cns();
    let lp: f64 = u.iter().zip(m.iter()).map(|(v, w)| w * v.abs().powf(p)).sum();
    let den = lp.powf(2.0 / p);
    let r = num / den;
    let mut grad = au * (2.0 / sys.cns());
    for i in 0..u.len() {
        grad[i] -= r * 2.0 * den / lp * m[i] * u[i].abs().powf(p - 2.0) * u[i];
    }
    (r, grad / den)
}

/// Minimizes the Sobolev quotient by operator-preconditioned gradient descent
/// started from the principal eigenfunction. The minimum is an upper bound
/// for the continuum constant.
pub fn sobolev_constant(sys: &StiffnessSystem, params: &ProblemParams) -> Result<SobolevEstimate> {
    const CAP: usize = 4000;
    const GRAD_TOL: f64 = 1e-8;
    let p = params.crit();
    let mut u = principal_eigenpair(sys)?.phi1.0;
    let normalize = |u: &mut DVector<f64>| {
        let lp: f64 = u.iter().zip(sys.mass().iter()).map(|(v, m)| m * v.abs().powf(p)).sum();
        *u /= lp.powf(1.0 / p);
    };
    normalize(&mut u);
    let (mut r, mut grad) = sobolev_gradient(sys, params, &u);
    let mut tau = 1.0;
    let mut gnorm = f64::INFINITY;
    let mut it = 0;
    while it < CAP {
        let dir = sys.apply_inverse(&grad);
        gnorm = grad.dot(&dir).max(0.0).sqrt() / r;
        if gnorm <= GRAD_TOL {
            break;
        }
        let slope = grad.dot(&dir);
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = &u - &dir * tau;
            normalize(&mut trial);
            let rt = sobolev_quotient(sys, params, &trial);
            if rt <= r - 1e-4 * tau * slope {
                u = trial;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        it += 1;
        if !accepted {
            break;
        }
        let (nr, ng) = sobolev_gradient(sys, params, &u);
        r = nr;
        grad = ng;
        tau = (tau * 2.0).min(1e6);
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Convergence {
            method: "Sobolev descent",
            iterations: it,
            detail: format!("quotient {r}, gradient norm {gnorm:e}"),
        });
    }
    if u.sum() < 0.0 {
        u = -u;
    }
    Ok(SobolevEstimate { value: r, minimizer: Field(u), gradient_norm: gnorm, iterations: it })
}

/// Cut-off, rescaled extremal profile centred at the domain midpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bubble {
    pub eps: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sobolev: f64,
    pub center: f64,
    pub values: Field,
}

/// `1` on `[0, 1]`, `0` beyond `2`, quintic smoothstep in between.
pub fn cutoff(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let t = r - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Concentrating profile `ε^(-(1-2s)/2) u*(x/ε)` before the cutoff, with
/// `u*(x) = ũ(x S^(-1/(2s))) / |ũ|_p` and `ũ = α (β² + x²)^(-(1-2s)/2)`.
pub fn concentrated_profile(x: f64, eps: f64, s: f64, sobolev: f64) -> f64 {
    let (alpha, beta): (f64, f64) = (1.0, 1.0);
    let p = 2.0 / (1.0 - 2.0 * s);
    // (1-2s) p / 2 = 1, so |ũ|_p^p = α^p ∫ (β² + x²)^(-1) dx = α^p π / β
    let lp_norm = alpha * (std::f64::consts::PI / beta).powf(1.0 / p);
    let y = x / eps / sobolev.powf(1.0 / (2.0 * s));
    let tilde = alpha * (beta * beta + y * y).powf(-(1.0 - 2.0 * s) / 2.0);
    eps.powf(-(1.0 - 2.0 * s) / 2.0) * tilde / lp_norm
}

pub fn make_bubble(grid: &Grid, params: &ProblemParams, eps: f64, nu: f64, sobolev: f64) -> Result<Bubble> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param(format!("bubble scale must be positive, got {eps}")));
    }
    if !(nu > 0.0 && 4.0 * nu <= 0.5 * grid.width()) {
        return Err(Error::param(format!(
            "cutoff radius {nu} needs 0 < 4 nu <= (b - a)/2 = {}",
            0.5 * grid.width()
        )));
    }
    if !(sobolev > 0.0 && sobolev.is_finite()) {
        return Err(Error::param("Sobolev estimate must be positive"));
    }
    let c = grid.midpoint();
    let values = Field::from_slice(
        &grid
            .nodes()
            .iter()
            .map(|&x| cutoff((x - c).abs() / nu) * concentrated_profile(x - c, eps, params.s, sobolev))
            .collect::<Vec<_>>(),
    );
    Ok(Bubble { eps, nu, alpha: 1.0, beta: 1.0, sobolev, center: c, values })
}

/// `(s/n) λ^(-(n-2s)/(2s)) S^(n/(2s))` and the same bound without the `λ` factor.
pub fn gap_thresholds(params: &ProblemParams, sobolev: f64) -> (f64, f64) {
    let n = params.n as f64;
    let s = params.s;
    let base = s / n * sobolev.powf(n / (2.0 * s));
    (base * params.lambda.powf(-(n - 2.0 * s) / (2.0 * s)), base)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapEntry {
    pub eps: f64,
    pub sup_energy: f64,
    pub argmax_t: f64,
    /// `sup_t I(w + tΦ) - I(w)`.
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyGapReport {
    pub base_energy: f64,
    pub entries: Vec<GapEntry>,
    pub threshold: f64,
    pub threshold_without_lambda: f64,
    pub sobolev: f64,
    pub decreasing: bool,
    pub below_threshold: bool,
}

impl EnergyGapReport {
    pub fn passes(&self) -> bool {
        self.decreasing && self.below_threshold
    }
}

/// `sup_{t≥0} I(w + tΦ)` over a geometric grid refined by golden section.
pub fn sup_along_ray(sys: &StiffnessSystem, params: &ProblemParams, w: &Field, dir: &Field) -> Result<(f64, f64)> {
    let e0 = energy(sys, params, w)?;
    let scale = w.sup_norm().max(1e-300) / dir.sup_norm().max(1e-300);
    let f = |t: f64| {
        let u = Field(&w.0 + &dir.0 * t);
        energy(sys, params, &u).unwrap_or(f64::NEG_INFINITY)
    };
    let (t, v) = bracket_and_refine(1e-6 * scale, 1e4 * scale, 400, f);
    Ok(if v >= e0 { (t, v) } else { (0.0, e0) })
}

pub fn energy_gap_check(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    w: &Field,
    eps_ladder: &[f64],
    nu: f64,
    sobolev: f64,
) -> Result<EnergyGapReport> {
    if eps_ladder.is_empty() {
        return Err(Error::param("empty bubble scale ladder"));
    }
    let base = energy(sys, params, w)?;
    let mut entries = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let bubble = make_bubble(sys.grid(), params, eps, nu, sobolev)?;
        let (t, sup) = sup_along_ray(sys, params, w, &bubble.values)?;
        entries.push(GapEntry { eps, sup_energy: sup, argmax_t: t, gap: sup - base });
    }
    let (threshold, threshold_without_lambda) = gap_thresholds(params, sobolev);
    // ladder sorted by decreasing ε
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&i, &j| entries[j].eps.total_cmp(&entries[i].eps));
    let decreasing = order.windows(2).all(|p| entries[p[1]].sup_energy < entries[p[0]].sup_energy);
    let smallest = &entries[*order.last().unwrap()];
    let below_threshold = smallest.sup_energy < base + threshold;
    Ok(EnergyGapReport { base_energy: base, entries, threshold, threshold_without_lambda, sobolev, decreasing, below_threshold })
}

/// Cone `{u ≥ floor}`.
#[derive(Clone, Debug)]
pub struct ConeConstraint {
    pub floor: Field,
}

impl ConeConstraint {
    pub const SLACK: f64 = 1e-10;

    pub fn admits(&self, u: &Field) -> bool {
        self.floor.below(u, Self::SLACK).is_ok()
    }

    pub fn project(&self, u: &Field) -> Field {
        u.max_with(&self.floor)
    }
}

/// Sampled path from `w` to a point of lower energy.
#[derive(Clone, Debug)]
pub struct PathState {
    pub samples: Vec<Field>,
    pub energies: Vec<f64>,
}

impl PathState {
    pub fn level(&self) -> f64 {
        self.energies.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        self.energies
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc })
            .0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MountainPassOptions {
    pub shell_radii: Vec<f64>,
    pub shell_iterations: usize,
    pub bubble_eps: f64,
    pub bubble_nu: f64,
    pub samples: usize,
    pub sweeps: usize,
    pub reparam_every: usize,
    pub newton_cap: usize,
    pub residual_tol: f64,
    pub trace: Option<PathBuf>,
}

impl Default for MountainPassOptions {
    fn default() -> Self {
        MountainPassOptions {
            shell_radii: vec![0.05, 0.1, 0.2],
            shell_iterations: 200,
            bubble_eps: 0.02,
            bubble_nu: 0.2,
            samples: 33,
            sweeps: 400,
            reparam_every: 20,
            newton_cap: 60,
            residual_tol: 1e-6,
            trace: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    ZeroAltitude,
    MountainPass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellProbe {
    pub radius: f64,
    pub min_energy: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MountainPassOutcome {
    pub solution: Field,
    pub report: SolveReport,
    pub alternative: Alternative,
    pub shell_probes: Vec<ShellProbe>,
    /// Path maxima after each accepted deformation sweep.
    pub level_history: Vec<f64>,
    pub scale_r0: f64,
    pub base_energy: f64,
    pub level_bound: f64,
    pub level_bound_without_lambda: f64,
}

/// Minimum of the energy on `{u ≥ w, ‖u - w‖_A = σ}` by projected descent.
fn shell_minimum(sys: &StiffnessSystem, params: &ProblemParams, w: &Field, sigma: f64, iterations: usize) -> Result<(Field, f64)> {
    let cone = ConeConstraint { floor: w.clone() };
    let onto_shell = |v: DVector<f64>| -> Option<Field> {
        let d = v.map(|x| x.max(0.0));
        let norm = sys.a_norm(&d);
        (norm > 0.0).then(|| Field(&w.0 + d * (sigma / norm)))
    };
    let phi = principal_eigenpair(sys)?.phi1;
    let mut u = onto_shell(phi.0.clone()).expect("eigenfunction is positive");
    let mut e = energy(sys, params, &u)?;
    let mut tau = sigma;
    for _ in 0..iterations {
        let Some(r) = critical_defect(sys, params, &u) else { break };
        let g = sys.apply_inverse(&r);
        let gn = sys.a_norm(&g);
        if gn == 0.0 {
            break;
        }
        let mut improved = false;
        while tau > 1e-12 * sigma {
            let trial = &u.0 - &g * (tau / gn);
            if let Some(t) = onto_shell(&trial - &w.0) {
                let t = cone.project(&t);
                let et = energy(sys, params, &t)?;
                if et < e {
                    u = t;
                    e = et;
                    improved = true;
                    tau *= 1.5;
                    break;
                }
            }
            tau *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((u, e))
}

fn energies(sys: &StiffnessSystem, params: &ProblemParams, samples: &[Field]) -> Result<Vec<f64>> {
    samples.par_iter().map(|u| energy(sys, params, u)).collect()
}

/// Linear re-interpolation at equal operator-norm arc length.
fn reparametrize(sys: &StiffnessSystem, samples: &[Field]) -> Vec<Field> {
    let k = samples.len();
    let mut arc = vec![0.0; k];
    for j in 1..k {
        arc[j] = arc[j - 1] + sys.a_norm(&(&samples[j].0 - &samples[j - 1].0));
    }
    let total = arc[k - 1];
    if !(total > 0.0) {
        return samples.to_vec();
    }
    let mut out = Vec::with_capacity(k);
    let mut seg = 0;
    for j in 0..k {
        let target = total * j as f64 / (k - 1) as f64;
        while seg + 1 < k - 1 && arc[seg + 1] < target {
            seg += 1;
        }
        let len = arc[seg + 1] - arc[seg];
        let t = if len > 0.0 { ((target - arc[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(Field(&samples[seg].0 * (1.0 - t) + &samples[seg + 1].0 * t));
    }
    out
}

#[derive(Serialize)]
struct TraceLine<'a> {
    sweep: usize,
    level: f64,
    step: f64,
    energies: &'a [f64],
}

/// Searches for a second solution above `w` (a converged minimal solution):
/// first on small shells around `w`, then by deforming the path
/// `t ↦ w + t R0 Φ_ε` downhill inside the cone and polishing the highest
/// sample with Newton's method.
pub fn mountain_pass_search(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    w: &Field,
    sobolev: f64,
    opts: &MountainPassOptions,
) -> Result<MountainPassOutcome> {
    let base = energy(sys, params, w)?;
    if !base.is_finite() {
        return Err(Error::param("first solution must have finite energy"));
    }
    let (level_bound, level_bound_without_lambda) = gap_thresholds(params, sobolev);
    let cone = ConeConstraint { floor: w.clone() };
    let wnorm = sys.a_norm(&w.0);

    let mut shell_probes = Vec::new();
    for &frac in &opts.shell_radii {
        let sigma = frac * wnorm;
        let (u, e) = shell_minimum(sys, params, w, sigma, opts.shell_iterations)?;
        let residual = weak_residual(sys, params, &u);
        shell_probes.push(ShellProbe { radius: sigma, min_energy: e, residual });
        if e <= base + 1e-8 && residual <= opts.residual_tol {
            let report = SolveReport { residual, iterations: opts.shell_iterations, energy: e, branch: Branch::MountainPass, converged: true };
            return Ok(MountainPassOutcome {
                solution: u,
                report,
                alternative: Alternative::ZeroAltitude,
                shell_probes,
                level_history: Vec::new(),
                scale_r0: 0.0,
                base_energy: base,
                level_bound,
                level_bound_without_lambda,
            });
        }
    }

    let bubble = make_bubble(sys.grid(), params, opts.bubble_eps, opts.bubble_nu, sobolev)?;
    let phi = &bubble.values;
    let mut r0 = w.sup_norm() / phi.sup_norm();
    let mut found = false;
    for _ in 0..80 {
        if energy(sys, params, &Field(&w.0 + &phi.0 * r0))? < base {
            found = true;
            break;
        }
        r0 *= 1.5;
    }
    if !found {
        return Err(Error::Convergence {
            method: "mountain-pass endpoint search",
            iterations: 80,
            detail: "energy never dropped below the first solution along the bubble ray".into(),
        });
    }

    let k = opts.samples.max(3);
    let mut samples: Vec<Field> = (0..k)
        .map(|j| Field(&w.0 + &phi.0 * (r0 * j as f64 / (k - 1) as f64)))
        .collect();
    let mut energies_now = energies(sys, params, &samples)?;
    let seg0 = sys.a_norm(&(&phi.0 * (r0 / (k - 1) as f64)));
    let mut level = energies_now.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut level_history = vec![level];
    let mut tau = 1.0;
    let mut trace = match &opts.trace {
        Some(path) => Some(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => None,
    };

    for sweep in 1..=opts.sweeps {
        if tau < 1e-10 {
            break;
        }
        let tangents: Vec<Option<DVector<f64>>> = (0..k)
            .map(|j| {
                if j == 0 || j == k - 1 || energies_now[j] < base {
                    return None;
                }
                let t = &samples[j + 1].0 - &samples[j - 1].0;
                let n = sys.a_norm(&t);
                Some(if n > 0.0 { t / n } else { t })
            })
            .collect();
        let moved: Vec<Field> = (0..k)
            .into_par_iter()
            .map(|j| {
                let Some(tan) = &tangents[j] else { return samples[j].clone() };
                let Some(r) = critical_defect(sys, params, &samples[j]) else { return samples[j].clone() };
                let g = sys.apply_inverse(&r);
                let along = g.dot(&(sys.matrix() * tan));
                let perp = g - tan * along;
                let mut step = perp * tau;
                let len = sys.a_norm(&step);
                if len > 0.2 * seg0 {
                    step *= 0.2 * seg0 / len;
                }
                cone.project(&Field(&samples[j].0 - step))
            })
            .collect();
        let moved_energies = energies(sys, params, &moved)?;
        let new_level = moved_energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if new_level <= level {
            samples = moved;
            energies_now = moved_energies;
            level = new_level;
            level_history.push(level);
            tau = (tau * 1.2).min(1.0);
            if sweep % opts.reparam_every.max(1) == 0 {
                let candidate: Vec<Field> = reparametrize(sys, &samples).iter().map(|u| cone.project(u)).collect();
                let ce = energies(sys, params, &candidate)?;
                let cl = ce.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if cl <= level {
                    samples = candidate;
                    energies_now = ce;
                    level = cl;
                    level_history.push(level);
                }
            }
        } else {
            tau *= 0.5;
        }
        if let Some(out) = trace.as_mut() {
            let line = TraceLine { sweep, level, step: tau, energies: &energies_now };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    if let Some(mut out) = trace {
        out.flush()?;
    }

    let path = PathState { samples, energies: energies_now };
    let start = &path.samples[path.argmax()];
    let polished = newton_critical(sys, params, start, opts.newton_cap)?;
    let solution = Field(polished.u);
    let residual = weak_residual(sys, params, &solution);
    let e = energy(sys, params, &solution)?;
    let separated = (&solution.0 - &w.0).amax() > 1e-3 * w.sup_norm();
    let converged = residual <= opts.residual_tol
        && separated
        && e > base
        && w.below(&solution, ORDER_SLACK).is_ok();
    Ok(MountainPassOutcome {
        solution,
        report: SolveReport { residual, iterations: level_history.len(), energy: e, branch: Branch::MountainPass, converged },
        alternative: Alternative::MountainPass,
        shell_probes,
        level_history,
        scale_r0: r0,
        base_energy: base,
        level_bound,
        level_bound_without_lambda,
    })
}
