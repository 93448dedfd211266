//! Singular semilinear solves: `A u - massw∘u^(-q) = massw∘g`, the pure
//! singular solution `w`, sub/supersolution monotone iteration for the
//! critical problem and the comparison/envelope checks built on them.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::operator::StiffnessSystem;
use crate::params::ProblemParams;
use crate::variational::energy;

/// Residual tolerance for a converged singular solve.
pub const SOLVE_TOL: f64 = 1e-8;
/// Nodewise slack used by every ordering statement.
pub const ORDER_SLACK: f64 = 1e-8;

/// Which family a solution belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Minimal,
    MountainPass,
    Extremal,
    PureSingular,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Branch::Minimal => "minimal",
            Branch::MountainPass => "mountain-pass",
            Branch::Extremal => "extremal",
            Branch::PureSingular => "pure-singular",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Sup norm of the discrete weak-form defect.
    pub residual: f64,
    pub iterations: usize,
    pub energy: f64,
    pub branch: Branch,
    pub converged: bool,
}

/// Decreasing regularization levels `ε_k` for `(u + ε)^(-q)` and the
/// positivity floor applied to trial iterates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSchedule {
    eps_list: Vec<f64>,
    floor: f64,
}

impl RegularizationSchedule {
    pub fn new(eps_list: Vec<f64>, floor: f64) -> Result<Self> {
        if eps_list.is_empty() {
            return Err(Error::param("empty regularization schedule"));
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::param(format!("positivity floor must be positive, got {floor}")));
        }
        if eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::param("regularization levels must be positive"));
        }
        if eps_list.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::param("regularization levels must decrease strictly"));
        }
        let first = eps_list[0];
        let last = *eps_list.last().unwrap();
        if last > 1e-8 * first {
            return Err(Error::param(format!(
                "last level {last:e} must be at most 1e-8 times the first {first:e}"
            )));
        }
        Ok(RegularizationSchedule { eps_list, floor })
    }

    /// `first * ratio^k`, `k = 0..steps`.
    pub fn geometric(first: f64, ratio: f64, steps: usize, floor: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::param(format!("ratio must lie in (0, 1), got {ratio}")));
        }
        let eps = (0..steps).map(|k| first * ratio.powi(k as i32)).collect();
        RegularizationSchedule::new(eps, floor)
    }

    pub fn eps_list(&self) -> &[f64] {
        &self.eps_list
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

impl Default for RegularizationSchedule {
    fn default() -> Self {
        RegularizationSchedule::geometric(0.1, 0.25, 15, 1e-14).expect("default schedule is valid")
    }
}

pub(crate) struct NewtonOutcome {
    pub u: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

const NEWTON_CAP: usize = 100;
const MAX_HALVINGS: usize = 40;
/// Newton keeps iterating below the reported tolerance until round-off stalls it.
const NEWTON_TARGET: f64 = 1e-13;

fn singular_power(u: f64, q: f64, eps: f64) -> f64 {
    (u + eps).powf(-q)
}

/// Antiderivative `G` with `G' = -(u+ε)^(-q)`, convex in `u`.
fn singular_potential(u: f64, q: f64, eps: f64) -> f64 {
    if q == 1.0 {
        -(u + eps).ln()
    } else {
        (u + eps).powf(1.0 - q) / (q - 1.0)
    }
}

/// `A u - massw∘((u+ε)^(-q) + g)`.
fn regularized_defect(sys: &StiffnessSystem, q: f64, eps: f64, g: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let m = sys.mass();
    let mut r = sys.matrix() * u;
    for i in 0..u.len() {
        r[i] -= m[i] * (singular_power(u[i], q, eps) + g[i]);
    }
    r
}

fn regularized_functional(sys: &StiffnessSystem, q: f64, eps: f64, g: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let m = sys.mass();
    let mut total = 0.5 * sys.quadratic_form(u);
    for i in 0..u.len() {
        total += m[i] * (singular_potential(u[i], q, eps) - g[i] * u[i]);
    }
    total
}

/// Damped Newton for the convex problem `A u - massw∘(u+ε)^(-q) = massw∘g`.
///
/// Steps are accepted on Armijo decrease of the convex functional, or on a
/// smaller residual once the functional no longer resolves the change.
pub(crate) fn newton_regularized(
    sys: &StiffnessSystem,
    q: f64,
    eps: f64,
    g: &DVector<f64>,
    u0: DVector<f64>,
    floor: f64,
) -> Result<NewtonOutcome> {
    let m = sys.mass();
    let mut u = u0.map(|v| v.max(floor));
    let mut r = regularized_defect(sys, q, eps, g, &u);
    let mut res = r.amax();
    let mut value = regularized_functional(sys, q, eps, g, &u);
    let mut it = 0;
    while it < NEWTON_CAP && res > NEWTON_TARGET {
        let mut jac = sys.matrix().clone();
        for i in 0..u.len() {
            jac[(i, i)] += q * m[i] * (u[i] + eps).powf(-q - 1.0);
        }
        let chol = Cholesky::new(jac)
            .ok_or_else(|| Error::SingularSystem("Newton Jacobian lost definiteness".into()))?;
        let step = -chol.solve(&r);
        let slope = r.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = (&u + &step * alpha).map(|v| v.max(floor));
            let tval = regularized_functional(sys, q, eps, g, &trial);
            let tr = regularized_defect(sys, q, eps, g, &trial);
            let tres = tr.amax();
            if tval.is_finite() && (tval <= value + 1e-4 * alpha * slope || tres < res) {
                accepted = Some((trial, tr, tres, tval));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, tr, tres, tval)) = accepted else { break };
        it += 1;
        let moved = (&trial - &u).amax();
        u = trial;
        r = tr;
        res = tres;
        value = tval;
        if moved <= 1e-16 * u.amax() {
            break;
        }
    }
    if !res.is_finite() {
        return Err(Error::NonFinite("Newton residual".into()));
    }
    Ok(NewtonOutcome { u, residual: res, iterations: it })
}

fn check_load(sys: &StiffnessSystem, g: &Field) -> Result<()> {
    if g.len() != sys.len() {
        return Err(Error::param(format!("load has {} entries, system has {}", g.len(), sys.len())));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("load".into()));
    }
    if let Some((i, v)) = g.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::param(format!("load must be nonnegative, g[{i}] = {v}")));
    }
    Ok(())
}

/// Solutions of the regularized problems along the schedule, one per level.
pub fn regularization_path(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    g: &Field,
    schedule: &RegularizationSchedule,
) -> Result<Vec<(f64, Field)>> {
    check_load(sys, g)?;
    let q = params.q;
    let eps0 = schedule.eps_list()[0];
    // supersolution of the first level: the singular term replaced by its bound ε^(-q)
    let start = sys.solve_dirichlet(&Field(g.map(|v| v + eps0.powf(-q))))?;
    let mut u = start.0;
    let mut path = Vec::with_capacity(schedule.eps_list().len());
    for &eps in schedule.eps_list() {
        let out = newton_regularized(sys, q, eps, g, u, schedule.floor())?;
        u = out.u;
        path.push((eps, Field(u.clone())));
    }
    Ok(path)
}

/// Unique positive solution of `A u - massw∘u^(-q) = massw∘g`, `g ≥ 0`.
pub fn solve_singular_semilinear(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    g: &Field,
) -> Result<(Field, SolveReport)> {
    solve_singular_semilinear_with(sys, params, g, &RegularizationSchedule::default())
}

pub fn solve_singular_semilinear_with(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    g: &Field,
    schedule: &RegularizationSchedule,
) -> Result<(Field, SolveReport)> {
    let path = regularization_path(sys, params, g, schedule)?;
    let last = path.into_iter().last().map(|(_, u)| u.0).expect("schedule is nonempty");
    let out = newton_regularized(sys, params.q, 0.0, g, last, schedule.floor())?;
    let u = Field(out.u);
    let branch = if g.iter().all(|v| *v == 0.0) { Branch::PureSingular } else { Branch::Minimal };
    let report = SolveReport {
        residual: out.residual,
        iterations: out.iterations,
        energy: energy(sys, params, &u)?,
        branch,
        converged: out.residual <= SOLVE_TOL,
    };
    Ok((u, report))
}

/// The pure singular solution `w` (`g ≡ 0`).
pub fn solve_pure_singular(sys: &StiffnessSystem, params: &ProblemParams) -> Result<(Field, SolveReport)> {
    solve_singular_semilinear(sys, params, &Field::zeros(sys.len()))
}

/// `A u - massw∘(u^(-q) + λ u^(p-1))` with `p` the critical exponent.
/// Returns `None` when `u` is not strictly positive.
pub fn critical_defect(sys: &StiffnessSystem, params: &ProblemParams, u: &Field) -> Option<DVector<f64>> {
    if u.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let m = sys.mass();
    let pm1 = params.crit() - 1.0;
    let mut r = sys.matrix() * &u.0;
    for i in 0..u.len() {
        r[i] -= m[i] * (u[i].powf(-params.q) + params.lambda * u[i].powf(pm1));
    }
    Some(r)
}

/// Sup norm of the weak-form defect of the critical problem; `+∞` off the positive cone.
pub fn weak_residual(sys: &StiffnessSystem, params: &ProblemParams, u: &Field) -> f64 {
    critical_defect(sys, params, u).map_or(f64::INFINITY, |r| r.amax())
}

/// Damped Newton on the critical problem itself. The Jacobian may be indefinite.
/// `stable` reports whether it is positive definite at the returned point.
pub(crate) struct CriticalNewton {
    pub u: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub stable: bool,
}

pub(crate) fn critical_jacobian(sys: &StiffnessSystem, params: &ProblemParams, u: &DVector<f64>) -> DMatrix<f64> {
    let m = sys.mass();
    let p = params.crit();
    let mut jac = sys.matrix().clone();
    for i in 0..u.len() {
        jac[(i, i)] += m[i] * (params.q * u[i].powf(-params.q - 1.0) - params.lambda * (p - 1.0) * u[i].powf(p - 2.0));
    }
    jac
}

pub(crate) fn newton_critical(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    u0: &Field,
    cap: usize,
) -> Result<CriticalNewton> {
    let mut u = u0.clone();
    let mut r = critical_defect(sys, params, &u).ok_or_else(|| Error::param("Newton start must be positive"))?;
    let mut res = r.amax();
    let mut it = 0;
    while it < cap && res > NEWTON_TARGET {
        let jac = critical_jacobian(sys, params, &u.0);
        let Some(step) = jac.lu().solve(&(-&r)) else { break };
        let norm0 = r.norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = Field(&u.0 + &step * alpha);
            if let Some(tr) = critical_defect(sys, params, &trial) {
                if tr.norm() < norm0 {
                    accepted = Some((trial, tr));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, tr)) = accepted else { break };
        it += 1;
        u = trial;
        res = tr.amax();
        r = tr;
    }
    let stable = Cholesky::new(critical_jacobian(sys, params, &u.0)).is_some();
    Ok(CriticalNewton { u: u.0, residual: res, iterations: it, stable })
}

/// `w + M z` with `z` the torsion function, and its supersolution check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Supersolution {
    pub field: Field,
    pub multiplier: f64,
    pub valid: bool,
    /// Smallest nodal entry of the defect `A ū - massw∘(ū^(-q) + λ ū^(p-1))`.
    pub min_defect: f64,
    pub worst_node: usize,
}

/// Nodewise lower bound on the defect for a valid discrete supersolution.
pub const SUPERSOLUTION_SLACK: f64 = -1e-8;

/// Checks whether `candidate` is a discrete supersolution of the critical problem.
pub fn supersolution_defect(sys: &StiffnessSystem, params: &ProblemParams, candidate: &Field) -> (bool, f64, usize) {
    match critical_defect(sys, params, candidate) {
        None => (false, f64::NEG_INFINITY, 0),
        Some(d) => {
            let (node, min) = d
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
            (min >= SUPERSOLUTION_SLACK, min, node)
        }
    }
}

pub fn build_supersolution(sys: &StiffnessSystem, params: &ProblemParams, w: &Field, multiplier: f64) -> Result<Supersolution> {
    if !(multiplier >= 0.0 && multiplier.is_finite()) {
        return Err(Error::param(format!("multiplier must be nonnegative, got {multiplier}")));
    }
    let z = sys.solve_dirichlet(&Field::constant(sys.len(), 1.0))?;
    let field = Field(&w.0 + &z.0 * multiplier);
    let (valid, min_defect, worst_node) = supersolution_defect(sys, params, &field);
    Ok(Supersolution { field, multiplier, valid, min_defect, worst_node })
}

/// Scans `M = 2^0, 2^1, …, 2^max_exp` and returns the first valid supersolution.
pub fn scan_supersolution(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    w: &Field,
    max_exp: i32,
) -> Result<Option<Supersolution>> {
    for k in 0..=max_exp {
        let sup = build_supersolution(sys, params, w, 2f64.powi(k))?;
        if sup.valid {
            return Ok(Some(sup));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotoneOptions {
    pub cap: usize,
    /// Cauchy tolerance on `‖u_k - u_{k-1}‖_∞`.
    pub step_tol: f64,
    /// Residual required of the limit.
    pub residual_tol: f64,
    /// Sup norm treated as blow-up.
    pub blowup: f64,
}

impl Default for MonotoneOptions {
    fn default() -> Self {
        MonotoneOptions { cap: 500, step_tol: 1e-9, residual_tol: 1e-7, blowup: 1e6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneStatus {
    Converged,
    /// Iterates exceeded the blow-up threshold.
    Diverged,
    /// Cap reached while iterates were still moving but bounded.
    Indeterminate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotoneOutcome {
    pub solution: Field,
    pub report: SolveReport,
    pub status: MonotoneStatus,
    /// `min_k min_i (u_k - u_{k-1})_i`.
    pub min_increment: f64,
    /// `max_k max_i (u_k - ubar)_i`, or `-∞` without a supersolution.
    pub max_excess_over_supersolution: f64,
    /// `min_k min_i (u_k - w)_i`.
    pub min_margin_over_start: f64,
}

/// Iterates `A u_k - massw∘u_k^(-q) = λ massw∘u_{k-1}^(p-1)` from `start`
/// (normally `w`), checking monotonicity and the bound by `ubar` when given.
pub fn monotone_iteration(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    start: &Field,
    ubar: Option<&Field>,
    opts: &MonotoneOptions,
) -> Result<MonotoneOutcome> {
    if start.len() != sys.len() || start.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::param("monotone iteration needs a positive start of matching size"));
    }
    if let Some(ub) = ubar {
        if let Err((i, ex)) = start.below(ub, ORDER_SLACK) {
            return Err(Error::param(format!("start exceeds supersolution at node {i} by {ex:e}")));
        }
    }
    let pm1 = params.crit() - 1.0;
    let floor = RegularizationSchedule::default().floor();
    let mut u = start.0.clone();
    let mut min_inc = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    let mut min_margin = 0.0f64;
    let mut status = MonotoneStatus::Indeterminate;
    let mut k = 0;
    while k < opts.cap {
        k += 1;
        let g = u.map(|v| params.lambda * v.powf(pm1));
        let next = newton_regularized(sys, params.q, 0.0, &g, u.clone(), floor)?.u;
        let diff = &next - &u;
        min_inc = min_inc.min(diff.min());
        min_margin = min_margin.min((&next - &start.0).min());
        if let Some(ub) = ubar {
            max_excess = max_excess.max((&next - &ub.0).max());
        }
        let step = diff.amax();
        u = next;
        if !u.iter().all(|v| v.is_finite()) || u.amax() > opts.blowup {
            status = MonotoneStatus::Diverged;
            break;
        }
        if step <= opts.step_tol {
            status = MonotoneStatus::Converged;
            break;
        }
    }
    let solution = Field(u);
    let residual = weak_residual(sys, params, &solution);
    let energy = if status == MonotoneStatus::Diverged { f64::NAN } else { energy(sys, params, &solution)? };
    let converged = status == MonotoneStatus::Converged && residual <= opts.residual_tol;
    Ok(MonotoneOutcome {
        solution,
        report: SolveReport { residual, iterations: k, energy, branch: Branch::Minimal, converged },
        status,
        min_increment: min_inc,
        max_excess_over_supersolution: max_excess,
        min_margin_over_start: min_margin,
    })
}

/// Outcome of comparing two solutions of `L(u) = g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub holds: bool,
    /// Set when either input fails the residual tolerance.
    pub indeterminate: bool,
    /// Worst node of `u1 - u2` and its excess.
    pub worst: (usize, f64),
}

/// Sup norm of `A u - massw∘(u^(-q) + g)`.
pub fn semilinear_residual(sys: &StiffnessSystem, params: &ProblemParams, u: &Field, g: &Field) -> f64 {
    if u.iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    regularized_defect(sys, params.q, 0.0, &g.0, &u.0).amax()
}

/// `u1 ≤ u2 + 1e-8` nodewise whenever `g1 ≤ g2` nodewise.
pub fn comparison_check(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    u1: &Field,
    u2: &Field,
    g1: &Field,
    g2: &Field,
) -> ComparisonOutcome {
    let indeterminate = semilinear_residual(sys, params, u1, g1) > SOLVE_TOL
        || semilinear_residual(sys, params, u2, g2) > SOLVE_TOL;
    let worst = match u1.below(u2, f64::INFINITY) {
        Ok(()) => worst_excess(u1, u2),
        Err(w) => w,
    };
    let ordered_data = g1.below(g2, 0.0).is_ok();
    let holds = !ordered_data || worst.1 <= ORDER_SLACK;
    ComparisonOutcome { holds, indeterminate, worst }
}

fn worst_excess(u1: &Field, u2: &Field) -> (usize, f64) {
    u1.iter()
        .zip(u2.iter())
        .map(|(a, b)| a - b)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
}

/// Result of checking `w ≤ u ≤ z_λ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub max_u: f64,
    /// Worst node and size of `w - u` when the lower bound fails.
    pub lower_violation: Option<(usize, f64)>,
    /// Worst node and size of `u - z_λ` when the upper bound fails.
    pub upper_violation: Option<(usize, f64)>,
    pub upper_envelope: Field,
}

impl EnvelopeReport {
    pub fn passes(&self) -> bool {
        self.lower_violation.is_none() && self.upper_violation.is_none() && self.max_u.is_finite()
    }
}

/// Checks `w ≤ u ≤ z_λ` with `z_λ` solving `L(z) = λ (max u)^(p-1)`.
pub fn envelope_check(sys: &StiffnessSystem, params: &ProblemParams, w: &Field, u: &Field) -> Result<EnvelopeReport> {
    if !u.is_finite() {
        return Err(Error::NonFinite("envelope candidate".into()));
    }
    let max_u = u.max();
    let c = params.lambda * max_u.max(0.0).powf(params.crit() - 1.0);
    let (z, _) = solve_singular_semilinear(sys, params, &Field::constant(sys.len(), c))?;
    Ok(EnvelopeReport {
        max_u,
        lower_violation: w.below(u, ORDER_SLACK).err(),
        upper_violation: u.below(&z, ORDER_SLACK).err(),
        upper_envelope: z,
    })
}
