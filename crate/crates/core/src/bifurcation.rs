//! Parameter studies: the nonexistence certificate, bisection for the
//! extremal parameter, λ sweeps, the extremal solution and boundary fits.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{boundary_distance, Grid};
use crate::operator::StiffnessSystem;
use crate::params::ProblemParams;
use crate::quadrature::bracket_and_refine;
use crate::singular::{
    monotone_iteration, newton_critical, scan_supersolution, supersolution_defect, weak_residual, Branch,
    MonotoneOptions, MonotoneStatus, SolveReport, ORDER_SLACK,
};
use crate::variational::{energy, mountain_pass_search, MountainPassOptions};

/// `max_{t>0} (2 λ1 t - t^(-q)) / t^(p-1)`.
pub fn certificate_value(q: f64, p: f64, lam1: f64) -> Result<f64> {
    if !(lam1 > 0.0 && lam1.is_finite()) {
        return Err(Error::param(format!("principal eigenvalue must be positive, got {lam1}")));
    }
    if !(q > 0.0 && p > 2.0) {
        return Err(Error::param(format!("need q > 0 and p > 2, got q = {q}, p = {p}")));
    }
    let f = |t: f64| (2.0 * lam1 * t - t.powf(-q)) / t.powf(p - 1.0);
    let (_, v) = bracket_and_refine(1e-8, 1e8, 4000, f);
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Convergence { method: "certificate maximization", iterations: 4000, detail: format!("value {v}") });
    }
    Ok(v)
}

/// Threshold above which the eigenfunction test rules out solutions.
pub fn lambda_certificate(params: &ProblemParams, lam1: f64) -> Result<f64> {
    certificate_value(params.q, params.crit(), lam1)
}

/// Outcome of one feasibility test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
    /// Iteration cap hit while bounded; counted as infeasible.
    Indeterminate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibilityProbe {
    pub lambda: f64,
    pub verdict: Feasibility,
    pub iterations: usize,
    /// Whether some `w + 2^k z`, `k ≤ 20`, is a supersolution at this λ.
    pub torsion_supersolution: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaStar {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub certificate: f64,
    /// Minimal solution at `lower`.
    pub lower_solution: Field,
    pub probes: Vec<FeasibilityProbe>,
    /// True when some probe was indeterminate.
    pub flagged: bool,
}

impl LambdaStar {
    pub fn relative_width(&self) -> f64 {
        (self.upper - self.lower) / self.estimate
    }
}

/// Feasibility of `λ` by monotone iteration from `start` (a subsolution).
/// Returns the verdict, the iteration outcome and the limit when feasible.
pub fn feasibility(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    start: &Field,
    opts: &MonotoneOptions,
) -> Result<(Feasibility, crate::singular::MonotoneOutcome)> {
    let out = monotone_iteration(sys, params, start, None, opts)?;
    let verdict = match out.status {
        MonotoneStatus::Converged if out.report.converged && supersolution_defect(sys, params, &out.solution).0 => {
            Feasibility::Feasible
        }
        MonotoneStatus::Converged => Feasibility::Indeterminate,
        MonotoneStatus::Diverged => Feasibility::Infeasible,
        MonotoneStatus::Indeterminate => Feasibility::Indeterminate,
    };
    Ok((verdict, out))
}

/// Bisection on `[0, λ_cert]` until `(upper - lower) ≤ rel_tol · midpoint`.
pub fn estimate_lambda_star(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    w: &Field,
    certificate: f64,
    rel_tol: f64,
) -> Result<LambdaStar> {
    if !(rel_tol > 0.0) || !(certificate > 0.0) {
        return Err(Error::param("bisection needs a positive tolerance and certificate"));
    }
    let opts = MonotoneOptions::default();
    let mut lower = 0.0;
    let mut upper = certificate;
    let mut lower_solution = w.clone();
    let mut probes = Vec::new();
    let mut flagged = false;
    while upper - lower > rel_tol * 0.5 * (upper + lower) {
        let mid = 0.5 * (lower + upper);
        let p = params.with_lambda(mid)?;
        let (verdict, out) = feasibility(sys, &p, &lower_solution, &opts)?;
        let torsion_supersolution = scan_supersolution(sys, &p, w, 20)?.is_some();
        probes.push(FeasibilityProbe { lambda: mid, verdict, iterations: out.report.iterations, torsion_supersolution });
        match verdict {
            Feasibility::Feasible => {
                lower = mid;
                lower_solution = out.solution;
            }
            Feasibility::Indeterminate => {
                flagged = true;
                upper = mid;
            }
            Feasibility::Infeasible => upper = mid,
        }
    }
    Ok(LambdaStar { estimate: 0.5 * (lower + upper), lower, upper, certificate, lower_solution, probes, flagged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramEntry {
    pub lambda: f64,
    pub branch: Branch,
    pub supnorm: f64,
    pub energy: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BifurcationDiagram {
    pub entries: Vec<DiagramEntry>,
    pub lambda_cert: f64,
    pub lambda_star: Option<f64>,
    pub bracket_width: Option<f64>,
}

impl BifurcationDiagram {
    pub fn branch(&self, branch: Branch) -> impl Iterator<Item = &DiagramEntry> {
        self.entries.iter().filter(move |e| e.branch == branch)
    }
}

/// Minimal branch (and optionally the mountain-pass branch) along an
/// increasing list of λ values, warm-starting each minimal solve from the
/// previous converged one.
pub fn sweep_lambda(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    w: &Field,
    lambdas: &[f64],
    lambda_cert: f64,
    second_branch: Option<(f64, &MountainPassOptions)>,
) -> Result<BifurcationDiagram> {
    if lambdas.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::param("sweep values must be sorted increasingly"));
    }
    let opts = MonotoneOptions::default();
    let mut start = w.clone();
    let mut entries = Vec::new();
    for &lambda in lambdas {
        let p = params.with_lambda(lambda)?;
        let out = monotone_iteration(sys, &p, &start, None, &opts)?;
        entries.push(DiagramEntry {
            lambda,
            branch: Branch::Minimal,
            supnorm: out.solution.sup_norm(),
            energy: out.report.energy,
            residual: out.report.residual,
            converged: out.report.converged,
        });
        if !out.report.converged {
            continue;
        }
        if let Some((sobolev, mp_opts)) = second_branch {
            if lambda > 0.0 {
                let entry = match mountain_pass_search(sys, &p, &out.solution, sobolev, mp_opts) {
                    Ok(mp) => DiagramEntry {
                        lambda,
                        branch: Branch::MountainPass,
                        supnorm: mp.solution.sup_norm(),
                        energy: mp.report.energy,
                        residual: mp.report.residual,
                        converged: mp.report.converged,
                    },
                    Err(e) => {
                        warn!("mountain-pass search failed at lambda = {lambda}: {e}");
                        DiagramEntry {
                            lambda,
                            branch: Branch::MountainPass,
                            supnorm: f64::NAN,
                            energy: f64::NAN,
                            residual: f64::NAN,
                            converged: false,
                        }
                    }
                };
                entries.push(entry);
            }
        }
        start = out.solution;
    }
    Ok(BifurcationDiagram { entries, lambda_cert, lambda_star: None, bracket_width: None })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtremalRung {
    pub lambda: f64,
    pub solution: Field,
    pub report: SolveReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtremalOutcome {
    pub rungs: Vec<ExtremalRung>,
    pub solution: Field,
    /// Report of the deepest convergent rung, with the residual evaluated at `Λ_est`.
    pub report: SolveReport,
    /// `min_m min_i (u_{m+1} - u_m)_i` over consecutive convergent rungs.
    pub min_ladder_increment: f64,
    /// `min_i (u - w)_i` for the returned solution.
    pub margin_over_w: f64,
}

/// Minimal solutions along `λ_m = Λ_est (1 - 2^-m)`, `m = 1..8`, followed by a
/// terminal rung at the feasible end of the bisection bracket.
pub fn extremal_solution(
    sys: &StiffnessSystem,
    params: &ProblemParams,
    w: &Field,
    star: &LambdaStar,
) -> Result<ExtremalOutcome> {
    let opts = MonotoneOptions::default();
    let mut lambdas: Vec<f64> = (1..=8).map(|m| star.estimate * (1.0 - 0.5f64.powi(m))).collect();
    if star.lower > *lambdas.last().unwrap() {
        lambdas.push(star.lower);
    }
    let mut rungs: Vec<ExtremalRung> = Vec::new();
    let mut start = w.clone();
    for &lambda in &lambdas {
        let p = params.with_lambda(lambda)?;
        let out = monotone_iteration(sys, &p, &start, None, &opts)?;
        let mut solution = out.solution;
        let mut report = out.report;
        if out.status != MonotoneStatus::Diverged {
            // Newton from the monotone limit; kept only when it lands on a stable
            // solution above the iterate (the minimal solution is the stable one)
            let polished = newton_critical(sys, &p, &solution, 30)?;
            let candidate = Field(polished.u);
            if polished.stable && polished.residual < report.residual && solution.below(&candidate, ORDER_SLACK).is_ok() {
                report.residual = polished.residual;
                report.iterations += polished.iterations;
                report.energy = energy(sys, &p, &candidate)?;
                report.converged = polished.residual <= opts.residual_tol;
                solution = candidate;
            }
        }
        if !report.converged {
            warn!("extremal ladder stopped at lambda = {lambda}");
            break;
        }
        report.branch = Branch::Extremal;
        start = solution.clone();
        rungs.push(ExtremalRung { lambda, solution, report });
    }
    let last = rungs.last().ok_or_else(|| Error::Convergence {
        method: "extremal ladder",
        iterations: lambdas.len(),
        detail: "no rung converged".into(),
    })?;
    let mut min_inc = f64::INFINITY;
    for pair in rungs.windows(2) {
        min_inc = min_inc.min((&pair[1].solution.0 - &pair[0].solution.0).min());
    }
    let at_star = params.with_lambda(star.estimate)?;
    let solution = last.solution.clone();
    let report = SolveReport {
        residual: weak_residual(sys, &at_star, &solution),
        iterations: last.report.iterations,
        energy: energy(sys, &at_star, &solution)?,
        branch: Branch::Extremal,
        converged: last.report.converged,
    };
    let margin_over_w = (&solution.0 - &w.0).min();
    Ok(ExtremalOutcome { rungs, solution, report, min_ladder_increment: min_inc, margin_over_w })
}

/// Least-squares fit of the boundary decay exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub alpha_fit: f64,
    pub alpha_theory: f64,
    pub log_correction: bool,
    pub rsq: f64,
    pub slope: f64,
    pub intercept: f64,
    pub fit_width: f64,
    pub widened: bool,
    /// `(x, log u)` pairs entering the regression.
    pub points: Vec<(f64, f64)>,
}

impl HolderFit {
    pub fn trusted(&self) -> bool {
        self.rsq >= 0.99
    }
}

/// Boundary exponent predicted by the `q` trichotomy.
pub fn theoretical_exponent(s: f64, q: f64) -> f64 {
    if q > 1.0 {
        2.0 * s / (q + 1.0)
    } else {
        s
    }
}

/// Fits `log u` against `log δ` on nodes with `δ ≤ fit_width`; for `q = 1`
/// the regressor is `log(δ^s (log(2/δ^s))^(1/2))` and `alpha_fit = s · slope`.
pub fn holder_fit(u: &Field, grid: &Grid, params: &ProblemParams, fit_width: Option<f64>) -> Result<HolderFit> {
    if u.len() != grid.len() {
        return Err(Error::param("field size does not match the grid"));
    }
    if u.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::param("boundary fit needs a positive finite field"));
    }
    let delta = boundary_distance(grid).values;
    let mut width = fit_width.unwrap_or(0.1 * grid.width());
    if !(width > 0.0) {
        return Err(Error::param("fit width must be positive"));
    }
    let mut widened = false;
    while delta.iter().filter(|d| **d <= width).count() < 6 {
        width *= 2.0;
        widened = true;
    }
    if widened {
        warn!("fit window widened to {width} to reach 6 nodes");
    }
    let s = params.s;
    let log_correction = params.q == 1.0;
    let points: Vec<(f64, f64)> = delta
        .iter()
        .zip(u.iter())
        .filter(|(d, _)| **d <= width)
        .map(|(&d, &v)| {
            let x = if log_correction {
                let ds = d.powf(s);
                (ds * (2.0 / ds).ln().sqrt()).ln()
            } else {
                d.ln()
            };
            (x, v.ln())
        })
        .collect();
    let (slope, intercept, rsq) = least_squares(&points);
    let alpha_fit = if log_correction { s * slope } else { slope };
    Ok(HolderFit {
        alpha_fit,
        alpha_theory: theoretical_exponent(s, params.q),
        log_correction,
        rsq,
        slope,
        intercept,
        fit_width: width,
        widened,
        points,
    })
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let rsq = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, rsq)
}

/// Boundary profile built from the principal eigenfunction.
pub fn boundary_profile(phi1: &Field, q: f64) -> Field {
    Field(phi1.map(|p| {
        if q < 1.0 {
            p
        } else if q == 1.0 {
            p * (2.0 / p).ln().sqrt()
        } else {
            p.powf(2.0 / (q + 1.0))
        }
    }))
}

/// Constants `k1 ≤ u/φ_q ≤ k2` over nodes with `δ ≤ fit_width`.
pub fn profile_sandwich(u: &Field, phi1: &Field, grid: &Grid, q: f64, fit_width: f64) -> (f64, f64) {
    let profile = boundary_profile(phi1, q);
    let delta = boundary_distance(grid).values;
    let mut k1 = f64::INFINITY;
    let mut k2 = 0.0f64;
    for i in 0..u.len() {
        if delta[i] <= fit_width {
            let r = u[i] / profile[i];
            k1 = k1.min(r);
            k2 = k2.max(r);
        }
    }
    (k1, k2)
}
