//! Command-line pipelines over `fraclab-core`.
//!
//! Exit codes: 0 success, 2 rejected parameters or usage, 3 a solver did not
//! converge or a validation check failed, 1 any other failure (I/O).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use fraclab_core::{
    assemble_stiffness, diagram_csv, emit_plot_data, energy_gap_check, estimate_lambda_star,
    extremal_solution, holder_fit, lambda_certificate, monotone_iteration, mountain_pass_search,
    principal_eigenpair, profile_sandwich, resolve_out_dir, run_validation, sobolev_constant,
    solve_pure_singular, sweep_lambda, Error, Field, MonotoneOptions, MountainPassOptions,
    ProblemParams, RunConfig, RunOutput, SolutionRecord, SolveReport, StiffnessSystem,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fraclab", version, about = "Singular critical problems for the fractional Laplacian on an interval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimal solution at the given lambda.
    Solve(CommonArgs),
    /// Solution of the purely singular problem.
    PureSingular(CommonArgs),
    /// Minimal and mountain-pass branches over a list of lambda values.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Skip the mountain-pass branch.
        #[arg(long)]
        minimal_only: bool,
    },
    /// Certificate, bisection for the extremal parameter and the extremal solution.
    LambdaStar(CommonArgs),
    /// Second solution above the minimal one.
    MountainPass(CommonArgs),
    /// Boundary exponent fit of the purely singular solution.
    Regularity(CommonArgs),
    /// Seeded invariant suite.
    Validate(CommonArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    #[arg(long, allow_negative_numbers = true)]
    s: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Comma-separated lambda values for sweeps.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    lambdas: Option<Vec<f64>>,
    /// Interior node count.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    /// Mesh grading exponent (1 = uniform).
    #[arg(long, allow_negative_numbers = true)]
    grading: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stream path levels as JSON lines (mountain-pass searches).
    #[arg(long)]
    trace: bool,
}

impl CommonArgs {
    fn into_config(self, default_grading: f64) -> fraclab_core::Result<(RunConfig, bool)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig { grading: default_grading, ..RunConfig::default() },
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(s, q, lambda, lambdas, n, a, b, grading, seed);
        cfg.out_dir = resolve_out_dir(self.out, &cfg.out_dir);
        cfg.validate()?;
        Ok((cfg, self.trace))
    }
}

/// Parses `argv` (program name first), runs the pipeline and returns the exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_parameter() {
                EXIT_USAGE
            } else if matches!(e, Error::Convergence { .. } | Error::SingularSystem(_)) {
                EXIT_NONCONVERGENCE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> fraclab_core::Result<i32> {
    match command {
        Command::Solve(args) => solve(args),
        Command::PureSingular(args) => pure_singular(args),
        Command::Sweep { common, minimal_only } => sweep(common, minimal_only),
        Command::LambdaStar(args) => lambda_star(args),
        Command::MountainPass(args) => mountain_pass(args),
        Command::Regularity(args) => regularity(args),
        Command::Validate(args) => validate(args),
    }
}

struct Setup {
    cfg: RunConfig,
    params: ProblemParams,
    sys: StiffnessSystem,
    trace: bool,
}

fn setup(args: CommonArgs, default_grading: f64) -> fraclab_core::Result<Setup> {
    let (cfg, trace) = args.into_config(default_grading)?;
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    info!("assembling N = {} s = {} grading = {}", cfg.n, cfg.s, cfg.grading);
    let sys = assemble_stiffness(&grid, &params)?;
    Ok(Setup { cfg, params, sys, trace })
}

fn status(converged: bool) -> i32 {
    if converged {
        EXIT_OK
    } else {
        EXIT_NONCONVERGENCE
    }
}

fn write_solution(out: &mut RunOutput, name: &str, s: &Setup, params: &ProblemParams, u: &Field, report: &SolveReport) -> fraclab_core::Result<()> {
    out.write_json(name, &SolutionRecord::new(params, s.sys.grid(), u, report))?;
    out.record(name.trim_end_matches(".json"), report)
}

fn solve(args: CommonArgs) -> fraclab_core::Result<i32> {
    let s = setup(args, 1.0)?;
    let mut out = RunOutput::create(&s.cfg, "solve")?;
    let (w, wrep) = solve_pure_singular(&s.sys, &s.params.with_lambda(0.0)?)?;
    if !wrep.converged {
        warn!("pure singular solve residual {:e}", wrep.residual);
    }
    let result = monotone_iteration(&s.sys, &s.params, &w, None, &MonotoneOptions::default())?;
    write_solution(&mut out, "solution.json", &s, &s.params, &result.solution, &result.report)?;
    out.record("monotone_status", &result.status)?;
    println!(
        "lambda = {}: {:?}, sup u = {}, residual = {:e}, iterations = {}",
        s.params.lambda,
        result.status,
        result.solution.sup_norm(),
        result.report.residual,
        result.report.iterations
    );
    out.finish()?;
    Ok(status(result.report.converged))
}

fn pure_singular(args: CommonArgs) -> fraclab_core::Result<i32> {
    let s = setup(args, 1.0)?;
    let mut out = RunOutput::create(&s.cfg, "pure-singular")?;
    let (w, rep) = solve_pure_singular(&s.sys, &s.params)?;
    write_solution(&mut out, "pure_singular.json", &s, &s.params, &w, &rep)?;
    println!("sup w = {}, residual = {:e}", w.sup_norm(), rep.residual);
    out.finish()?;
    Ok(status(rep.converged))
}

fn certificate_and_star(s: &Setup, w: &Field, out: &mut RunOutput) -> fraclab_core::Result<fraclab_core::LambdaStar> {
    let eig = principal_eigenpair(&s.sys)?;
    let cert = lambda_certificate(&s.params, eig.lam1)?;
    info!("lam1 = {}, certificate = {}", eig.lam1, cert);
    let star = estimate_lambda_star(&s.sys, &s.params.with_lambda(0.0)?, w, cert, s.cfg.tolerances.bracket)?;
    if star.flagged {
        warn!("some feasibility probes were indeterminate");
    }
    #[derive(Serialize)]
    struct StarSummary<'a> {
        lam1: f64,
        certificate: f64,
        estimate: f64,
        lower: f64,
        upper: f64,
        relative_width: f64,
        flagged: bool,
        probes: &'a [fraclab_core::FeasibilityProbe],
    }
    out.record(
        "lambda_star",
        &StarSummary {
            lam1: eig.lam1,
            certificate: cert,
            estimate: star.estimate,
            lower: star.lower,
            upper: star.upper,
            relative_width: star.relative_width(),
            flagged: star.flagged,
            probes: &star.probes,
        },
    )?;
    Ok(star)
}

fn sweep(args: CommonArgs, minimal_only: bool) -> fraclab_core::Result<i32> {
    let s = setup(args, 1.0)?;
    let mut out = RunOutput::create(&s.cfg, "sweep")?;
    let base = s.params.with_lambda(0.0)?;
    let (w, _) = solve_pure_singular(&s.sys, &base)?;
    let star = certificate_and_star(&s, &w, &mut out)?;
    let lambdas: Vec<f64> = if s.cfg.lambdas.is_empty() {
        (1..=9).map(|k| 0.1 * k as f64 * star.estimate).collect()
    } else {
        s.cfg.lambdas.clone()
    };
    let sobolev = if minimal_only { None } else { Some(sobolev_constant(&s.sys, &base)?.value) };
    let mp_opts = MountainPassOptions {
        bubble_eps: *s.cfg.bubble.eps_ladder.last().unwrap_or(&0.02),
        bubble_nu: s.cfg.bubble.nu,
        ..MountainPassOptions::default()
    };
    let mut diagram = sweep_lambda(&s.sys, &base, &w, &lambdas, star.certificate, sobolev.map(|v| (v, &mp_opts)))?;
    diagram.lambda_star = Some(star.estimate);
    diagram.bracket_width = Some(star.upper - star.lower);
    out.write_bytes("diagram.csv", &diagram_csv(&diagram)?)?;
    out.write_json("diagram.json", &diagram)?;
    emit_plot_data(&diagram, &mut out)?;
    let converged = diagram.entries.iter().filter(|e| e.converged).count();
    println!("{} of {} entries converged; Lambda_est = {}", converged, diagram.entries.len(), star.estimate);
    out.finish()?;
    Ok(status(converged == diagram.entries.len()))
}

fn lambda_star(args: CommonArgs) -> fraclab_core::Result<i32> {
    let s = setup(args, 1.0)?;
    let mut out = RunOutput::create(&s.cfg, "lambda-star")?;
    let base = s.params.with_lambda(0.0)?;
    let (w, _) = solve_pure_singular(&s.sys, &base)?;
    let star = certificate_and_star(&s, &w, &mut out)?;
    let ext = extremal_solution(&s.sys, &base, &w, &star)?;
    let at_star = base.with_lambda(star.estimate)?;
    write_solution(&mut out, "extremal.json", &s, &at_star, &ext.solution, &ext.report)?;
    out.record("extremal_min_ladder_increment", &ext.min_ladder_increment)?;
    println!(
        "Lambda_est = {} in [{}, {}], certificate = {}, extremal residual = {:e}",
        star.estimate, star.lower, star.upper, star.certificate, ext.report.residual
    );
    out.finish()?;
    Ok(status(ext.report.converged))
}

fn mountain_pass(args: CommonArgs) -> fraclab_core::Result<i32> {
    let s = setup(args, 1.0)?;
    let mut out = RunOutput::create(&s.cfg, "mountain-pass")?;
    let base = s.params.with_lambda(0.0)?;
    let (w, _) = solve_pure_singular(&s.sys, &base)?;
    let minimal = monotone_iteration(&s.sys, &s.params, &w, None, &MonotoneOptions::default())?;
    if !minimal.report.converged {
        eprintln!("no minimal solution at lambda = {} ({:?})", s.params.lambda, minimal.status);
        return Ok(EXIT_NONCONVERGENCE);
    }
    write_solution(&mut out, "minimal.json", &s, &s.params, &minimal.solution, &minimal.report)?;
    let sobolev = sobolev_constant(&s.sys, &base)?;
    out.record("sobolev", &sobolev.value)?;
    let gap = energy_gap_check(&s.sys, &s.params, &minimal.solution, &s.cfg.bubble.eps_ladder, s.cfg.bubble.nu, sobolev.value)?;
    out.record("energy_gap", &gap)?;
    let opts = MountainPassOptions {
        bubble_eps: *s.cfg.bubble.eps_ladder.last().unwrap_or(&0.02),
        bubble_nu: s.cfg.bubble.nu,
        trace: s.trace.then(|| s.cfg.out_dir.join("mountain_pass_trace.jsonl")),
        ..MountainPassOptions::default()
    };
    let mp = mountain_pass_search(&s.sys, &s.params, &minimal.solution, sobolev.value, &opts)?;
    write_solution(&mut out, "mountain_pass.json", &s, &s.params, &mp.solution, &mp.report)?;
    if let Some(path) = &opts.trace {
        let bytes = std::fs::read(path)?;
        out.write_bytes("mountain_pass_trace.jsonl", &bytes)?;
    }
    #[derive(Serialize)]
    struct Levels<'a> {
        alternative: fraclab_core::Alternative,
        base_energy: f64,
        level_bound: f64,
        level_bound_without_lambda: f64,
        level_history: &'a [f64],
    }
    out.record(
        "mountain_pass_levels",
        &Levels {
            alternative: mp.alternative,
            base_energy: mp.base_energy,
            level_bound: mp.level_bound,
            level_bound_without_lambda: mp.level_bound_without_lambda,
            level_history: &mp.level_history,
        },
    )?;
    println!(
        "I(w) = {}, I(v) = {}, sup w = {}, sup v = {}, residual = {:e}",
        minimal.report.energy,
        mp.report.energy,
        minimal.solution.sup_norm(),
        mp.solution.sup_norm(),
        mp.report.residual
    );
    out.finish()?;
    Ok(status(mp.report.converged))
}

fn regularity(args: CommonArgs) -> fraclab_core::Result<i32> {
    let s = setup(args, 2.5)?;
    let mut out = RunOutput::create(&s.cfg, "regularity")?;
    let (w, rep) = solve_pure_singular(&s.sys, &s.params)?;
    let fit = holder_fit(&w, s.sys.grid(), &s.params, s.cfg.tolerances.fit_window)?;
    let eig = principal_eigenpair(&s.sys)?;
    let (k1, k2) = profile_sandwich(&w, &eig.phi1, s.sys.grid(), s.params.q, fit.fit_width);
    out.write_json("holder_fit.json", &fit)?;
    out.record("profile_sandwich", &(k1, k2))?;
    out.record("pure_singular", &rep)?;
    emit_plot_data(&fit, &mut out)?;
    println!(
        "alpha_fit = {:.4}, alpha_theory = {:.4}, rsq = {:.5}, k1 = {k1:.4}, k2 = {k2:.4}",
        fit.alpha_fit, fit.alpha_theory, fit.rsq
    );
    out.finish()?;
    Ok(status(rep.converged && fit.trusted()))
}

fn validate(args: CommonArgs) -> fraclab_core::Result<i32> {
    let (cfg, _) = args.into_config(1.0)?;
    let mut out = RunOutput::create(&cfg, "validate")?;
    let report = run_validation(cfg.seed)?;
    out.write_json("validation_report.json", &report)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    out.finish()?;
    Ok(status(report.all_passed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn run(args: &[&str], out: &Path) -> i32 {
        let mut argv = vec!["fraclab".to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        argv.push("--out".into());
        argv.push(out.display().to_string());
        run_command(argv)
    }

    fn manifest(out: &Path) -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
    }

    #[test]
    fn solve_writes_solution_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(&["solve", "--s", "0.4", "--q", "2", "--lambda", "0.05", "--N", "256"], dir.path()), EXIT_OK);
        let m = manifest(dir.path());
        assert_eq!(m["command"], "solve");
        assert_eq!(m["config"]["N"], 256);
        let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
        assert_eq!(files, ["solution.json"]);
        let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
        assert_eq!(sol["converged"], true);
        assert_eq!(sol["values"].as_array().unwrap().len(), 256);
    }

    #[test]
    fn rejected_parameters_exit_with_usage_code() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(&["solve", "--s", "0.9", "--q", "1", "--N", "64"], dir.path()), EXIT_USAGE);
        assert_eq!(run(&["solve", "--s", "0.9", "--q", "10", "--N", "64"], dir.path()), EXIT_USAGE);
        assert_eq!(run(&["solve", "--q", "-1", "--N", "64"], dir.path()), EXIT_USAGE);
        assert_eq!(run(&["solve", "--lambda", "-0.5", "--N", "64"], dir.path()), EXIT_USAGE);
        assert_eq!(run(&["solve", "--a", "1", "--b", "-1", "--N", "64"], dir.path()), EXIT_USAGE);
        assert_eq!(run(&["solve", "--bogus", "1"], dir.path()), EXIT_USAGE);
        assert_eq!(run(&["frobnicate"], dir.path()), EXIT_USAGE);
        assert!(!dir.path().join("manifest.json").exists());
    }

    #[test]
    fn config_file_supplies_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("run.toml");
        std::fs::write(&good, "s = 0.3\nq = 0.5\nN = 48\n").unwrap();
        let out = dir.path().join("out");
        assert_eq!(run(&["pure-singular", "--config", good.to_str().unwrap(), "--N", "40"], &out), EXIT_OK);
        let m = manifest(&out);
        assert_eq!(m["config"]["s"], 0.3);
        assert_eq!(m["config"]["N"], 40);
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "s = 0.3\nmystery = 1\n").unwrap();
        assert_eq!(run(&["pure-singular", "--config", bad.to_str().unwrap()], &out), EXIT_USAGE);
    }

    #[test]
    fn regularity_plot_data_is_deterministic() {
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        for dir in [&first, &second] {
            assert_eq!(run(&["regularity", "--s", "0.4", "--q", "2", "--N", "128"], dir.path()), EXIT_OK);
        }
        for name in ["holder_fit.json", "holder_scatter.dat", "holder_line.dat"] {
            let a = std::fs::read(first.path().join(name)).unwrap();
            assert_eq!(a, std::fs::read(second.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn sweep_and_lambda_star_pipelines() {
        let dir = tempfile::tempdir().unwrap();
        let sweep_out = dir.path().join("sweep");
        assert_eq!(run(&["sweep", "--N", "64", "--lambdas", "0.01,0.02", "--minimal-only"], &sweep_out), EXIT_OK);
        let csv = std::fs::read_to_string(sweep_out.join("diagram.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(sweep_out.join("diagram_minimal.dat").exists());
        let star_out = dir.path().join("star");
        assert_eq!(run(&["lambda-star", "--N", "64"], &star_out), EXIT_OK);
        let m = manifest(&star_out);
        let star = &m["reports"]["lambda_star"];
        assert!(star["lower"].as_f64().unwrap() < star["upper"].as_f64().unwrap());
        assert!(star["upper"].as_f64().unwrap() <= star["certificate"].as_f64().unwrap());
    }

    #[test]
    fn mountain_pass_streams_trace() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(&["mountain-pass", "--N", "128", "--lambda", "0.03", "--trace"], dir.path()), EXIT_OK);
        let trace = std::fs::read_to_string(dir.path().join("mountain_pass_trace.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
        assert!(first["level"].is_number());
        assert!(dir.path().join("mountain_pass.json").exists());
    }

    #[test]
    fn mountain_pass_without_minimal_solution_reports_nonconvergence() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(&["mountain-pass", "--N", "64", "--lambda", "5"], dir.path()), EXIT_NONCONVERGENCE);
    }
}
