//! Finite-element solvers for singular semilinear problems driven by the
//! integral fractional Laplacian on an interval.

pub mod bifurcation;
pub mod error;
pub mod field;
pub mod grid;
pub mod operator;
pub mod params;
pub mod persistence;
pub mod quadrature;
pub mod singular;
pub mod validate;
pub mod variational;

pub use error::{Error, Result};
pub use field::Field;
pub use grid::{boundary_distance, build_graded_grid, build_grid, DistanceField, Grid};
pub use operator::{
    assemble_cached, assemble_stiffness, principal_eigenpair, SpectralData, StiffnessCache,
    StiffnessSystem,
};
pub use params::{admissibility, critical_exponent, normalization_constant, ProblemParams};
pub use singular::{
    build_supersolution, comparison_check, critical_defect, envelope_check, monotone_iteration,
    regularization_path, scan_supersolution, semilinear_residual, solve_pure_singular,
    solve_singular_semilinear, solve_singular_semilinear_with, weak_residual, Branch,
    ComparisonOutcome, EnvelopeReport, MonotoneOptions, MonotoneOutcome, MonotoneStatus,
    RegularizationSchedule, SolveReport, Supersolution,
};
pub use variational::{
    energy, energy_gap_check, gap_thresholds, gateaux_derivative, make_bubble, mountain_pass_search,
    sobolev_constant, sobolev_quotient, Alternative, Bubble, ConeConstraint, EnergyGapReport,
    MountainPassOptions, MountainPassOutcome, PathState, SobolevEstimate,
};
pub use bifurcation::{
    boundary_profile, certificate_value, estimate_lambda_star, extremal_solution, feasibility,
    holder_fit, lambda_certificate, profile_sandwich, sweep_lambda, theoretical_exponent,
    BifurcationDiagram, DiagramEntry, ExtremalOutcome, ExtremalRung, Feasibility, FeasibilityProbe,
    HolderFit, LambdaStar,
};
pub use persistence::{
    diagram_csv, emit_plot_data, resolve_out_dir, BubbleConfig, FileEntry, GridRecord, PlotFile, PlotSource, RunConfig,
    RunManifest, RunOutput, SolutionRecord, Tolerances, OUT_DIR_ENV,
};
pub use validate::{run_validation, CheckResult, ValidationReport};
