//! Run configuration, result records, plot files and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bifurcation::{BifurcationDiagram, HolderFit};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{build_graded_grid, Grid};
use crate::params::ProblemParams;
use crate::singular::{Branch, SolveReport};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "FRACLAB_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub residual: f64,
    /// Relative width of the bisection bracket.
    pub bracket: f64,
    /// Boundary fit window; `None` means 10% of the domain width.
    pub fit_window: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { residual: 1e-8, bracket: 1e-3, fit_window: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BubbleConfig {
    pub nu: f64,
    pub eps_ladder: Vec<f64>,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        BubbleConfig { nu: 0.2, eps_ladder: vec![0.08, 0.04, 0.02] }
    }
}

/// Every knob of a run; mirrors the command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub s: f64,
    pub q: f64,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub a: f64,
    pub b: f64,
    /// Mesh grading exponent; `1` is uniform.
    pub grading: f64,
    pub tolerances: Tolerances,
    pub bubble: BubbleConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            s: 0.4,
            q: 2.0,
            lambda: 0.0,
            lambdas: Vec::new(),
            n: 256,
            a: -1.0,
            b: 1.0,
            grading: 1.0,
            tolerances: Tolerances::default(),
            bubble: BubbleConfig::default(),
            seed: 7,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Checks admissibility, the dimension condition, mesh and tolerances.
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.grid()?;
        let t = &self.tolerances;
        if !(t.residual > 0.0 && t.bracket > 0.0 && t.fit_window.map_or(true, |w| w > 0.0)) {
            return Err(Error::param("tolerances must be positive"));
        }
        if !(self.bubble.nu > 0.0) || self.bubble.eps_ladder.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::param("bubble radius and scales must be positive"));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::param("sweep values must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ProblemParams> {
        ProblemParams::new(self.s, self.q, self.lambda)
    }

    pub fn grid(&self) -> Result<Grid> {
        build_graded_grid(self.a, self.b, self.n, self.grading)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub grading: f64,
    pub nodes: Vec<f64>,
}

impl From<&Grid> for GridRecord {
    fn from(g: &Grid) -> Self {
        GridRecord { a: g.a(), b: g.b(), n: g.len(), grading: g.grading(), nodes: g.nodes().to_vec() }
    }
}

/// Serialized solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub params: ProblemParams,
    pub grid: GridRecord,
    pub values: Vec<f64>,
    pub residual: f64,
    pub energy: f64,
    pub branch: Branch,
    pub iterations: usize,
    pub converged: bool,
}

impl SolutionRecord {
    pub fn new(params: &ProblemParams, grid: &Grid, u: &Field, report: &SolveReport) -> Self {
        SolutionRecord {
            params: params.clone(),
            grid: grid.into(),
            values: u.as_slice().to_vec(),
            residual: report.residual,
            energy: report.energy,
            branch: report.branch,
            iterations: report.iterations,
            converged: report.converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub version: String,
    pub command: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub reports: BTreeMap<String, serde_json::Value>,
    pub files: Vec<FileEntry>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Output directory precedence: explicit flag, then the environment override,
/// then the configured value.
pub fn resolve_out_dir(flag: Option<PathBuf>, configured: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| configured.to_path_buf())
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory of one run; every file written through it ends up in the manifest.
pub struct RunOutput {
    root: PathBuf,
    command: String,
    config: RunConfig,
    started: u64,
    files: Vec<String>,
    reports: BTreeMap<String, serde_json::Value>,
}

impl RunOutput {
    /// Opens `config.out_dir`.
    pub fn create(config: &RunConfig, command: &str) -> Result<Self> {
        let root = config.out_dir.clone();
        std::fs::create_dir_all(&root)?;
        Ok(RunOutput {
            root,
            command: command.to_string(),
            config: config.clone(),
            started: unix_now(),
            files: Vec::new(),
            reports: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Attaches a report to the manifest under `key`.
    pub fn record<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.reports.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Writes the manifest last, hashing every file written so far.
    pub fn finish(self) -> Result<RunManifest> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = std::fs::read(self.root.join(name))?;
            files.push(FileEntry { path: name.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        let manifest = RunManifest {
            config: self.config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            started_unix: self.started,
            finished_unix: unix_now(),
            reports: self.reports,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())?;
        Ok(manifest)
    }
}

/// Diagram as CSV with columns `lambda, branch, supnorm, energy, residual, converged`.
pub fn diagram_csv(diagram: &BifurcationDiagram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda", "branch", "supnorm", "energy", "residual", "converged"])?;
    for e in &diagram.entries {
        w.write_record([
            e.lambda.to_string(),
            e.branch.to_string(),
            e.supnorm.to_string(),
            e.energy.to_string(),
            e.residual.to_string(),
            e.converged.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// A two-column plot file.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotFile {
    pub name: String,
    pub contents: String,
}

fn plot_text(header: &str, rows: impl Iterator<Item = (f64, f64)>) -> String {
    let mut out = format!("# {header}\n");
    for (x, y) in rows {
        let _ = writeln!(out, "{x} {y}");
    }
    out
}

/// Something that can be rendered as two-column plot files.
pub trait PlotSource {
    fn plot_files(&self) -> Vec<PlotFile>;
}

impl PlotSource for BifurcationDiagram {
    /// One file per branch holding `(λ, sup u)` of converged entries.
    fn plot_files(&self) -> Vec<PlotFile> {
        let mut files = Vec::new();
        for branch in [Branch::PureSingular, Branch::Minimal, Branch::MountainPass, Branch::Extremal] {
            let rows: Vec<(f64, f64)> = self.branch(branch).filter(|e| e.converged).map(|e| (e.lambda, e.supnorm)).collect();
            if !rows.is_empty() {
                files.push(PlotFile {
                    name: format!("diagram_{branch}.dat"),
                    contents: plot_text("lambda supnorm", rows.into_iter()),
                });
            }
        }
        files
    }
}

impl PlotSource for HolderFit {
    /// Regression points and the fitted line evaluated at the same abscissae.
    fn plot_files(&self) -> Vec<PlotFile> {
        if self.points.is_empty() {
            return Vec::new();
        }
        let xlabel = if self.log_correction { "log_profile" } else { "log_delta" };
        vec![
            PlotFile {
                name: "holder_scatter.dat".into(),
                contents: plot_text(&format!("{xlabel} log_u"), self.points.iter().copied()),
            },
            PlotFile {
                name: "holder_line.dat".into(),
                contents: plot_text(
                    &format!("{xlabel} fitted_log_u slope={} intercept={}", self.slope, self.intercept),
                    self.points.iter().map(|&(x, _)| (x, self.intercept + self.slope * x)),
                ),
            },
        ]
    }
}

/// Writes the plot files of `source`; warns and writes nothing when empty.
pub fn emit_plot_data(source: &impl PlotSource, out: &mut RunOutput) -> Result<Vec<PathBuf>> {
    let files = source.plot_files();
    if files.is_empty() {
        warn!("nothing to plot");
    }
    files.iter().map(|f| out.write_bytes(&f.name, f.contents.as_bytes())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bifurcation::DiagramEntry;

    fn entry(lambda: f64, branch: Branch) -> DiagramEntry {
        DiagramEntry { lambda, branch, supnorm: 1.0 + lambda, energy: 3.0, residual: 1e-12, converged: true }
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig { lambdas: vec![0.01, 0.02], tolerances: Tolerances { fit_window: Some(0.15), ..Default::default() }, ..Default::default() };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(RunConfig::from_toml("s = 0.9\nq = 1.0").unwrap_err().is_parameter());
        assert!(RunConfig::from_toml("s = 0.4\nq = 5.0").is_ok());
        assert!(RunConfig::from_toml("s = 0.4\nq = 2.0\nbogus = 1").unwrap_err().is_parameter());
        assert!(RunConfig::from_toml("[tolerances]\nresidual = -1.0").is_err());
    }

    #[test]
    fn diagram_outputs() {
        let d = BifurcationDiagram {
            entries: vec![entry(0.01, Branch::Minimal), entry(0.01, Branch::MountainPass), entry(0.02, Branch::Minimal)],
            lambda_cert: 1.8,
            lambda_star: None,
            bracket_width: None,
        };
        let csv = String::from_utf8(diagram_csv(&d).unwrap()).unwrap();
        assert!(csv.starts_with("lambda,branch,supnorm,energy,residual,converged\n"));
        assert_eq!(csv.lines().count(), 4);
        let files = d.plot_files();
        assert_eq!(files.len(), 2);
        assert!(files.iter().all(|f| f.contents.starts_with('#') && f.contents.lines().count() >= 2));
        assert_eq!(files, d.plot_files());
        let empty = BifurcationDiagram { entries: vec![], ..d };
        assert!(empty.plot_files().is_empty());
    }

    #[test]
    fn manifest_lists_hashed_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out_dir: dir.path().to_path_buf(), ..Default::default() };
        let mut out = RunOutput::create(&cfg, "test").unwrap();
        out.write_bytes("a.txt", b"hello").unwrap();
        out.record("note", &42).unwrap();
        let m = out.finish().unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.files[0].sha256, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config, cfg);
    }

    #[test]
    fn out_dir_precedence() {
        let configured = Path::new("from-config");
        std::env::remove_var(OUT_DIR_ENV);
        assert_eq!(resolve_out_dir(None, configured), configured);
        std::env::set_var(OUT_DIR_ENV, "from-env");
        assert_eq!(resolve_out_dir(None, configured), Path::new("from-env"));
        assert_eq!(resolve_out_dir(Some("from-flag".into()), configured), Path::new("from-flag"));
        std::env::remove_var(OUT_DIR_ENV);
    }
}
