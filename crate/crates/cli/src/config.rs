//! JSON run configuration. Matrices are nested arrays in row-major order.

use std::path::{Path, PathBuf};

use barrier_iqc::analysis::{AnalysisConfig, BarrierChoice, ControllerKind, MarginTarget, TableCell};
use barrier_iqc::lti::StateSpace;
use barrier_iqc::multipliers::{MultiplierClass, MultiplierSpec};
use barrier_iqc::simulate::ControlLaw;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA: &str = "barrier-iqc/run-config/v1";

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub plant: PlantConfig,
    pub observer: ObserverConfig,
    pub horizon: usize,
    pub q: Matrix,
    pub r: f64,
    pub mu: f64,
    #[serde(default = "default_barrier")]
    pub barrier: BarrierChoice,
    pub bounds: Bounds,
    pub multiplier: MultiplierConfig,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    pub kappa: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

/// Kalman filter noise covariances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub q: Matrix,
    pub r: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClassName {
    General,
    Zf,
    Czf,
}

impl ClassName {
    fn class(self) -> MultiplierClass {
        match self {
            ClassName::General => MultiplierClass::StaticSector,
            ClassName::Zf => MultiplierClass::ZfSiso,
            ClassName::Czf => MultiplierClass::CzfDiagonal,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ClassName::General => "general",
            ClassName::Zf => "zf",
            ClassName::Czf => "czf",
        }
    }
}

/// `nzf` taps on each side of the FIR filter; ignored for `general`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierConfig {
    pub class: ClassName,
    #[serde(default)]
    pub nzf: usize,
}

impl MultiplierConfig {
    pub fn spec(&self) -> Result<MultiplierSpec, CliError> {
        let n = if self.class == ClassName::General { 0 } else { self.nzf };
        MultiplierSpec::new(self.class.class(), n, n).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TargetName {
    Kappa,
    R,
    B,
}

impl TargetName {
    pub fn target(self) -> MarginTarget {
        match self {
            TargetName::Kappa => MarginTarget::MaxKappa,
            TargetName::R => MarginTarget::MinR,
            TargetName::B => MarginTarget::MaxB,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default)]
    pub target: Option<TargetName>,
    #[serde(default)]
    pub bracket: Option<[f64; 2]>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub scan_points: usize,
    /// Table cells to sweep; empty means the single configured cell.
    #[serde(default)]
    pub cells: Vec<CellConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub controller: ControllerKind,
    pub multiplier: MultiplierConfig,
}

impl CellConfig {
    pub fn cell(&self) -> Result<TableCell, CliError> {
        Ok(TableCell { controller: self.controller, multiplier: self.multiplier.spec()? })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Explicit initial plant states; when empty, `count` random states are drawn.
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Draws one random output uncertainty of norm `b` per run.
    #[serde(default)]
    pub uncertainty: bool,
    /// Overrides the law implied by `controller`.
    #[serde(default)]
    pub law: Option<ControlLaw>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { steps: default_steps(), x0: Vec::new(), count: default_count(), radius: default_radius(), uncertainty: false, law: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_barrier() -> BarrierChoice {
    BarrierChoice::GradientRecentered
}
fn default_controller() -> ControllerKind {
    ControllerKind::Barrier
}
fn default_tol() -> f64 {
    1e-3
}
fn default_steps() -> usize {
    500
}
fn default_count() -> usize {
    8
}
fn default_radius() -> f64 {
    1.0
}

fn matrix(name: &str, rows: &Matrix) -> Result<DMatrix<f64>, CliError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!("{name} must be a non-empty rectangular array of rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema != SCHEMA {
            return Err(CliError::Config(format!("unsupported schema {:?}, expected {SCHEMA:?}", cfg.schema)));
        }
        cfg.analysis()?;
        Ok(cfg)
    }

    /// Validated numeric configuration.
    pub fn analysis(&self) -> Result<AnalysisConfig, CliError> {
        let bad = |e: barrier_iqc::Error| CliError::Config(e.to_string());
        let plant = StateSpace::strictly_proper(matrix("plant.a", &self.plant.a)?, matrix("plant.b", &self.plant.b)?, matrix("plant.c", &self.plant.c)?)
            .map_err(bad)?;
        let (nx, ny) = (plant.n_states(), plant.n_outputs());
        let observer_q = matrix("observer.q", &self.observer.q)?;
        let observer_r = matrix("observer.r", &self.observer.r)?;
        let q = matrix("q", &self.q)?;
        if observer_q.shape() != (nx, nx) || q.shape() != (nx, nx) || observer_r.shape() != (ny, ny) {
            return Err(CliError::Config("observer.q and q must be n_x × n_x, observer.r n_y × n_y".into()));
        }
        if self.horizon == 0 {
            return Err(CliError::Config("horizon must be at least 1".into()));
        }
        if self.lower_upper_invalid() {
            return Err(CliError::Config("bounds need lower < 0 < upper componentwise".into()));
        }
        let cfg = AnalysisConfig {
            plant,
            observer_q,
            observer_r,
            horizon: self.horizon,
            q,
            r: self.r,
            mu: self.mu,
            barrier: self.barrier,
            lower: self.bounds.lower.clone(),
            upper: self.bounds.upper.clone(),
            multiplier: self.multiplier.spec()?,
            controller: self.controller,
            b: self.b,
            kappa: self.kappa,
        };
        cfg.validate().map_err(bad)?;
        if let Some(task) = &self.task {
            for c in &task.cells {
                c.cell()?;
            }
            if let Some([lo, hi]) = task.bracket {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(CliError::Config("task.bracket must be [lo, hi] with lo < hi".into()));
                }
            }
            if !(task.tol > 0.0) {
                return Err(CliError::Config("task.tol must be positive".into()));
            }
        }
        if let Some(sim) = &self.simulation {
            if sim.x0.iter().any(|x| x.len() != nx || x.iter().any(|v| !v.is_finite())) {
                return Err(CliError::Config(format!("every simulation.x0 entry needs {nx} finite components")));
            }
            if !(sim.radius >= 0.0) {
                return Err(CliError::Config("simulation.radius must be non-negative".into()));
            }
        }
        Ok(cfg)
    }

    fn lower_upper_invalid(&self) -> bool {
        let Bounds { lower, upper } = &self.bounds;
        lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| !(*l < 0.0 && *u > 0.0))
    }

    /// SHA-256 of the effective configuration after command-line overrides.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
