//! Run configuration: a versioned TOML file describing kernel, plates,
//! constraints, field and solver options.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use riesz_core::geometry::{
    read_point_cloud, sample_revolution_surface, sample_sphere, Condenser, Plate, Sign,
};
use riesz_core::kernel::{DiagonalPolicy, RieszKernel, SignedDiscreteMeasure};
use riesz_core::measures::{Caps, ExternalField, PlateConstraint, ProblemSpec};
use riesz_core::operator::EnergyOperator;
use riesz_core::solver::{capacity_report, solve_with, SolveOptions, SolveReport};
use riesz_core::verify::{kkt_check, KktReport};
use riesz_core::Points;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Default sampling seed for plates without their own.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub diagonal: DiagonalConfig,
    pub plates: Vec<PlateConfig>,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub solver: SolveOptions,
    /// Relative tolerance of the KKT certification of the result.
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    pub output_dir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    riesz_core::geometry::DEFAULT_SEED
}

fn default_kkt_tol() -> f64 {
    1e-6
}

fn default_mass() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub alpha: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    3
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiagonalConfig {
    Zero,
    NearestNeighbor { scale: f64 },
    /// Nearest-neighbor scale fitted on a unit sphere with as many nodes as
    /// the smallest plate.
    #[default]
    Calibrated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateConfig {
    /// +1 or −1.
    pub sign: i32,
    pub shape: ShapeConfig,
    pub nodes: usize,
    pub seed: Option<u64>,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default)]
    pub gauge: GaugeConfig,
    #[serde(default)]
    pub constraint: ConstraintConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Sphere { center: Vec<f64>, radius: f64 },
    RevolutionSurface { r_exponent: f64, x1_min: f64, x1_max: f64 },
    PointCloud { path: PathBuf },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeConfig {
    #[default]
    AllOnes,
    /// One positive value per line.
    File { path: PathBuf },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintConfig {
    #[default]
    Unbounded,
    /// Equal caps summing to `total`.
    UniformCap { total: f64 },
    /// `factor · mass` times the discrete capacitary measure of the plate.
    ScaledEquilibrium { factor: f64 },
    /// One cap per line.
    ExplicitFile { path: PathBuf },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    #[default]
    Zero,
    /// f_i = s_i κ(·, ζ) for the signed measure ζ stored one node per line
    /// as `x1 .. xn weight`.
    RieszOfMeasure { path: PathBuf },
    /// CSV with header `plate,node_index,value`; missing nodes get 0.
    NodeGridFile { path: PathBuf },
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{origin}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for plate in &mut self.plates {
            if let ShapeConfig::PointCloud { path } = &mut plate.shape {
                fix(path);
            }
            if let GaugeConfig::File { path } = &mut plate.gauge {
                fix(path);
            }
            if let ConstraintConfig::ExplicitFile { path } = &mut plate.constraint {
                fix(path);
            }
        }
        match &mut self.field {
            FieldConfig::RieszOfMeasure { path } | FieldConfig::NodeGridFile { path } => fix(path),
            FieldConfig::Zero => {}
        }
        if let Some(out) = &mut self.output_dir {
            fix(out);
        }
    }

    /// Builds the condenser, constraints and field.
    pub fn resolve(&self) -> Result<Problem> {
        let kernel = RieszKernel::new(self.kernel.alpha, self.kernel.dim).map_err(config)?;
        if self.plates.is_empty() {
            return Err(CliError::Config("at least one plate is required".into()));
        }
        self.solver.validate().map_err(config)?;
        if !(self.kkt_tol > 0.0) {
            return Err(CliError::Config(format!("kkt_tol must be positive, got {}", self.kkt_tol)));
        }
        let mut plates = Vec::with_capacity(self.plates.len());
        for (i, p) in self.plates.iter().enumerate() {
            let sign = Sign::from_value(p.sign).map_err(|e| at_plate(i, e))?;
            let nodes = p.sample(self.seed, self.kernel.dim).map_err(|e| at_plate(i, e))?;
            plates.push(Plate::new(sign, nodes).map_err(|e| at_plate(i, e))?);
        }
        let cond = Condenser::new(plates)?;
        let min_nodes = cond.node_counts().into_iter().min().unwrap_or(0);
        let diag = match self.diagonal {
            DiagonalConfig::Zero => DiagonalPolicy::Zero,
            DiagonalConfig::NearestNeighbor { scale } => {
                DiagonalPolicy::nearest_neighbor(scale).map_err(config)?
            }
            DiagonalConfig::Calibrated => {
                DiagonalPolicy::calibrated(&kernel, min_nodes.max(16)).map_err(config)?
            }
        };

        let mut constraints = Vec::with_capacity(cond.len());
        for (i, p) in self.plates.iter().enumerate() {
            let n = cond.plate(i).len();
            let gauge = match &p.gauge {
                GaugeConfig::AllOnes => vec![1.0; n],
                GaugeConfig::File { path } => read_column(path, n)?,
            };
            let caps = match &p.constraint {
                ConstraintConfig::Unbounded => Caps::Unbounded,
                ConstraintConfig::UniformCap { total } => Caps::Finite(vec![total / n as f64; n]),
                ConstraintConfig::ScaledEquilibrium { factor } => Caps::Finite(scaled_equilibrium(
                    &kernel,
                    cond.plate(i).nodes(),
                    diag,
                    &self.solver,
                    factor * p.mass,
                )?),
                ConstraintConfig::ExplicitFile { path } => Caps::Finite(read_column(path, n)?),
            };
            constraints.push(PlateConstraint { caps, mass: p.mass, gauge });
        }
        let field = match &self.field {
            FieldConfig::Zero => ExternalField::Zero,
            FieldConfig::RieszOfMeasure { path } => {
                ExternalField::RieszOf(read_signed_measure(path, self.kernel.dim)?)
            }
            FieldConfig::NodeGridFile { path } => {
                ExternalField::NodeGrid(read_node_grid(path, &cond.node_counts())?)
            }
        };
        let spec = ProblemSpec { plates: constraints, field };
        spec.validate(&cond).map_err(config)?;
        spec.check_feasible(&spec.field_values(&cond, &kernel, diag)?)?;
        Ok(Problem { cond, spec, kernel, diag, opts: self.solver.clone(), kkt_tol: self.kkt_tol })
    }

    /// Applies the command-line overrides shared by all subcommands.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        nodes: Option<usize>,
        tol: Option<f64>,
        max_iters: Option<usize>,
    ) {
        if let Some(s) = seed {
            self.seed = s;
            self.solver.seed = s;
        }
        if let Some(n) = nodes {
            for p in &mut self.plates {
                p.nodes = n;
            }
        }
        if let Some(t) = tol {
            self.solver.grad_tol = t;
        }
        if let Some(m) = max_iters {
            self.solver.max_iters = m;
        }
    }
}

impl PlateConfig {
    fn sample(&self, default_seed: u64, dim: usize) -> riesz_core::Result<Points> {
        let seed = self.seed.unwrap_or(default_seed);
        let pts = match &self.shape {
            ShapeConfig::Sphere { center, radius } => sample_sphere(center, *radius, self.nodes, seed)?,
            ShapeConfig::RevolutionSurface { r_exponent, x1_min, x1_max } => {
                sample_revolution_surface(*r_exponent, *x1_min, *x1_max, self.nodes)?
            }
            ShapeConfig::PointCloud { path } => {
                let pts = read_point_cloud(path)?;
                if pts.len() != self.nodes {
                    return Err(riesz_core::Error::ShapeMismatch(format!(
                        "{} holds {} nodes but the plate declares {}",
                        path.display(),
                        pts.len(),
                        self.nodes
                    )));
                }
                pts
            }
        };
        if pts.dim() != dim {
            return Err(riesz_core::Error::DimensionMismatch { expected: dim, found: pts.dim() });
        }
        Ok(pts)
    }
}

fn config(e: riesz_core::Error) -> CliError {
    match e {
        riesz_core::Error::Infeasible { .. } => CliError::Core(e),
        other => CliError::Config(other.to_string()),
    }
}

fn at_plate(i: usize, e: riesz_core::Error) -> CliError {
    CliError::Config(format!("plate {i}: {e}"))
}

/// `total` times the discrete capacitary measure on `nodes`. Weights that
/// vanish in the capacity solve get a tiny positive cap.
pub fn scaled_equilibrium(
    kernel: &RieszKernel,
    nodes: &Points,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
    total: f64,
) -> Result<Vec<f64>> {
    let (rep, _) = capacity_report(kernel, nodes, diag, opts)?;
    if !rep.converged {
        return Err(CliError::NotCertified(format!(
            "capacity solve for equilibrium caps did not converge (KKT {:e})",
            rep.kkt_max_violation
        )));
    }
    let floor = 1e-12 / nodes.len() as f64;
    Ok(rep.minimizer.plate(0).iter().map(|w| total * w.max(floor)).collect())
}

fn read_column(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(n);
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            CliError::Config(format!("{}:{}: not a number: {line}", path.display(), line_no + 1))
        })?;
        out.push(v);
    }
    if out.len() != n {
        return Err(CliError::Config(format!(
            "{}: expected {n} values, found {}",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

fn read_signed_measure(path: &Path, dim: usize) -> Result<SignedDiscreteMeasure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                CliError::Config(format!("{}:{}: not a number", path.display(), line_no + 1))
            })?;
        if vals.len() != dim + 1 {
            return Err(CliError::Config(format!(
                "{}:{}: expected {} columns (coordinates and weight), found {}",
                path.display(),
                line_no + 1,
                dim + 1,
                vals.len()
            )));
        }
        coords.extend_from_slice(&vals[..dim]);
        weights.push(vals[dim]);
    }
    let pts = Points::new(dim, coords).map_err(config)?;
    SignedDiscreteMeasure::new(pts, weights).map_err(config)
}

fn read_node_grid(path: &Path, counts: &[usize]) -> Result<Vec<Vec<f64>>> {
    #[derive(Deserialize)]
    struct Row {
        plate: usize,
        node_index: usize,
        value: f64,
    }
    let mut grid: Vec<Vec<f64>> = counts.iter().map(|&n| vec![0.0; n]).collect();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for (k, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let slot = grid
            .get_mut(row.plate)
            .and_then(|g| g.get_mut(row.node_index))
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{}: record {}: no node {} on plate {}",
                    path.display(),
                    k + 1,
                    row.node_index,
                    row.plate
                ))
            })?;
        *slot = row.value;
    }
    Ok(grid)
}

/// A fully resolved problem.
pub struct Problem {
    pub cond: Condenser,
    pub spec: ProblemSpec,
    pub kernel: RieszKernel,
    pub diag: DiagonalPolicy,
    pub opts: SolveOptions,
    pub kkt_tol: f64,
}

/// A solve together with its independent certification.
pub struct Outcome {
    pub report: SolveReport,
    pub kkt: KktReport,
    pub seconds: f64,
}

impl Outcome {
    pub fn certified(&self) -> bool {
        self.report.converged && self.kkt.pass
    }
}

impl Problem {
    pub fn operator(&self) -> Result<EnergyOperator> {
        Ok(EnergyOperator::new(&self.cond, &self.kernel, self.diag)?)
    }

    pub fn solve(&self) -> Result<Outcome> {
        let op = self.operator()?;
        self.solve_on(&op)
    }

    /// Solves on a prebuilt operator for this problem's condenser.
    pub fn solve_on(&self, op: &EnergyOperator) -> Result<Outcome> {
        self.spec.validate(&self.cond)?;
        let start = Instant::now();
        let report = solve_with(op, &self.spec, &self.opts)?;
        let seconds = start.elapsed().as_secs_f64();
        let kkt = kkt_check(&self.cond, &self.spec, &report.minimizer, &self.kernel, self.diag, self.kkt_tol)?;
        Ok(Outcome { report, kkt, seconds })
    }
}
