//! Named experiments. Each one has a parameter struct with defaults that
//! `--param key=value` overrides, a library entry point returning structured
//! results, and a writer producing a table and a JSON summary.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use riesz_core::geometry::{sample_revolution_surface, sample_sphere, Condenser, Plate, Sign};
use riesz_core::kernel::{DiagonalPolicy, DiscreteMeasure, RieszKernel};
use riesz_core::measures::{Caps, ExternalField, PlateConstraint, ProblemSpec};
use riesz_core::solver::{capacity_report, SolveOptions};
use riesz_core::verify::{continuity_check, duality_check, ContinuityReport, DualityReport};
use riesz_core::Points;

use crate::config::{scaled_equilibrium, Outcome, Problem};
use crate::error::{CliError, Result};
use crate::report::{write_json, write_xy, SolveSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Zu,
    ShortCircuit,
    TouchingBalls,
    CuspSurfaces,
    Duality,
    Continuity,
    CapacitySweep,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 7] = [
        Self::Zu,
        Self::ShortCircuit,
        Self::TouchingBalls,
        Self::CuspSurfaces,
        Self::Duality,
        Self::Continuity,
        Self::CapacitySweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zu => "zu",
            Self::ShortCircuit => "short_circuit",
            Self::TouchingBalls => "touching_balls",
            Self::CuspSurfaces => "cusp_surfaces",
            Self::Duality => "duality",
            Self::Continuity => "continuity",
            Self::CapacitySweep => "capacity_sweep",
        }
    }
}

impl FromStr for ExperimentName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|n| n.as_str()).collect();
            CliError::Config(format!("unknown experiment '{s}'; expected one of {}", names.join(", ")))
        })
    }
}

/// `key=value` overrides. Every key must be consumed by the experiment.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    values: BTreeMap<String, String>,
}

impl Overrides {
    pub fn parse(pairs: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--param expects key=value, got '{p}'")))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Reads a flat TOML table; arrays become comma-separated lists.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        let mut values = BTreeMap::new();
        for (k, v) in table {
            let s = match v {
                toml::Value::String(s) => s,
                toml::Value::Array(items) => items
                    .iter()
                    .map(|x| match x {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            values.insert(k, s);
        }
        Ok(Self { values })
    }

    /// Entries of `other` replace those here.
    pub fn merge(mut self, other: Overrides) -> Self {
        self.values.extend(other.values);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.values.remove(key) {
            *slot = v
                .parse()
                .map_err(|_| CliError::Config(format!("parameter {key}: cannot parse '{v}'")))?;
        }
        Ok(())
    }

    fn take_list<T: FromStr>(&mut self, key: &str, slot: &mut Vec<T>) -> Result<()> {
        if let Some(v) = self.values.remove(key) {
            let items: std::result::Result<Vec<T>, _> =
                v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect();
            *slot = items
                .map_err(|_| CliError::Config(format!("parameter {key}: cannot parse list '{v}'")))?;
        }
        Ok(())
    }

    fn finish(self, experiment: &str) -> Result<()> {
        if let Some(k) = self.values.keys().next() {
            return Err(CliError::Config(format!("experiment {experiment} has no parameter '{k}'")));
        }
        Ok(())
    }
}

/// Settings shared by every experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Common {
    pub seed: u64,
    pub solver: SolveOptions,
    /// Relative tolerance of the KKT certification.
    pub kkt_tol: f64,
}

impl Default for Common {
    fn default() -> Self {
        Self { seed: riesz_core::geometry::DEFAULT_SEED, solver: SolveOptions::default(), kkt_tol: 1e-6 }
    }
}

impl Common {
    fn take(&mut self, o: &mut Overrides) -> Result<()> {
        o.take("seed", &mut self.seed)?;
        o.take("grad_tol", &mut self.solver.grad_tol)?;
        o.take("max_iters", &mut self.solver.max_iters)?;
        o.take("restart_count", &mut self.solver.restart_count)?;
        o.take("kkt_tol", &mut self.kkt_tol)?;
        self.solver.seed = self.seed;
        self.solver.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

fn sphere_plate(center: &[f64], r: f64, sign: Sign, n: usize, seed: u64) -> Result<Plate> {
    Ok(Plate::new(sign, sample_sphere(center, r, n, seed)?)?)
}

fn calibrated(kernel: &RieszKernel, nodes: usize) -> Result<DiagonalPolicy> {
    Ok(DiagonalPolicy::calibrated(kernel, nodes.max(16))?)
}

fn summary_json(problem: &Problem, out: &Outcome) -> serde_json::Value {
    serde_json::to_value(SolveSummary::new(&problem.cond, out)).expect("summary serializes")
}

// ---------------------------------------------------------------- zu

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZuParams {
    pub r1: f64,
    pub r2: f64,
    pub nodes: Vec<usize>,
    /// When set, both plates get uniform caps of total `cap_total`.
    pub cap_total: Option<f64>,
    pub common: Common,
}

impl Default for ZuParams {
    fn default() -> Self {
        Self { r1: 1.0, r2: 2.0, nodes: vec![250, 500, 1000, 2000], cap_total: None, common: Common::default() }
    }
}

impl ZuParams {
    pub fn from_overrides(mut o: Overrides) -> Result<Self> {
        let mut p = Self::default();
        o.take("r1", &mut p.r1)?;
        o.take("r2", &mut p.r2)?;
        o.take_list("nodes", &mut p.nodes)?;
        let mut cap = f64::NAN;
        o.take("cap_total", &mut cap)?;
        if !cap.is_nan() {
            p.cap_total = Some(cap);
        }
        p.common.take(&mut o)?;
        o.finish("zu")?;
        if !(0.0 < p.r1 && p.r1 < p.r2) {
            return Err(CliError::Config(format!("zu needs 0 < r1 < r2, got {} and {}", p.r1, p.r2)));
        }
        Ok(p)
    }
}

/// Concentric spheres S_{r1} (+) and S_{r2} (−), unit masses, Newtonian kernel.
pub fn zu_problem(r1: f64, r2: f64, n: usize, cap_total: Option<f64>, common: &Common) -> Result<Problem> {
    let kernel = RieszKernel::newtonian(3)?;
    let cond = Condenser::new(vec![
        sphere_plate(&[0.0; 3], r1, Sign::Positive, n, common.seed)?,
        sphere_plate(&[0.0; 3], r2, Sign::Negative, n, common.seed.wrapping_add(1))?,
    ])?;
    let spec = match cap_total {
        None => ProblemSpec::unconstrained(&cond, &[1.0, 1.0]),
        Some(t) => ProblemSpec::constrained(&cond, &[1.0, 1.0], vec![vec![t / n as f64; n]; 2]),
    };
    Ok(Problem {
        diag: calibrated(&kernel, n)?,
        cond,
        spec,
        kernel,
        opts: common.solver.clone(),
        kkt_tol: common.kkt_tol,
    })
}

pub struct ZuRow {
    pub nodes: usize,
    pub problem: Problem,
    pub outcome: Outcome,
}

pub fn zu(p: &ZuParams) -> Result<Vec<ZuRow>> {
    p.nodes
        .iter()
        .map(|&n| {
            let problem = zu_problem(p.r1, p.r2, n, p.cap_total, &p.common)?;
            let outcome = problem.solve()?;
            Ok(ZuRow { nodes: n, problem, outcome })
        })
        .collect()
}

// ---------------------------------------------------------------- short_circuit

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShortCircuitParams {
    pub q: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub nodes: usize,
    /// Also solve the joint problem over all pairs.
    pub joint: bool,
    pub common: Common,
}

impl Default for ShortCircuitParams {
    fn default() -> Self {
        Self { q: 1.0, k_min: 2, k_max: 8, nodes: 400, joint: true, common: Common::default() }
    }
}

impl ShortCircuitParams {
    pub fn from_overrides(mut o: Overrides) -> Result<Self> {
        let mut p = Self::default();
        o.take("q", &mut p.q)?;
        o.take("k_min", &mut p.k_min)?;
        o.take("k_max", &mut p.k_max)?;
        o.take("nodes", &mut p.nodes)?;
        o.take("joint", &mut p.joint)?;
        p.common.take(&mut o)?;
        o.finish("short_circuit")?;
        if !(p.q > 0.0 && p.k_min >= 2 && p.k_max >= p.k_min) {
            return Err(CliError::Config("short_circuit needs q > 0 and 2 <= k_min <= k_max".into()));
        }
        Ok(p)
    }
}

/// Radii (inner, outer) of pair k: r^{2−n} equal to k² + k^{−q} and k².
pub fn short_circuit_radii(k: usize, q: f64) -> (f64, f64) {
    let k = k as f64;
    (1.0 / (k * k + k.powf(-q)), 1.0 / (k * k))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairResult {
    pub k: usize,
    pub expected: f64,
    /// NaN when the solve failed; see `error`.
    pub energy: f64,
    pub converged: bool,
    pub min_cross_sign_distance: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointRow {
    pub k: usize,
    pub inner_mass: f64,
    pub outer_mass: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShortCircuitResult {
    pub pairs: Vec<PairResult>,
    pub joint_energy: Option<f64>,
    pub joint: Vec<JointRow>,
}

fn pair_condenser(k: usize, p: &ShortCircuitParams) -> Result<Condenser> {
    let (ri, ro) = short_circuit_radii(k, p.q);
    let center = [k as f64, 0.0, 0.0];
    let seed = p.common.seed.wrapping_add(2 * k as u64);
    Ok(Condenser::new(vec![
        sphere_plate(&center, ri, Sign::Positive, p.nodes, seed)?,
        sphere_plate(&center, ro, Sign::Negative, p.nodes, seed + 1)?,
    ])?)
}

pub fn short_circuit(p: &ShortCircuitParams) -> Result<ShortCircuitResult> {
    let kernel = RieszKernel::newtonian(3)?;
    let diag = calibrated(&kernel, p.nodes)?;
    let pairs: Vec<PairResult> = (p.k_min..=p.k_max)
        .into_par_iter()
        .map(|k| {
            let expected = (k as f64).powf(-p.q);
            let run = || -> Result<_> {
                let cond = pair_condenser(k, p)?;
                let problem = Problem {
                    spec: ProblemSpec::unconstrained(&cond, &[1.0, 1.0]),
                    cond,
                    kernel,
                    diag,
                    opts: p.common.solver.clone(),
                    kkt_tol: p.common.kkt_tol,
                };
                problem.solve()
            };
            match run() {
                Ok(out) => PairResult {
                    k,
                    expected,
                    energy: out.report.energy,
                    converged: out.report.converged,
                    min_cross_sign_distance: out.report.min_cross_sign_distance,
                    error: None,
                },
                Err(e) => PairResult {
                    k,
                    expected,
                    energy: f64::NAN,
                    converged: false,
                    min_cross_sign_distance: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut joint = Vec::new();
    let mut joint_energy = None;
    if p.joint {
        let mut inner = Vec::new();
        let mut outer = Vec::new();
        for k in p.k_min..=p.k_max {
            let cond = pair_condenser(k, p)?;
            inner.extend_from_slice(cond.plate(0).nodes().coords());
            outer.extend_from_slice(cond.plate(1).nodes().coords());
        }
        let cond = Condenser::new(vec![
            Plate::new(Sign::Positive, Points::new(3, inner)?)?,
            Plate::new(Sign::Negative, Points::new(3, outer)?)?,
        ])?;
        let problem = Problem {
            spec: ProblemSpec::unconstrained(&cond, &[1.0, 1.0]),
            cond,
            kernel,
            diag,
            opts: p.common.solver.clone(),
            kkt_tol: p.common.kkt_tol,
        };
        match problem.solve() {
            Ok(out) => {
                joint_energy = Some(out.report.energy);
                for (idx, k) in (p.k_min..=p.k_max).enumerate() {
                    let range = idx * p.nodes..(idx + 1) * p.nodes;
                    joint.push(JointRow {
                        k,
                        inner_mass: out.report.minimizer.plate(0)[range.clone()].iter().sum(),
                        outer_mass: out.report.minimizer.plate(1)[range].iter().sum(),
                    });
                }
            }
            Err(CliError::Core(e @ riesz_core::Error::ShortCircuit { .. })) => {
                eprintln!("joint problem: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ShortCircuitResult { pairs, joint_energy, joint })
}

// ---------------------------------------------------------------- touching_balls

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TouchingBallsParams {
    pub alpha: f64,
    pub nodes: usize,
    /// Caps are `factor · a_i` times the capacitary measure of each plate.
    pub factor: f64,
    pub masses: Vec<f64>,
    pub common: Common,
}

impl Default for TouchingBallsParams {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            nodes: 400,
            factor: 1.5,
            masses: vec![1.0; 4],
            common: Common { kkt_tol: 1e-2, ..Common::default() },
        }
    }
}

impl TouchingBallsParams {
    pub fn from_overrides(mut o: Overrides) -> Result<Self> {
        let mut p = Self::default();
        o.take("alpha", &mut p.alpha)?;
        o.take("nodes", &mut p.nodes)?;
        o.take("factor", &mut p.factor)?;
        o.take_list("masses", &mut p.masses)?;
        p.common.take(&mut o)?;
        o.finish("touching_balls")?;
        if p.masses.len() != 4 {
            return Err(CliError::Config("touching_balls needs 4 masses".into()));
        }
        if !(p.factor > 1.0) {
            return Err(CliError::Config("touching_balls needs factor > 1".into()));
        }
        Ok(p)
    }
}

/// Four balls: B(0,1) positive; B((2,0,0),1), B((3,0,0),2), B((−2,0,0),1)
/// negative. Each ball is represented by its boundary sphere.
pub fn touching_balls_problem(p: &TouchingBallsParams) -> Result<Problem> {
    let kernel = RieszKernel::new(p.alpha, 3)?;
    let diag = calibrated(&kernel, p.nodes)?;
    let balls = [
        ([0.0, 0.0, 0.0], 1.0, Sign::Positive),
        ([2.0, 0.0, 0.0], 1.0, Sign::Negative),
        ([3.0, 0.0, 0.0], 2.0, Sign::Negative),
        ([-2.0, 0.0, 0.0], 1.0, Sign::Negative),
    ];
    let plates = balls
        .iter()
        .enumerate()
        .map(|(i, (c, r, s))| sphere_plate(c, *r, *s, p.nodes, p.common.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let cond = Condenser::new(plates)?;
    let mut constraints = Vec::with_capacity(4);
    for (i, plate) in cond.plates().iter().enumerate() {
        let caps = scaled_equilibrium(&kernel, plate.nodes(), diag, &p.common.solver, p.factor * p.masses[i])?;
        constraints.push(PlateConstraint {
            caps: Caps::Finite(caps),
            mass: p.masses[i],
            gauge: vec![1.0; plate.len()],
        });
    }
    let spec = ProblemSpec { plates: constraints, field: ExternalField::Zero };
    Ok(Problem { cond, spec, kernel, diag, opts: p.common.solver.clone(), kkt_tol: p.common.kkt_tol })
}

// ---------------------------------------------------------------- cusp_surfaces

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CuspParams {
    pub r1: f64,
    pub r2: f64,
    pub x1_max: Vec<f64>,
    pub nodes: usize,
    pub factor: f64,
    pub common: Common,
}

impl Default for CuspParams {
    fn default() -> Self {
        Self {
            r1: 1.5,
            r2: 2.0,
            x1_max: vec![3.0, 4.0, 5.0, 6.0],
            nodes: 400,
            factor: 1.5,
            common: Common { kkt_tol: 1e-2, ..Common::default() },
        }
    }
}

impl CuspParams {
    pub fn from_overrides(mut o: Overrides) -> Result<Self> {
        let mut p = Self::default();
        o.take("r1", &mut p.r1)?;
        o.take("r2", &mut p.r2)?;
        o.take_list("x1_max", &mut p.x1_max)?;
        o.take("nodes", &mut p.nodes)?;
        o.take("factor", &mut p.factor)?;
        p.common.take(&mut o)?;
        o.finish("cusp_surfaces")?;
        if !(1.0 < p.r1 && p.r1 < p.r2) {
            return Err(CliError::Config("cusp_surfaces needs 1 < r1 < r2".into()));
        }
        if p.x1_max.iter().any(|&x| x <= 2.0) {
            return Err(CliError::Config("cusp_surfaces needs every x1_max > 2".into()));
        }
        if !(p.factor > 1.0) {
            return Err(CliError::Config("cusp_surfaces needs factor > 1".into()));
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CuspRow {
    pub x1_max: f64,
    pub energy: f64,
    pub converged: bool,
    pub kkt_pass: bool,
    pub min_cross_sign_distance: f64,
    /// Share of each plate's mass on nodes with x1 > x1_max − 1.
    pub tail_mass: Vec<f64>,
}

/// Truncated cusp condenser: A_1 from x1 = 1 with exponent r1 (positive),
/// A_2 from x1 = 2 with exponent r2 (negative), both cut at `x1_max`.
pub fn cusp_problem(p: &CuspParams, x1_max: f64) -> Result<Problem> {
    let kernel = RieszKernel::newtonian(3)?;
    let diag = calibrated(&kernel, p.nodes)?;
    let cond = Condenser::new(vec![
        Plate::new(Sign::Positive, sample_revolution_surface(p.r1, 1.0, x1_max, p.nodes)?)?,
        Plate::new(Sign::Negative, sample_revolution_surface(p.r2, 2.0, x1_max, p.nodes)?)?,
    ])?;
    let mut constraints = Vec::with_capacity(2);
    for plate in cond.plates() {
        let caps = scaled_equilibrium(&kernel, plate.nodes(), diag, &p.common.solver, p.factor)?;
        constraints.push(PlateConstraint { caps: Caps::Finite(caps), mass: 1.0, gauge: vec![1.0; plate.len()] });
    }
    let spec = ProblemSpec { plates: constraints, field: ExternalField::Zero };
    Ok(Problem { cond, spec, kernel, diag, opts: p.common.solver.clone(), kkt_tol: p.common.kkt_tol })
}

pub fn cusp_surfaces(p: &CuspParams) -> Result<Vec<CuspRow>> {
    p.x1_max
        .iter()
        .map(|&x| {
            let problem = cusp_problem(p, x)?;
            let out = problem.solve()?;
            let tail_mass = problem
                .cond
                .plates()
                .iter()
                .zip(out.report.minimizer.blocks())
                .map(|(pl, w)| {
                    pl.nodes().iter().zip(w).filter(|(y, _)| y[0] > x - 1.0).map(|(_, v)| v).sum()
                })
                .collect();
            Ok(CuspRow {
                x1_max: x,
                energy: out.report.energy,
                converged: out.report.converged,
                kkt_pass: out.kkt.pass,
                min_cross_sign_distance: out.report.min_cross_sign_distance,
                tail_mass,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- duality

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualityParams {
    pub alpha: f64,
    pub nodes: usize,
    /// σ is this multiple of the uniform unit measure on S(0, 1).
    pub sigma_mass: f64,
    pub common: Common,
}

impl Default for DualityParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            nodes: 1000,
            sigma_mass: 2.0,
            common: Common { kkt_tol: 1e-2, ..Common::default() },
        }
    }
}

impl DualityParams {
    pub fn from_overrides(mut o: Overrides) -> Result<Self> {
        let mut p = Self::default();
        o.take("alpha", &mut p.alpha)?;
        o.take("nodes", &mut p.nodes)?;
        o.take("sigma_mass", &mut p.sigma_mass)?;
        p.common.take(&mut o)?;
        o.finish("duality")?;
        Ok(p)
    }
}

pub fn duality(p: &DualityParams) -> Result<DualityReport> {
    let kernel = RieszKernel::new(p.alpha, 3)?;
    let diag = calibrated(&kernel, p.nodes)?;
    let f = sample_sphere(&[0.0; 3], 1.0, p.nodes, p.common.seed)?;
    let sigma = DiscreteMeasure::uniform(f.clone(), p.sigma_mass)?;
    Ok(duality_check(&f, &sigma, &kernel, diag, &p.common.solver, p.common.kkt_tol)?)
}

// ---------------------------------------------------------------- continuity

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityParams {
    pub r1: f64,
    pub r2: f64,
    pub nodes: usize,
    pub levels: usize,
    /// σ(A_i) of the limiting constraint.
    pub cap_total: f64,
    /// Caps are proportional to 1 + tilt · x3 / r.
    pub tilt: f64,
    pub common: Common,
}

impl Default for ContinuityParams {
    fn default() -> Self {
        Self { r1: 1.0, r2: 2.0, nodes: 2000, levels: 6, cap_total: 1.2, tilt: 0.5, common: Common::default() }
    }
}

impl ContinuityParams {
    pub fn from_overrides(mut o: Overrides) -> Result<Self> {
        let mut p = Self::default();
        o.take("r1", &mut p.r1)?;
        o.take("r2", &mut p.r2)?;
        o.take("nodes", &mut p.nodes)?;
        o.take("levels", &mut p.levels)?;
        o.take("cap_total", &mut p.cap_total)?;
        o.take("tilt", &mut p.tilt)?;
        p.common.take(&mut o)?;
        o.finish("continuity")?;
        if !(p.cap_total >= 1.0 && p.tilt.abs() < 1.0 && p.levels >= 1) {
            return Err(CliError::Config(
                "continuity needs cap_total >= 1, |tilt| < 1 and at least one level".into(),
            ));
        }
        Ok(p)
    }
}

/// The zu condenser with the chain σ_ℓ = (1 + 2^{−ℓ}) σ, ℓ = 1..levels, and σ.
pub fn continuity(p: &ContinuityParams) -> Result<ContinuityReport> {
    let base = zu_problem(p.r1, p.r2, p.nodes, None, &p.common)?;
    let sigma: Vec<Vec<f64>> = base
        .cond
        .plates()
        .iter()
        .zip([p.r1, p.r2])
        .map(|(pl, r)| {
            let raw: Vec<f64> = pl.nodes().iter().map(|x| 1.0 + p.tilt * x[2] / r).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| p.cap_total * v / s).collect()
        })
        .collect();
    let level = |factor: f64| {
        ProblemSpec::constrained(
            &base.cond,
            &[1.0, 1.0],
            sigma.iter().map(|c| c.iter().map(|v| factor * v).collect()).collect(),
        )
    };
    let levels: Vec<ProblemSpec> = (1..=p.levels).map(|l| level(1.0 + 0.5f64.powi(l as i32))).collect();
    Ok(continuity_check(&base.cond, &levels, &level(1.0), &base.kernel, base.diag, &p.common.solver)?)
}

// ---------------------------------------------------------------- capacity_sweep

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacitySweepParams {
    pub alpha: f64,
    pub radii: Vec<f64>,
    pub nodes: usize,
    pub common: Common,
}

impl Default for CapacitySweepParams {
    fn default() -> Self {
        Self { alpha: 2.0, radii: vec![1.0, 2.0, 4.0], nodes: 4000, common: Common::default() }
    }
}

impl CapacitySweepParams {
    pub fn from_overrides(mut o: Overrides) -> Result<Self> {
        let mut p = Self::default();
        o.take("alpha", &mut p.alpha)?;
        o.take_list("radii", &mut p.radii)?;
        o.take("nodes", &mut p.nodes)?;
        p.common.take(&mut o)?;
        o.finish("capacity_sweep")?;
        Ok(p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacityRow {
    pub radius: f64,
    pub capacity: f64,
    /// r^{n−2}; only meaningful for α = 2.
    pub newtonian: f64,
    pub converged: bool,
    pub seconds: f64,
}

pub fn capacity_sweep(p: &CapacitySweepParams) -> Result<Vec<CapacityRow>> {
    let kernel = RieszKernel::new(p.alpha, 3)?;
    let diag = calibrated(&kernel, p.nodes)?;
    p.radii
        .iter()
        .map(|&r| {
            let nodes = sample_sphere(&[0.0; 3], r, p.nodes, p.common.seed)?;
            let start = Instant::now();
            let (rep, c) = capacity_report(&kernel, &nodes, diag, &p.common.solver)?;
            Ok(CapacityRow {
                radius: r,
                capacity: c,
                newtonian: r,
                converged: rep.converged,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- dispatch

/// Runs `name`, writes `<name>.dat` and `<name>.json` into `out`, and
/// returns whether the run met its own success condition.
pub fn run_experiment(name: ExperimentName, overrides: Overrides, out: &Path) -> Result<bool> {
    std::fs::create_dir_all(out)?;
    let dat = out.join(format!("{}.dat", name.as_str()));
    let json = out.join(format!("{}.json", name.as_str()));
    match name {
        ExperimentName::Zu => {
            let p = ZuParams::from_overrides(overrides)?;
            let rows = zu(&p)?;
            let expected = 1.0 / p.r1 - 1.0 / p.r2;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.nodes as f64, r.outcome.report.energy, expected])
                .collect();
            write_xy(&dat, &["nodes", "energy", "expected"], &table)?;
            let runs: Vec<_> = rows.iter().map(|r| summary_json(&r.problem, &r.outcome)).collect();
            write_json(&json, &serde_json::json!({ "params": p, "expected": expected, "runs": runs }))?;
            Ok(rows.iter().all(|r| r.outcome.certified()))
        }
        ExperimentName::ShortCircuit => {
            let p = ShortCircuitParams::from_overrides(overrides)?;
            let res = short_circuit(&p)?;
            let table: Vec<Vec<f64>> = res
                .pairs
                .iter()
                .map(|r| vec![r.k as f64, r.energy, r.expected, r.energy / r.expected, r.min_cross_sign_distance])
                .collect();
            write_xy(&dat, &["k", "energy", "k^-q", "ratio", "min_cross_sign_distance"], &table)?;
            if !res.joint.is_empty() {
                let joint: Vec<Vec<f64>> =
                    res.joint.iter().map(|r| vec![r.k as f64, r.inner_mass, r.outer_mass]).collect();
                write_xy(&out.join("short_circuit_joint.dat"), &["k", "inner_mass", "outer_mass"], &joint)?;
            }
            write_json(&json, &serde_json::json!({ "params": p, "result": res }))?;
            Ok(res.pairs.iter().all(|r| r.converged))
        }
        ExperimentName::TouchingBalls => {
            let p = TouchingBallsParams::from_overrides(overrides)?;
            let problem = touching_balls_problem(&p)?;
            let outcome = problem.solve()?;
            let table: Vec<Vec<f64>> = outcome
                .report
                .minimizer
                .plate_masses()
                .iter()
                .enumerate()
                .map(|(i, m)| vec![i as f64, *m, outcome.kkt.multipliers[i]])
                .collect();
            write_xy(&dat, &["plate", "mass", "multiplier"], &table)?;
            write_json(&json, &serde_json::json!({ "params": p, "run": summary_json(&problem, &outcome) }))?;
            Ok(outcome.certified())
        }
        ExperimentName::CuspSurfaces => {
            let p = CuspParams::from_overrides(overrides)?;
            let rows = cusp_surfaces(&p)?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.x1_max, r.energy, r.min_cross_sign_distance, r.tail_mass[0], r.tail_mass[1]])
                .collect();
            write_xy(&dat, &["x1_max", "energy", "min_cross_sign_distance", "tail_mass_1", "tail_mass_2"], &table)?;
            write_json(&json, &serde_json::json!({ "params": p, "rows": rows }))?;
            Ok(rows.iter().all(|r| r.converged && r.kkt_pass))
        }
        ExperimentName::Duality => {
            let p = DualityParams::from_overrides(overrides)?;
            let rep = duality(&p)?;
            let table = vec![vec![rep.q, rep.theta_mass, rep.theta_energy, rep.direct_energy, rep.relative_gap, rep.eta]];
            write_xy(&dat, &["q", "theta_mass", "theta_energy", "direct_energy", "relative_gap", "eta"], &table)?;
            let pass = rep.kkt.pass;
            write_json(
                &json,
                &serde_json::json!({
                    "params": p,
                    "q": rep.q,
                    "theta_mass": rep.theta_mass,
                    "kkt": rep.kkt,
                    "eta": rep.eta,
                    "spread": rep.spread,
                    "theta_energy": rep.theta_energy,
                    "direct_energy": rep.direct_energy,
                    "relative_gap": rep.relative_gap,
                }),
            )?;
            Ok(pass)
        }
        ExperimentName::Continuity => {
            let p = ContinuityParams::from_overrides(overrides)?;
            let rep = continuity(&p)?;
            let table: Vec<Vec<f64>> = rep
                .energies
                .iter()
                .zip(&rep.distances_to_limit)
                .enumerate()
                .map(|(l, (e, d))| vec![(l + 1) as f64, *e, rep.limit_energy, *d])
                .collect();
            write_xy(&dat, &["level", "energy", "limit_energy", "distance_to_limit"], &table)?;
            write_json(
                &json,
                &serde_json::json!({
                    "params": p,
                    "energies": rep.energies,
                    "limit_energy": rep.limit_energy,
                    "nondecreasing": rep.nondecreasing,
                    "final_relative_gap": rep.final_relative_gap,
                    "successive_distances": rep.successive_distances,
                    "distances_to_limit": rep.distances_to_limit,
                }),
            )?;
            Ok(rep.nondecreasing)
        }
        ExperimentName::CapacitySweep => {
            let p = CapacitySweepParams::from_overrides(overrides)?;
            let rows = capacity_sweep(&p)?;
            let table: Vec<Vec<f64>> =
                rows.iter().map(|r| vec![r.radius, r.capacity, r.newtonian, r.seconds]).collect();
            write_xy(&dat, &["radius", "capacity", "r^(n-2)", "seconds"], &table)?;
            write_json(&json, &serde_json::json!({ "params": p, "rows": rows }))?;
            Ok(rows.iter().all(|r| r.converged))
        }
    }
}
