use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riesz_cli::config::RunConfig;
use riesz_cli::error::{CliError, Result};
use riesz_cli::experiments::{run_experiment, ExperimentName, Overrides};
use riesz_cli::report::{read_weights, write_json, write_weights, SolveSummary};
use riesz_core::geometry::{read_point_cloud, sample_sphere};
use riesz_core::kelvin::kelvin_transform;
use riesz_core::kernel::{DiagonalPolicy, DiscreteMeasure, RieszKernel, SignedDiscreteMeasure, WeightedNodes};
use riesz_core::solver::{balayage, capacity_report, SolveOptions};
use riesz_core::verify::kkt_check;
use riesz_core::Points;

#[derive(Parser)]
#[command(name = "riesz", version, about = "Discrete constrained minimum Riesz energy problems")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Node count per plate.
    #[arg(long, global = true)]
    nodes: Option<usize>,
    /// Relative KKT tolerance at which the solver stops.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long = "max-iters", global = true)]
    max_iters: Option<usize>,
}

impl Global {
    fn solver(&self) -> SolveOptions {
        let mut o = SolveOptions::default();
        if let Some(s) = self.seed {
            o.seed = s;
        }
        if let Some(t) = self.tol {
            o.grad_tol = t;
        }
        if let Some(m) = self.max_iters {
            o.max_iters = m;
        }
        o
    }

    fn out_dir(&self, fallback: Option<&Path>) -> PathBuf {
        self.out.clone().or_else(|| fallback.map(Path::to_path_buf)).unwrap_or_else(|| "out".into())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described by a config file.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a named experiment.
    Experiment {
        /// zu, short_circuit, touching_balls, cusp_surfaces, duality, continuity or capacity_sweep.
        name: String,
        /// TOML file of experiment parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parameter override, `key=value`; lists are comma-separated.
        #[arg(long = "param")]
        params: Vec<String>,
    },
    /// Discrete capacity of a sphere or a point cloud.
    Capacity {
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0,0")]
        center: Vec<f64>,
        /// Point cloud file used instead of a sampled sphere.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Sweep a point mass onto a sphere.
    Balayage {
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        source: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0,0")]
        center: Vec<f64>,
    },
    /// Kelvin transform of a signed measure file (`x1 .. xn weight` per line).
    Kelvin {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        center: Vec<f64>,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
    },
    /// Certify a weight table against the problem of a config file.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("RIESZ_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: RIESZ_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(4);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    match cli.command {
        Command::Solve { config } => solve(&g, &config),
        Command::Experiment { name, config, params } => {
            let name: ExperimentName = name.parse()?;
            let mut overrides = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    Overrides::from_toml(&text, &path.display().to_string())?
                }
                None => Overrides::default(),
            };
            if let Some(s) = g.seed {
                overrides.set("seed", s);
            }
            if let Some(n) = g.nodes {
                overrides.set("nodes", n);
            }
            if let Some(t) = g.tol {
                overrides.set("grad_tol", t);
            }
            if let Some(m) = g.max_iters {
                overrides.set("max_iters", m);
            }
            let overrides = overrides.merge(Overrides::parse(&params)?);
            let out = g.out_dir(None);
            let ok = run_experiment(name, overrides, &out)?;
            println!("{}: {} (tables in {})", name.as_str(), if ok { "ok" } else { "failed" }, out.display());
            Ok(ok)
        }
        Command::Capacity { alpha, radius, center, points } => {
            let dim = center.len();
            let kernel = RieszKernel::new(alpha, dim).map_err(config_err)?;
            let nodes = match &points {
                Some(p) => read_point_cloud(p).map_err(config_err)?,
                None => sample_sphere(&center, radius, g.nodes.unwrap_or(1000), g.seed.unwrap_or(42))
                    .map_err(config_err)?,
            };
            let diag = DiagonalPolicy::calibrated(&kernel, nodes.len().max(16)).map_err(config_err)?;
            let (rep, c) = capacity_report(&kernel, &nodes, diag, &g.solver())?;
            println!("capacity {c}");
            println!("energy {} iterations {} converged {}", rep.energy, rep.iterations, rep.converged);
            if let Some(out) = &g.out {
                std::fs::create_dir_all(out)?;
                write_measure(&out.join("equilibrium.txt"), &nodes, rep.minimizer.plate(0))?;
                write_json(
                    &out.join("capacity.json"),
                    &serde_json::json!({ "capacity": c, "energy": rep.energy, "converged": rep.converged,
                        "iterations": rep.iterations }),
                )?;
            }
            Ok(rep.converged)
        }
        Command::Balayage { alpha, source, mass, radius, center } => {
            if source.len() != center.len() {
                return Err(CliError::Config("--source and --center need the same dimension".into()));
            }
            let kernel = RieszKernel::new(alpha, center.len()).map_err(config_err)?;
            let target = sample_sphere(&center, radius, g.nodes.unwrap_or(2000), g.seed.unwrap_or(42))
                .map_err(config_err)?;
            let diag = DiagonalPolicy::calibrated(&kernel, target.len().max(16)).map_err(config_err)?;
            let zeta = DiscreteMeasure::dirac(&source, mass).map_err(config_err)?;
            let mut opts = g.solver();
            if g.tol.is_none() {
                opts.grad_tol = 1e-8;
            }
            let swept = balayage(&kernel, &zeta, &target, diag, &opts)?;
            println!("swept mass {}", swept.total_mass());
            if let Some(out) = &g.out {
                std::fs::create_dir_all(out)?;
                write_measure(&out.join("balayage.txt"), swept.points(), swept.weights())?;
            }
            Ok(true)
        }
        Command::Kelvin { input, center, alpha } => {
            let dim = center.len();
            let kernel = RieszKernel::new(alpha, dim).map_err(config_err)?;
            let mu = read_measure(&input, dim)?;
            let t = kelvin_transform(&mu, &center, &kernel)?;
            match &g.out {
                Some(out) => {
                    std::fs::create_dir_all(out)?;
                    write_measure(&out.join("kelvin.txt"), t.points(), t.weights())?;
                }
                None => print!("{}", format_measure(t.points(), t.weights())),
            }
            Ok(true)
        }
        Command::Verify { config, weights } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_overrides(g.seed, g.nodes, g.tol, g.max_iters);
            let problem = cfg.resolve()?;
            let mu = read_weights(&weights, &problem.cond)?;
            let kkt = kkt_check(&problem.cond, &problem.spec, &mu, &problem.kernel, problem.diag, cfg.kkt_tol)?;
            println!(
                "kkt {} (max violation {:e}, scale {:e}, tol {:e}); variational {}",
                if kkt.pass { "pass" } else { "fail" },
                kkt.max_violation(),
                kkt.scale,
                kkt.tol,
                if kkt.variational_pass { "pass" } else { "fail" }
            );
            Ok(kkt.pass)
        }
    }
}

fn solve(g: &Global, path: &Path) -> Result<bool> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_overrides(g.seed, g.nodes, g.tol, g.max_iters);
    let problem = cfg.resolve()?;
    let outcome = problem.solve()?;
    let out = g.out_dir(cfg.output_dir.as_deref());
    std::fs::create_dir_all(&out)?;
    write_weights(&out.join("weights.csv"), &problem.cond, &problem.spec, &outcome.report.minimizer)?;
    let summary = SolveSummary::new(&problem.cond, &outcome);
    write_json(&out.join("report.json"), &summary)?;
    println!(
        "energy {} iterations {} converged {} kkt {} ({:.2}s)",
        summary.energy,
        summary.iterations,
        summary.converged,
        if summary.kkt_pass { "pass" } else { "fail" },
        summary.seconds
    );
    Ok(outcome.certified())
}

fn config_err(e: riesz_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn format_measure(points: &Points, weights: &[f64]) -> String {
    let mut s = String::new();
    for (x, w) in points.iter().zip(weights) {
        let cols: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!("{} {w}\n", cols.join(" ")));
    }
    s
}

fn write_measure(path: &Path, points: &Points, weights: &[f64]) -> Result<()> {
    std::fs::write(path, format_measure(points, weights))?;
    Ok(())
}

fn read_measure(path: &Path, dim: usize) -> Result<SignedDiscreteMeasure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::Config(format!("{}:{}: not a number", path.display(), k + 1)))?;
        if vals.len() != dim + 1 {
            return Err(CliError::Config(format!(
                "{}:{}: expected {} columns, found {}",
                path.display(),
                k + 1,
                dim + 1,
                vals.len()
            )));
        }
        coords.extend_from_slice(&vals[..dim]);
        weights.push(vals[dim]);
    }
    let pts = Points::new(dim, coords).map_err(config_err)?;
    SignedDiscreteMeasure::new(pts, weights).map_err(config_err)
}
