//! Output files: weight tables, JSON summaries and XY tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use riesz_core::geometry::Condenser;
use riesz_core::measures::{DiscreteVectorMeasure, ProblemSpec};

use crate::config::Outcome;
use crate::error::{CliError, Result};

/// Summary written next to the weight table of a solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSummary {
    pub energy: f64,
    pub multipliers: Vec<f64>,
    pub solver_kkt_violation: f64,
    pub kkt_scale: f64,
    pub kkt_tol: f64,
    pub below_cap_violation: Vec<f64>,
    pub support_violation: Vec<f64>,
    pub kkt_pass: bool,
    pub variational_pass: bool,
    pub iterations: usize,
    pub converged: bool,
    pub min_cross_sign_distance: f64,
    pub seconds: f64,
    pub node_counts: Vec<usize>,
    pub plate_masses: Vec<f64>,
}

impl SolveSummary {
    pub fn new(cond: &Condenser, out: &Outcome) -> Self {
        let r = &out.report;
        Self {
            energy: r.energy,
            multipliers: out.kkt.multipliers.clone(),
            solver_kkt_violation: r.kkt_max_violation,
            kkt_scale: out.kkt.scale,
            kkt_tol: out.kkt.tol,
            below_cap_violation: out.kkt.below_cap_violation.clone(),
            support_violation: out.kkt.support_violation.clone(),
            kkt_pass: out.kkt.pass,
            variational_pass: out.kkt.variational_pass,
            iterations: r.iterations,
            converged: r.converged,
            min_cross_sign_distance: r.min_cross_sign_distance,
            seconds: out.seconds,
            node_counts: cond.node_counts(),
            plate_masses: r.minimizer.plate_masses(),
        }
    }
}

/// Writes `plate,node_index,x1..xn,weight,cap`; `cap` is empty when unbounded.
pub fn write_weights(
    path: &Path,
    cond: &Condenser,
    spec: &ProblemSpec,
    mu: &DiscreteVectorMeasure,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["plate".to_string(), "node_index".to_string()];
    header.extend((1..=cond.dim()).map(|k| format!("x{k}")));
    header.extend(["weight".to_string(), "cap".to_string()]);
    w.write_record(&header)?;
    for (i, plate) in cond.plates().iter().enumerate() {
        let caps = spec.plates[i].caps.as_slice();
        for (j, x) in plate.nodes().iter().enumerate() {
            let mut rec = vec![i.to_string(), j.to_string()];
            rec.extend(x.iter().map(|c| c.to_string()));
            rec.push(mu.plate(i)[j].to_string());
            rec.push(caps.map(|c| c[j].to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a weight table written by [`write_weights`] back onto `cond`.
/// Node coordinates must match the condenser.
pub fn read_weights(path: &Path, cond: &Condenser) -> Result<DiscreteVectorMeasure> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = cond.dim();
    let mut blocks: Vec<Vec<Option<f64>>> =
        cond.node_counts().into_iter().map(|n| vec![None; n]).collect();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| CliError::Config(format!("{}: record {}: {m}", path.display(), k + 1));
        if rec.len() != dim + 4 {
            return Err(bad("wrong number of columns"));
        }
        let num = |c: usize| rec[c].parse::<f64>().map_err(|_| bad("not a number"));
        let plate: usize = rec[0].parse().map_err(|_| bad("bad plate index"))?;
        let node: usize = rec[1].parse().map_err(|_| bad("bad node index"))?;
        if plate >= cond.len() || node >= cond.plate(plate).len() {
            return Err(bad("node outside the condenser"));
        }
        let x = cond.plate(plate).nodes().get(node);
        for (c, &xc) in x.iter().enumerate() {
            let v = num(2 + c)?;
            if (v - xc).abs() > 1e-12 * (1.0 + xc.abs()) {
                return Err(bad("coordinates differ from the configured nodes"));
            }
        }
        blocks[plate][node] = Some(num(2 + dim)?);
    }
    let mut weights = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.into_iter().enumerate() {
        let w: Option<Vec<f64>> = b.into_iter().collect();
        weights.push(w.ok_or_else(|| {
            CliError::Config(format!("{}: plate {i} has missing nodes", path.display()))
        })?);
    }
    Ok(DiscreteVectorMeasure::new(cond, weights)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Whitespace-separated columns with a `#` header line.
pub fn write_xy(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# {}", columns.join(" "))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()?;
    Ok(())
}
