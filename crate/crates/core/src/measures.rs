//! Vector measures on a condenser, the constrained problem data, and the
//! energy, potential, semimetric and resultant of a vector measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Condenser;
use crate::kernel::{DiagonalPolicy, RieszKernel, SignedDiscreteMeasure, COINCIDENCE_TOL};
use crate::operator::{field_pairing, NodeRegistry};
use crate::points::squared_distance;

/// μ = (μ^i): one nonnegative weight vector per plate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteVectorMeasure {
    weights: Vec<Vec<f64>>,
}

impl DiscreteVectorMeasure {
    pub fn new(cond: &Condenser, weights: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(cond, &weights, "measure")?;
        for (i, w) in weights.iter().enumerate() {
            if let Some(j) = w.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "plate {i} node {j} has weight {} (must be finite and nonnegative)",
                    w[j]
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn zeros(cond: &Condenser) -> Self {
        Self { weights: cond.node_counts().into_iter().map(|n| vec![0.0; n]).collect() }
    }

    pub(crate) fn from_blocks_unchecked(weights: Vec<Vec<f64>>) -> Self {
        Self { weights }
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn plate(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.weights
    }

    pub fn plate_masses(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().sum()).collect()
    }

    /// ⟨g_i, μ^i⟩ per plate.
    pub fn gauge_masses(&self, spec: &ProblemSpec) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&spec.plates)
            .map(|(w, c)| w.iter().zip(&c.gauge).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Convex combination `(1 − t) self + t other`.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
                .collect(),
        }
    }
}

fn check_shape(cond: &Condenser, blocks: &[Vec<f64>], what: &str) -> Result<()> {
    check_counts(&cond.node_counts(), blocks, what)
}

pub(crate) fn check_counts(counts: &[usize], blocks: &[Vec<f64>], what: &str) -> Result<()> {
    if blocks.len() != counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what} has {} plates, condenser has {}",
            blocks.len(),
            counts.len()
        )));
    }
    for (i, (b, &n)) in blocks.iter().zip(counts).enumerate() {
        if b.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{what} plate {i} has {} values, plate has {n} nodes",
                b.len(),
            )));
        }
    }
    Ok(())
}

/// Upper constraint σ^i on one plate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Caps {
    Unbounded,
    Finite(Vec<f64>),
}

impl Caps {
    pub fn as_slice(&self) -> Option<&[f64]> {
        match self {
            Caps::Unbounded => None,
            Caps::Finite(c) => Some(c),
        }
    }

    #[inline]
    pub fn cap(&self, j: usize) -> f64 {
        match self {
            Caps::Unbounded => f64::INFINITY,
            Caps::Finite(c) => c[j],
        }
    }
}

/// Problem data attached to one plate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateConstraint {
    pub caps: Caps,
    /// Target a_i for ⟨g_i, μ^i⟩.
    pub mass: f64,
    /// Node values of g_i.
    pub gauge: Vec<f64>,
}

/// The external field f.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExternalField {
    Zero,
    /// Case I: explicit node values per plate; +∞ is allowed.
    NodeGrid(Vec<Vec<f64>>),
    /// Case II: f_i = s_i κ(·, ζ).
    RieszOf(SignedDiscreteMeasure),
}

/// Data of the constrained (finite caps) or unconstrained problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub plates: Vec<PlateConstraint>,
    pub field: ExternalField,
}

impl ProblemSpec {
    /// g = 1, f = 0, no caps.
    pub fn unconstrained(cond: &Condenser, masses: &[f64]) -> Self {
        Self {
            plates: cond
                .plates()
                .iter()
                .zip(masses)
                .map(|(p, &a)| PlateConstraint {
                    caps: Caps::Unbounded,
                    mass: a,
                    gauge: vec![1.0; p.len()],
                })
                .collect(),
            field: ExternalField::Zero,
        }
    }

    /// g = 1, f = 0, with the given caps.
    pub fn constrained(cond: &Condenser, masses: &[f64], caps: Vec<Vec<f64>>) -> Self {
        let mut spec = Self::unconstrained(cond, masses);
        for (c, cap) in spec.plates.iter_mut().zip(caps) {
            c.caps = Caps::Finite(cap);
        }
        spec
    }

    pub fn with_field(mut self, field: ExternalField) -> Self {
        self.field = field;
        self
    }

    pub fn is_unconstrained(&self) -> bool {
        self.plates.iter().all(|p| p.caps == Caps::Unbounded)
    }

    /// Structural checks: shapes, a_i > 0, g_i > 0, caps > 0 and finite, no
    /// NaN or −∞ field values.
    pub fn validate(&self, cond: &Condenser) -> Result<()> {
        self.validate_counts(&cond.node_counts(), cond.dim())
    }

    /// As [`ProblemSpec::validate`], given only the plate node counts.
    pub fn validate_counts(&self, counts: &[usize], dim: usize) -> Result<()> {
        if self.plates.len() != counts.len() {
            return Err(Error::ShapeMismatch(format!(
                "problem has {} plates, condenser has {}",
                self.plates.len(),
                counts.len()
            )));
        }
        for (i, (c, &n)) in self.plates.iter().zip(counts).enumerate() {
            if !(c.mass > 0.0 && c.mass.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "plate {i}: mass target must be positive, got {}",
                    c.mass
                )));
            }
            if c.gauge.len() != n {
                return Err(Error::ShapeMismatch(format!("plate {i}: gauge length mismatch")));
            }
            if let Some(j) = c.gauge.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "plate {i}: gauge value {} at node {j} must be positive",
                    c.gauge[j]
                )));
            }
            if let Caps::Finite(cap) = &c.caps {
                if cap.len() != n {
                    return Err(Error::ShapeMismatch(format!("plate {i}: caps length mismatch")));
                }
                if let Some(j) = cap.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(Error::InvalidParameter(format!(
                        "plate {i}: cap {} at node {j} must be positive and finite",
                        cap[j]
                    )));
                }
            }
        }
        if let ExternalField::NodeGrid(grid) = &self.field {
            check_counts(counts, grid, "field")?;
            for (i, f) in grid.iter().enumerate() {
                if let Some(j) = f.iter().position(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
                    return Err(Error::InvalidParameter(format!(
                        "plate {i}: field value {} at node {j} is not allowed",
                        f[j]
                    )));
                }
            }
        }
        if let ExternalField::RieszOf(zeta) = &self.field {
            use crate::kernel::WeightedNodes;
            zeta.points().check_dim(dim)?;
        }
        Ok(())
    }

    /// Checks that every plate can carry its mass on nodes with finite field:
    /// `Σ_{f_i < ∞} g_i σ^i ≥ a_i`.
    pub fn check_feasible(&self, field: &[Vec<f64>]) -> Result<()> {
        for (i, (c, f)) in self.plates.iter().zip(field).enumerate() {
            let finite = f.iter().filter(|v| v.is_finite()).count();
            let available = match &c.caps {
                Caps::Unbounded => {
                    if finite > 0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                }
                Caps::Finite(cap) => cap
                    .iter()
                    .zip(&c.gauge)
                    .zip(f)
                    .filter(|(_, v)| v.is_finite())
                    .map(|((s, g), _)| s * g)
                    .sum(),
            };
            // Relative slack so that caps summing exactly to the mass pass.
            if available < c.mass * (1.0 - 1e-12) {
                return Err(Error::Infeasible {
                    plate: i,
                    available,
                    required: c.mass,
                    deficit: c.mass - available,
                });
            }
        }
        Ok(())
    }

    /// Resolves the field to node values on every plate.
    pub fn field_values(
        &self,
        cond: &Condenser,
        kernel: &RieszKernel,
        diag: DiagonalPolicy,
    ) -> Result<Vec<Vec<f64>>> {
        NodeRegistry::new(cond, diag)?.field_values(self, kernel, diag)
    }
}

/// Rμ = Σ s_i μ^i on the distinct node locations of the condenser.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultantMeasure {
    measure: SignedDiscreteMeasure,
    spacing: Vec<f64>,
}

impl ResultantMeasure {
    pub fn measure(&self) -> &SignedDiscreteMeasure {
        &self.measure
    }

    /// Per-location spacing used by the diagonal policy.
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// ‖Rμ‖² with the diagonal policy applied on the stored spacing.
    pub fn energy(&self, kernel: &RieszKernel, diag: DiagonalPolicy) -> f64 {
        self.inner(self.measure.weights_ref(), self.measure.weights_ref(), kernel, diag)
    }

    /// ‖Rμ − Rν‖² for two resultants on the same condenser.
    pub fn distance_squared(&self, other: &Self, kernel: &RieszKernel, diag: DiagonalPolicy) -> f64 {
        let d: Vec<f64> = self
            .measure
            .weights_ref()
            .iter()
            .zip(other.measure.weights_ref())
            .map(|(a, b)| a - b)
            .collect();
        self.inner(&d, &d, kernel, diag)
    }

    fn inner(&self, x: &[f64], y: &[f64], kernel: &RieszKernel, diag: DiagonalPolicy) -> f64 {
        use crate::kernel::WeightedNodes;
        let pts = self.measure.points();
        (0..pts.len())
            .into_par_iter()
            .map(|a| {
                if x[a] == 0.0 {
                    return 0.0;
                }
                let xa = pts.get(a);
                let mut acc = 0.0;
                for (b, yb) in pts.iter().enumerate() {
                    if y[b] == 0.0 {
                        continue;
                    }
                    let k = if a == b {
                        diag.self_term(kernel, self.spacing[a])
                    } else {
                        kernel.at_squared_distance(squared_distance(xa, yb))
                    };
                    acc += y[b] * k;
                }
                x[a] * acc
            })
            .sum()
    }
}

impl SignedDiscreteMeasure {
    fn weights_ref(&self) -> &[f64] {
        use crate::kernel::WeightedNodes;
        self.weights()
    }
}

/// Rμ := Σ_i s_i μ^i. Nodes shared by equally signed plates accumulate.
pub fn resultant(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    diag: DiagonalPolicy,
) -> Result<ResultantMeasure> {
    check_shape(cond, mu.blocks(), "measure")?;
    let reg = NodeRegistry::new(cond, diag)?;
    let w = reg.resultant_weights(mu);
    Ok(ResultantMeasure {
        measure: SignedDiscreteMeasure::from_parts_unchecked(reg.nodes().clone(), w),
        spacing: reg.spacing().to_vec(),
    })
}

/// Per-plate spacing used for self-terms: within-plate nearest-neighbor
/// distance, reduced to the minimum over plates at shared locations.
fn plate_spacings(cond: &Condenser, diag: DiagonalPolicy) -> Result<Vec<Vec<f64>>> {
    let reg = NodeRegistry::new(cond, diag)?;
    Ok((0..cond.len())
        .map(|i| reg.plate_map(i).iter().map(|&g| reg.spacing()[g]).collect())
        .collect())
}

/// Σ_{i,j} s_i s_j x^iᵀ K(A_i, A_j) y^j computed block by block.
fn signed_block_form(
    cond: &Condenser,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    spacing: &[Vec<f64>],
) -> (f64, f64) {
    let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
    let mut value = 0.0;
    let mut magnitude = 0.0;
    for (i, pi) in cond.plates().iter().enumerate() {
        for (j, pj) in cond.plates().iter().enumerate() {
            let sign = pi.sign().value() * pj.sign().value();
            let (v, m) = (0..pi.len())
                .into_par_iter()
                .map(|a| {
                    if x[i][a] == 0.0 {
                        return (0.0, 0.0);
                    }
                    let xa = pi.nodes().get(a);
                    let (mut acc, mut mag) = (0.0, 0.0);
                    for (b, yb) in pj.nodes().iter().enumerate() {
                        if y[j][b] == 0.0 {
                            continue;
                        }
                        let r2 = squared_distance(xa, yb);
                        let k = if r2 <= tol2 {
                            diag.self_term(kernel, spacing[i][a])
                        } else {
                            kernel.at_squared_distance(r2)
                        };
                        acc += y[j][b] * k;
                        mag += (y[j][b] * k).abs();
                    }
                    (x[i][a] * acc, x[i][a].abs() * mag)
                })
                .reduce(|| (0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1));
            value += sign * v;
            magnitude += m;
        }
    }
    (value, magnitude)
}

/// κ(μ, μ) = Σ_{i,j} s_i s_j κ(μ^i, μ^j).
pub fn vector_energy(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
) -> Result<f64> {
    check_shape(cond, mu.blocks(), "measure")?;
    let spacing = plate_spacings(cond, diag)?;
    Ok(signed_block_form(cond, mu.blocks(), mu.blocks(), kernel, diag, &spacing).0)
}

/// The radicand ‖μ − ν‖² of the semimetric; it can be negative when the
/// diagonal policy breaks positive definiteness.
pub fn semimetric_squared(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    nu: &DiscreteVectorMeasure,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
) -> Result<f64> {
    Ok(semimetric_parts(cond, mu, nu, kernel, diag)?.0)
}

fn semimetric_parts(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    nu: &DiscreteVectorMeasure,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
) -> Result<(f64, f64)> {
    check_shape(cond, mu.blocks(), "first measure")?;
    check_shape(cond, nu.blocks(), "second measure")?;
    let d: Vec<Vec<f64>> = mu
        .blocks()
        .iter()
        .zip(nu.blocks())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let spacing = plate_spacings(cond, diag)?;
    Ok(signed_block_form(cond, &d, &d, kernel, diag, &spacing))
}

/// Relative tolerance on a negative radicand before it is reported.
pub const RADICAND_TOL: f64 = 1e-10;

/// ‖μ − ν‖ in the energy seminorm. Negative radicands within
/// `RADICAND_TOL` of the form's magnitude are clamped to zero.
pub fn semimetric(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    nu: &DiscreteVectorMeasure,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
) -> Result<f64> {
    let (value, magnitude) = semimetric_parts(cond, mu, nu, kernel, diag)?;
    if value < -RADICAND_TOL * magnitude.max(f64::MIN_POSITIVE) {
        return Err(Error::NegativeRadicand { value });
    }
    Ok(value.max(0.0).sqrt())
}

/// G(μ) = κ(μ, μ) + 2 Σ ⟨f_i, μ^i⟩. An infinite field value meeting positive
/// mass gives +∞.
pub fn gauss_energy(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    spec: &ProblemSpec,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
) -> Result<f64> {
    spec.validate(cond)?;
    let field = spec.field_values(cond, kernel, diag)?;
    Ok(vector_energy(cond, mu, kernel, diag)? + 2.0 * field_pairing(&field, mu))
}

/// W^μ on the nodes of plate `i`: Σ_j s_i s_j κ(·, μ^j) + f_i.
pub fn weighted_potential(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    spec: &ProblemSpec,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    i: usize,
) -> Result<Vec<f64>> {
    check_shape(cond, mu.blocks(), "measure")?;
    if i >= cond.len() {
        return Err(Error::InvalidParameter(format!("no plate {i}")));
    }
    spec.validate(cond)?;
    let spacing = plate_spacings(cond, diag)?;
    let field = spec.field_values(cond, kernel, diag)?;
    let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
    let pi = cond.plate(i);
    let si = pi.sign().value();
    Ok((0..pi.len())
        .into_par_iter()
        .map(|a| {
            let x = pi.nodes().get(a);
            let mut acc = 0.0;
            for (j, pj) in cond.plates().iter().enumerate() {
                let sj = pj.sign().value();
                for (b, y) in pj.nodes().iter().enumerate() {
                    let w = mu.plate(j)[b];
                    if w == 0.0 {
                        continue;
                    }
                    let r2 = squared_distance(x, y);
                    let k = if r2 <= tol2 {
                        diag.self_term(kernel, spacing[i][a])
                    } else {
                        kernel.at_squared_distance(r2)
                    };
                    acc += si * sj * w * k;
                }
            }
            acc + field[i][a]
        })
        .collect())
}
