//! Kernel operator over the distinct node locations of a condenser.
//!
//! Equally signed plates may share nodes. Every plate node is mapped to one
//! distinct location, and a single dense matrix over those locations serves
//! all plate blocks. A node shared by two plates therefore meets itself
//! through the diagonal policy, which keeps `κ(μ, μ) = ‖Rμ‖²` exact.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{nearest_neighbor_spacing, Condenser, Sign};
use crate::kernel::{potential_regularized, DiagonalPolicy, Matrix, RieszKernel, COINCIDENCE_TOL};
use crate::measures::{DiscreteVectorMeasure, ExternalField, ProblemSpec};
use crate::points::{squared_distance, Points};

/// Distinct node locations of a condenser and the plate-to-location map.
#[derive(Clone, Debug)]
pub struct NodeRegistry {
    nodes: Points,
    spacing: Vec<f64>,
    plate_map: Vec<Vec<usize>>,
    signs: Vec<f64>,
    flat_map: Vec<usize>,
    flat_sign: Vec<f64>,
    offsets: Vec<usize>,
}

impl NodeRegistry {
    /// `spacing` of a location is the smallest within-plate nearest-neighbor
    /// distance over the plates containing it (only computed when `diag`
    /// needs it).
    pub fn new(cond: &Condenser, diag: DiagonalPolicy) -> Result<Self> {
        let dim = cond.dim();
        let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
        let mut nodes = Points::empty(dim);
        let mut spacing: Vec<f64> = Vec::new();
        let mut owner_sign: Vec<Sign> = Vec::new();
        let mut plate_map = Vec::with_capacity(cond.len());
        for plate in cond.plates() {
            let plate_spacing = if diag.needs_spacing() {
                if plate.len() < 2 {
                    return Err(Error::Degenerate(
                        "a single-node plate has no spacing for the nearest-neighbor diagonal"
                            .into(),
                    ));
                }
                nearest_neighbor_spacing(plate.nodes())?
            } else {
                vec![0.0; plate.len()]
            };
            let existing = nodes.len();
            let shares_sign = owner_sign.iter().any(|&s| s == plate.sign());
            let matches: Vec<Option<usize>> = if shares_sign {
                let snapshot = &nodes;
                let owners = &owner_sign;
                (0..plate.len())
                    .into_par_iter()
                    .map(|j| {
                        let x = plate.nodes().get(j);
                        (0..existing).find(|&g| {
                            owners[g] == plate.sign()
                                && squared_distance(x, snapshot.get(g)) <= tol2
                        })
                    })
                    .collect()
            } else {
                vec![None; plate.len()]
            };
            let mut map = Vec::with_capacity(plate.len());
            for (j, m) in matches.into_iter().enumerate() {
                match m {
                    Some(g) => {
                        spacing[g] = spacing[g].min(plate_spacing[j]);
                        map.push(g);
                    }
                    None => {
                        nodes.push(plate.nodes().get(j))?;
                        spacing.push(plate_spacing[j]);
                        owner_sign.push(plate.sign());
                        map.push(nodes.len() - 1);
                    }
                }
            }
            plate_map.push(map);
        }
        let signs: Vec<f64> = cond.plates().iter().map(|p| p.sign().value()).collect();
        let mut offsets = vec![0];
        let mut flat_map = Vec::new();
        let mut flat_sign = Vec::new();
        for (map, &s) in plate_map.iter().zip(&signs) {
            flat_map.extend_from_slice(map);
            flat_sign.extend(std::iter::repeat_n(s, map.len()));
            offsets.push(flat_map.len());
        }
        Ok(Self { nodes, spacing, plate_map, signs, flat_map, flat_sign, offsets })
    }

    pub fn nodes(&self) -> &Points {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn plate_map(&self, plate: usize) -> &[usize] {
        &self.plate_map[plate]
    }

    pub fn sign(&self, plate: usize) -> f64 {
        self.signs[plate]
    }

    pub fn plate_count(&self) -> usize {
        self.plate_map.len()
    }

    /// Start of each plate in the concatenated plate-node ordering; the last
    /// entry is the total node count.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub(crate) fn resultant_flat(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.nodes.len()];
        for ((&g, &s), &w) in self.flat_map.iter().zip(&self.flat_sign).zip(x) {
            r[g] += s * w;
        }
        r
    }

    pub(crate) fn plate_values_flat(&self, v: &[f64]) -> Vec<f64> {
        self.flat_map.iter().zip(&self.flat_sign).map(|(&g, &s)| s * v[g]).collect()
    }

    /// Rμ as signed weights over the distinct locations.
    pub fn resultant_weights(&self, mu: &DiscreteVectorMeasure) -> Vec<f64> {
        let mut r = vec![0.0; self.nodes.len()];
        for (i, w) in mu.blocks().iter().enumerate() {
            let s = self.signs[i];
            for (&g, &wj) in self.plate_map[i].iter().zip(w) {
                r[g] += s * wj;
            }
        }
        r
    }

    /// Per-plate node values `s_i · v[g(i, j)]`.
    pub fn plate_values(&self, v: &[f64]) -> Vec<Vec<f64>> {
        self.plate_map
            .iter()
            .zip(&self.signs)
            .map(|(map, &s)| map.iter().map(|&g| s * v[g]).collect())
            .collect()
    }

    /// Field values per plate node; Case II potentials at nodes carrying part
    /// of ζ use the diagonal self-term.
    pub fn field_values(
        &self,
        spec: &ProblemSpec,
        kernel: &RieszKernel,
        diag: DiagonalPolicy,
    ) -> Result<Vec<Vec<f64>>> {
        match &spec.field {
            ExternalField::Zero => {
                Ok(self.plate_map.iter().map(|m| vec![0.0; m.len()]).collect())
            }
            ExternalField::NodeGrid(grid) => Ok(grid.clone()),
            ExternalField::RieszOf(zeta) => {
                let pot = potential_regularized(kernel, zeta, &self.nodes, diag, &self.spacing)?;
                Ok(self.plate_values(&pot))
            }
        }
    }
}

/// Dense kernel matrix over the distinct locations plus the plate structure.
#[derive(Clone, Debug)]
pub struct EnergyOperator {
    kernel: RieszKernel,
    diag: DiagonalPolicy,
    registry: NodeRegistry,
    matrix: Matrix,
    row_bound: f64,
    min_cross_sign_distance: f64,
    close_pairs: Vec<ClosePair>,
    cross_pair_cutoff: f64,
}

/// Opposite-sign node pair closer than the short-circuit cutoff.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ClosePair {
    pub plate_pos: usize,
    pub node_pos: usize,
    pub plate_neg: usize,
    pub node_neg: usize,
    pub distance: f64,
}

/// Cross-sign distance below which mass concentration is a short-circuit.
pub const SHORT_CIRCUIT_DISTANCE: f64 = 1e-9;

impl EnergyOperator {
    pub fn new(cond: &Condenser, kernel: &RieszKernel, diag: DiagonalPolicy) -> Result<Self> {
        if cond.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch { expected: kernel.dim(), found: cond.dim() });
        }
        let registry = NodeRegistry::new(cond, diag)?;
        let nodes = &registry.nodes;
        let spacing = &registry.spacing;
        let matrix = Matrix::from_fn(nodes.len(), nodes.len(), |a, b| {
            if a == b {
                diag.self_term(kernel, spacing[a])
            } else {
                kernel.at_squared_distance(squared_distance(nodes.get(a), nodes.get(b)))
            }
        });
        let mut multiplicity = vec![0.0; nodes.len()];
        for map in &registry.plate_map {
            for &g in map {
                multiplicity[g] += 1.0;
            }
        }
        let row_bound = matrix
            .matvec(&multiplicity)
            .into_iter()
            .zip(&multiplicity)
            .filter(|(_, &m)| m > 0.0)
            .map(|(v, _)| v)
            .fold(0.0, f64::max);

        let mut close_pairs = Vec::new();
        let cut2 = SHORT_CIRCUIT_DISTANCE * SHORT_CIRCUIT_DISTANCE;
        for (ip, pos) in cond.plates_with_sign(Sign::Positive) {
            for (ineg, neg) in cond.plates_with_sign(Sign::Negative) {
                for (a, x) in pos.nodes().iter().enumerate() {
                    for (b, y) in neg.nodes().iter().enumerate() {
                        let d2 = squared_distance(x, y);
                        if d2 < cut2 {
                            close_pairs.push(ClosePair {
                                plate_pos: ip,
                                node_pos: a,
                                plate_neg: ineg,
                                node_neg: b,
                                distance: d2.sqrt(),
                            });
                        }
                    }
                }
            }
        }
        Ok(Self {
            kernel: *kernel,
            diag,
            registry,
            matrix,
            row_bound,
            min_cross_sign_distance: cond.min_cross_sign_distance(),
            close_pairs,
            cross_pair_cutoff: SHORT_CIRCUIT_DISTANCE,
        })
    }

    pub fn kernel(&self) -> &RieszKernel {
        &self.kernel
    }

    pub fn diagonal(&self) -> DiagonalPolicy {
        self.diag
    }

    pub fn registry(&self) -> &NodeRegistry {
        &self.registry
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn plate_count(&self) -> usize {
        self.registry.plate_count()
    }

    pub fn plate_len(&self, plate: usize) -> usize {
        self.registry.plate_map[plate].len()
    }

    /// Largest absolute row sum of the signed block matrix over plate nodes.
    pub fn row_bound(&self) -> f64 {
        self.row_bound
    }

    /// `2 · row_bound`, an upper bound on the Lipschitz constant of ∇G.
    pub fn lipschitz(&self) -> f64 {
        2.0 * self.row_bound
    }

    pub fn min_cross_sign_distance(&self) -> f64 {
        self.min_cross_sign_distance
    }

    pub(crate) fn close_pairs(&self) -> &[ClosePair] {
        &self.close_pairs
    }

    pub fn short_circuit_cutoff(&self) -> f64 {
        self.cross_pair_cutoff
    }

    /// K·Rμ over the distinct locations.
    pub fn resultant_potential(&self, mu: &DiscreteVectorMeasure) -> Vec<f64> {
        self.matrix.matvec(&self.registry.resultant_weights(mu))
    }

    /// κ(μ, μ) = ‖Rμ‖².
    pub fn energy(&self, mu: &DiscreteVectorMeasure) -> f64 {
        let r = self.registry.resultant_weights(mu);
        self.matrix.bilinear(&r, &r)
    }

    pub fn field_values(&self, spec: &ProblemSpec) -> Result<Vec<Vec<f64>>> {
        self.registry.field_values(spec, &self.kernel, self.diag)
    }

    /// Weighted potentials `W^i = s_i κ(·, Rμ) + f_i` on each plate.
    pub fn weighted_potentials(
        &self,
        mu: &DiscreteVectorMeasure,
        field: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let mut w = self.registry.plate_values(&self.resultant_potential(mu));
        for (wi, fi) in w.iter_mut().zip(field) {
            for (a, f) in wi.iter_mut().zip(fi) {
                *a += f;
            }
        }
        w
    }

    /// G(μ) = κ(μ, μ) + 2⟨f, μ⟩, treating ∞·0 as 0.
    pub fn gauss_energy(&self, mu: &DiscreteVectorMeasure, field: &[Vec<f64>]) -> f64 {
        self.energy(mu) + 2.0 * field_pairing(field, mu)
    }
}

/// Σ_i ⟨f_i, μ^i⟩ with ∞·0 = 0 (and +∞ when an infinite value meets mass).
pub fn field_pairing(field: &[Vec<f64>], mu: &DiscreteVectorMeasure) -> f64 {
    let mut acc = 0.0;
    for (f, w) in field.iter().zip(mu.blocks()) {
        for (&fv, &wv) in f.iter().zip(w) {
            if wv != 0.0 {
                acc += fv * wv;
            }
        }
    }
    acc
}
