//! The α-Riesz kernel |x − y|^(α − n), dense kernel matrices and the
//! potentials and mutual energies of discrete measures.
//!
//! Point masses have infinite self-energy, so every quadratic form over a
//! node set needs a value for its diagonal. That value is supplied by a
//! [`DiagonalPolicy`]. Off the diagonal all entries are exact kernel values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_neighbor_spacing, sample_sphere};
use crate::points::{squared_distance, Points};

/// Points closer than this are treated as the same location.
pub const COINCIDENCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RieszKernel {
    alpha: f64,
    dim: usize,
}

impl RieszKernel {
    /// Requires `dim >= 3` and `0 < alpha < dim`.
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidParameter(format!(
                "ambient dimension must be at least 3, got {dim}"
            )));
        }
        if !(alpha > 0.0 && alpha < dim as f64) {
            return Err(Error::InvalidParameter(format!(
                "kernel order must lie in (0, {dim}), got {alpha}"
            )));
        }
        Ok(Self { alpha, dim })
    }

    /// The Newtonian kernel (α = 2).
    pub fn newtonian(dim: usize) -> Result<Self> {
        Self::new(2.0, dim)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// α − n, always negative.
    pub fn exponent(&self) -> f64 {
        self.alpha - self.dim as f64
    }

    /// Kernel value for a given squared distance; +∞ at zero.
    #[inline]
    pub fn at_squared_distance(&self, r2: f64) -> f64 {
        if r2 == 0.0 {
            return f64::INFINITY;
        }
        let e = self.exponent();
        if e == -1.0 {
            1.0 / r2.sqrt()
        } else {
            r2.powf(0.5 * e)
        }
    }

    #[inline]
    pub fn at_distance(&self, r: f64) -> f64 {
        self.at_squared_distance(r * r)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        for p in [x, y] {
            if p.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, found: p.len() });
            }
        }
        Ok(self.at_squared_distance(squared_distance(x, y)))
    }
}

/// Value placed on the diagonal of a kernel matrix over one node set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiagonalPolicy {
    /// Self-interaction dropped.
    #[default]
    Zero,
    /// `scale · d_i^(α−n)` with `d_i` the nearest-neighbor distance of node i.
    NearestNeighbor { scale: f64 },
}


impl DiagonalPolicy {
    pub fn nearest_neighbor(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "nearest-neighbor scale must be positive, got {scale}"
            )));
        }
        Ok(DiagonalPolicy::NearestNeighbor { scale })
    }

    /// Nearest-neighbor policy whose scale makes the discrete energy of the
    /// uniform measure on a Fibonacci lattice of `nodes` points on the unit
    /// sphere in R^3 equal to the exact energy of the uniform surface measure,
    /// `2^(1−s) / (2 − s)` with `s = n − α`.
    ///
    /// The surface measure only has finite energy for `α > 1`.
    pub fn calibrated(kernel: &RieszKernel, nodes: usize) -> Result<Self> {
        if kernel.dim() != 3 {
            return Err(Error::InvalidParameter(
                "diagonal calibration is only available in R^3".into(),
            ));
        }
        if kernel.alpha() <= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "surface measures have infinite energy for alpha = {} <= 1",
                kernel.alpha()
            )));
        }
        if nodes < 16 {
            return Err(Error::InvalidParameter("calibration needs at least 16 nodes".into()));
        }
        let s = -kernel.exponent();
        let exact = 2f64.powf(1.0 - s) / (2.0 - s);
        let pts = sample_sphere(&[0.0, 0.0, 0.0], 1.0, nodes, 0)?;
        let off_diagonal: f64 = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let xi = pts.get(i);
                pts.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, xj)| kernel.at_squared_distance(squared_distance(xi, xj)))
                    .sum::<f64>()
            })
            .sum();
        let spacing = nearest_neighbor_spacing(&pts)?;
        let diagonal: f64 = spacing.iter().map(|&d| kernel.at_distance(d)).sum();
        let n2 = (nodes * nodes) as f64;
        let scale = (exact * n2 - off_diagonal) / diagonal;
        Self::nearest_neighbor(scale)
    }

    pub fn needs_spacing(&self) -> bool {
        matches!(self, DiagonalPolicy::NearestNeighbor { .. })
    }

    /// Diagonal entry for a node whose nearest neighbor sits at `spacing`.
    #[inline]
    pub fn self_term(&self, kernel: &RieszKernel, spacing: f64) -> f64 {
        match *self {
            DiagonalPolicy::Zero => 0.0,
            DiagonalPolicy::NearestNeighbor { scale } => scale * kernel.at_distance(spacing),
        }
    }

    fn spacings(&self, pts: &Points) -> Result<Vec<f64>> {
        if self.needs_spacing() {
            nearest_neighbor_spacing(pts)
        } else {
            Ok(vec![0.0; pts.len()])
        }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut data = vec![0.0; rows * cols];
        if cols > 0 {
            data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f(i, j);
                }
            });
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec length mismatch");
        if self.cols == 0 {
            return vec![0.0; self.rows];
        }
        self.data
            .par_chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.rows, "bilinear length mismatch");
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        if self.cols == 0 {
            return 0.0;
        }
        self.data
            .par_chunks(self.cols)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .reduce(|| 0.0, f64::max)
    }
}

/// Anything carrying weights on a node set.
pub trait WeightedNodes {
    fn points(&self) -> &Points;
    fn weights(&self) -> &[f64];
}

/// A nonnegative measure supported on finitely many distinct points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Points,
    weights: Vec<f64>,
}

/// A signed measure supported on finitely many distinct points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedDiscreteMeasure {
    points: Points,
    weights: Vec<f64>,
}

fn check_measure(points: &Points, weights: &[f64]) -> Result<()> {
    if points.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if let Some(k) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter(format!("weight {k} is not finite")));
    }
    check_distinct(points)
}

/// Rejects node sets containing two points within [`COINCIDENCE_TOL`].
pub fn check_distinct(points: &Points) -> Result<()> {
    let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
    let hit = (0..points.len()).into_par_iter().find_map_first(|i| {
        let xi = points.get(i);
        ((i + 1)..points.len()).find_map(|j| {
            let d2 = squared_distance(xi, points.get(j));
            (d2 <= tol2).then(|| (i, j, d2.sqrt()))
        })
    });
    match hit {
        Some((first, second, distance)) => {
            Err(Error::CoincidentNodes { first, second, distance })
        }
        None => Ok(()),
    }
}

impl DiscreteMeasure {
    pub fn new(points: Points, weights: Vec<f64>) -> Result<Self> {
        check_measure(&points, &weights)?;
        if let Some(k) = weights.iter().position(|&w| w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight {k} is negative ({})",
                weights[k]
            )));
        }
        Ok(Self { points, weights })
    }

    pub fn dirac(point: &[f64], mass: f64) -> Result<Self> {
        Self::new(Points::from_rows(&[point])?, vec![mass])
    }

    /// Equal weights summing to `mass`.
    pub fn uniform(points: Points, mass: f64) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![mass / n as f64; n])
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.points.clone(), self.weights.iter().map(|w| w * factor).collect())
    }

    pub fn into_signed(self) -> SignedDiscreteMeasure {
        SignedDiscreteMeasure { points: self.points, weights: self.weights }
    }

    pub(crate) fn from_parts_unchecked(points: Points, weights: Vec<f64>) -> Self {
        Self { points, weights }
    }
}

impl SignedDiscreteMeasure {
    pub fn new(points: Points, weights: Vec<f64>) -> Result<Self> {
        check_measure(&points, &weights)?;
        Ok(Self { points, weights })
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            points: self.points.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    /// Positive and negative parts (ν⁺, ν⁻), each on the full node set.
    pub fn jordan_parts(&self) -> (DiscreteMeasure, DiscreteMeasure) {
        let pos = self.weights.iter().map(|w| w.max(0.0)).collect();
        let neg = self.weights.iter().map(|w| (-w).max(0.0)).collect();
        (
            DiscreteMeasure::from_parts_unchecked(self.points.clone(), pos),
            DiscreteMeasure::from_parts_unchecked(self.points.clone(), neg),
        )
    }

    pub(crate) fn from_parts_unchecked(points: Points, weights: Vec<f64>) -> Self {
        Self { points, weights }
    }
}

impl WeightedNodes for DiscreteMeasure {
    fn points(&self) -> &Points {
        &self.points
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl WeightedNodes for SignedDiscreteMeasure {
    fn points(&self) -> &Points {
        &self.points
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Kernel matrix between two node sets.
///
/// When `a` and `b` are the same node set the diagonal follows `diag` and
/// coincident distinct-index points are rejected. Otherwise entries are plain
/// kernel values, +∞ where points coincide.
pub fn kernel_matrix(
    kernel: &RieszKernel,
    a: &Points,
    b: &Points,
    diag: DiagonalPolicy,
) -> Result<Matrix> {
    a.check_dim(kernel.dim())?;
    b.check_dim(kernel.dim())?;
    if a == b {
        check_distinct(a)?;
        let spacing = diag.spacings(a)?;
        Ok(Matrix::from_fn(a.len(), a.len(), |i, j| {
            if i == j {
                diag.self_term(kernel, spacing[i])
            } else {
                kernel.at_squared_distance(squared_distance(a.get(i), a.get(j)))
            }
        }))
    } else {
        Ok(Matrix::from_fn(a.len(), b.len(), |i, j| {
            kernel.at_squared_distance(squared_distance(a.get(i), b.get(j)))
        }))
    }
}

/// `κ(x_k, μ) = Σ_j w_j κ(x_k, y_j)` at every evaluation point.
///
/// A positive weight sitting exactly on an evaluation point yields +∞ there
/// (−∞ for a negative weight); zero weights never contribute.
pub fn potential<M: WeightedNodes + ?Sized>(
    kernel: &RieszKernel,
    mu: &M,
    eval_pts: &Points,
) -> Result<Vec<f64>> {
    mu.points().check_dim(kernel.dim())?;
    eval_pts.check_dim(kernel.dim())?;
    let (pts, w) = (mu.points(), mu.weights());
    Ok((0..eval_pts.len())
        .into_par_iter()
        .map(|k| {
            let x = eval_pts.get(k);
            let mut acc = 0.0;
            for (y, &wj) in pts.iter().zip(w) {
                if wj != 0.0 {
                    acc += wj * kernel.at_squared_distance(squared_distance(x, y));
                }
            }
            acc
        })
        .collect())
}

/// Potential in which a point mass sitting on an evaluation point contributes
/// its diagonal self-term `diag.self_term(spacing[k])` instead of ±∞.
pub fn potential_regularized<M: WeightedNodes + ?Sized>(
    kernel: &RieszKernel,
    mu: &M,
    eval_pts: &Points,
    diag: DiagonalPolicy,
    eval_spacing: &[f64],
) -> Result<Vec<f64>> {
    mu.points().check_dim(kernel.dim())?;
    eval_pts.check_dim(kernel.dim())?;
    if eval_spacing.len() != eval_pts.len() {
        return Err(Error::ShapeMismatch("one spacing per evaluation point required".into()));
    }
    let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
    let (pts, w) = (mu.points(), mu.weights());
    Ok((0..eval_pts.len())
        .into_par_iter()
        .map(|k| {
            let x = eval_pts.get(k);
            let mut acc = 0.0;
            for (y, &wj) in pts.iter().zip(w) {
                let r2 = squared_distance(x, y);
                let kv = if r2 <= tol2 {
                    diag.self_term(kernel, eval_spacing[k])
                } else {
                    kernel.at_squared_distance(r2)
                };
                acc += wj * kv;
            }
            acc
        })
        .collect())
}

/// `κ(μ, ν) = Σ_ij w^μ_i w^ν_j κ(x_i, y_j)`.
///
/// Points of μ that coincide with points of ν use the diagonal policy, with
/// the nearest-neighbor spacing taken inside μ's node set (or ν's when μ is a
/// single point).
pub fn mutual_energy<M, N>(
    kernel: &RieszKernel,
    mu: &M,
    nu: &N,
    diag: DiagonalPolicy,
) -> Result<f64>
where
    M: WeightedNodes + ?Sized,
    N: WeightedNodes + ?Sized,
{
    let (pa, pb) = (mu.points(), nu.points());
    pa.check_dim(kernel.dim())?;
    pb.check_dim(kernel.dim())?;
    let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
    let spacing = if diag.needs_spacing() && has_coincidence(pa, pb) {
        if pa.len() >= 2 {
            SpacingSource::Mu(nearest_neighbor_spacing(pa)?)
        } else if pb.len() >= 2 {
            SpacingSource::Nu(nearest_neighbor_spacing(pb)?)
        } else {
            return Err(Error::Degenerate(
                "self-energy of a single point needs a neighbor to set its spacing".into(),
            ));
        }
    } else {
        SpacingSource::None
    };
    let (wa, wb) = (mu.weights(), nu.weights());
    Ok((0..pa.len())
        .into_par_iter()
        .map(|i| {
            if wa[i] == 0.0 {
                return 0.0;
            }
            let xi = pa.get(i);
            let mut acc = 0.0;
            for (j, (yj, &w)) in pb.iter().zip(wb).enumerate() {
                if w == 0.0 {
                    continue;
                }
                let r2 = squared_distance(xi, yj);
                let kv = if r2 <= tol2 {
                    match &spacing {
                        SpacingSource::Mu(s) => diag.self_term(kernel, s[i]),
                        SpacingSource::Nu(s) => diag.self_term(kernel, s[j]),
                        SpacingSource::None => 0.0,
                    }
                } else {
                    kernel.at_squared_distance(r2)
                };
                acc += w * kv;
            }
            wa[i] * acc
        })
        .sum())
}

enum SpacingSource {
    None,
    Mu(Vec<f64>),
    Nu(Vec<f64>),
}

fn has_coincidence(a: &Points, b: &Points) -> bool {
    let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
    (0..a.len())
        .into_par_iter()
        .any(|i| b.iter().any(|y| squared_distance(a.get(i), y) <= tol2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn newton() -> RieszKernel {
        RieszKernel::newtonian(3).unwrap()
    }

    fn pts(rows: &[[f64; 3]]) -> Points {
        Points::from_rows(rows).unwrap()
    }

    #[test]
    fn kernel_parameters_are_validated() {
        assert!(RieszKernel::new(2.0, 2).is_err());
        assert!(RieszKernel::new(0.0, 3).is_err());
        assert!(RieszKernel::new(3.0, 3).is_err());
        assert!(RieszKernel::new(2.5, 3).is_ok());
    }

    #[test]
    fn eval_examples() {
        let k = newton();
        assert_eq!(k.eval(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(k.eval(&[0.0, 0.0, 0.0], &[2.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(k.eval(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap(), f64::INFINITY);
        assert!(matches!(
            k.eval(&[0.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn general_order_matches_powf() {
        let k = RieszKernel::new(1.5, 3).unwrap();
        assert_relative_eq!(k.at_distance(2.0), 2f64.powf(-1.5), max_relative = 1e-15);
    }

    #[test]
    fn two_node_matrices() {
        let k = newton();
        let p = pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let zero = kernel_matrix(&k, &p, &p, DiagonalPolicy::Zero).unwrap();
        assert_eq!(zero.row(0), &[0.0, 1.0]);
        assert_eq!(zero.row(1), &[1.0, 0.0]);
        let nn = kernel_matrix(&k, &p, &p, DiagonalPolicy::nearest_neighbor(1.0).unwrap()).unwrap();
        assert_eq!(nn.row(0), &[1.0, 1.0]);
        assert_eq!(nn.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn collinear_off_diagonals() {
        let k = newton();
        let p = pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let m = kernel_matrix(&k, &p, &p, DiagonalPolicy::Zero).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 2), 1.0);
        assert_eq!(m.get(0, 2), 0.5);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn coincident_nodes_in_one_set_are_rejected() {
        let k = newton();
        let p = pts(&[[0.0, 0.0, 0.0], [1e-13, 0.0, 0.0]]);
        assert!(matches!(
            kernel_matrix(&k, &p, &p, DiagonalPolicy::Zero),
            Err(Error::CoincidentNodes { .. })
        ));
        assert!(DiscreteMeasure::new(p, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_measure_has_zero_potential() {
        let k = newton();
        let mu = DiscreteMeasure::new(pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), vec![0.0, 0.0])
            .unwrap();
        let v = potential(&k, &mu, &pts(&[[0.0, 0.0, 0.0], [5.0, 1.0, 2.0]])).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn mutual_energy_examples() {
        let k = newton();
        let half = DiscreteMeasure::new(pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), vec![0.5, 0.5])
            .unwrap();
        assert_relative_eq!(
            mutual_energy(&k, &half, &half, DiagonalPolicy::Zero).unwrap(),
            0.5
        );
        let a = DiscreteMeasure::dirac(&[0.0, 0.0, 0.0], 1.0).unwrap();
        let b = DiscreteMeasure::dirac(&[2.0, 0.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(mutual_energy(&k, &a, &b, DiagonalPolicy::Zero).unwrap(), 0.5);
    }

    #[test]
    fn regularized_potential_uses_self_term_on_coincidence() {
        let k = newton();
        let mu = DiscreteMeasure::dirac(&[0.0, 0.0, 0.0], 2.0).unwrap();
        let at = pts(&[[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
        let v = potential_regularized(
            &k,
            &mu,
            &at,
            DiagonalPolicy::nearest_neighbor(3.0).unwrap(),
            &[0.5, 1.0],
        )
        .unwrap();
        assert_relative_eq!(v[0], 2.0 * 3.0 * 2.0);
        assert_relative_eq!(v[1], 0.5);
        assert_eq!(potential(&k, &mu, &at).unwrap()[0], f64::INFINITY);
    }

    #[test]
    fn calibration_reproduces_uniform_sphere_energy() {
        let k = newton();
        let diag = DiagonalPolicy::calibrated(&k, 500).unwrap();
        let DiagonalPolicy::NearestNeighbor { scale } = diag else { panic!() };
        assert!(scale > 3.0 && scale < 4.5, "scale {scale}");
        let p = sample_sphere(&[0.0, 0.0, 0.0], 1.0, 500, 0).unwrap();
        let mu = DiscreteMeasure::uniform(p, 1.0).unwrap();
        assert_relative_eq!(mutual_energy(&k, &mu, &mu, diag).unwrap(), 1.0, max_relative = 1e-12);
        assert!(DiagonalPolicy::calibrated(&RieszKernel::new(1.0, 3).unwrap(), 500).is_err());
    }

    #[test]
    fn matrix_helpers() {
        let m = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 12.0]);
        assert_eq!(m.bilinear(&[1.0, 0.0], &[0.0, 0.0, 1.0]), 2.0);
        assert_eq!(m.max_abs_row_sum(), 12.0);
    }
}
