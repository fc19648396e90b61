//! Inversion in the unit sphere about x0 and the Kelvin transform of
//! discrete measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Condenser, Plate};
use crate::kernel::{DiscreteMeasure, RieszKernel, SignedDiscreteMeasure, WeightedNodes, COINCIDENCE_TOL};
use crate::measures::DiscreteVectorMeasure;
use crate::points::{squared_distance, Points};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionCenter {
    x0: Vec<f64>,
}

impl InversionCenter {
    pub fn new(x0: &[f64]) -> Result<Self> {
        if x0.is_empty() || x0.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("inversion center must be a finite point".into()));
        }
        Ok(Self { x0: x0.to_vec() })
    }

    pub fn point(&self) -> &[f64] {
        &self.x0
    }

    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>> {
        invert_point(x, &self.x0)
    }
}

/// x* = x0 + (x − x0)/|x − x0|², so that |x − x0|·|x* − x0| = 1.
pub fn invert_point(x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    if x.len() != x0.len() {
        return Err(Error::DimensionMismatch { expected: x0.len(), found: x.len() });
    }
    let r2 = squared_distance(x, x0);
    if r2 <= COINCIDENCE_TOL * COINCIDENCE_TOL {
        return Err(Error::InvalidParameter(
            "cannot invert the center of inversion".into(),
        ));
    }
    Ok(x.iter().zip(x0).map(|(a, c)| c + (a - c) / r2).collect())
}

fn transform_parts(
    points: &Points,
    weights: &[f64],
    x0: &[f64],
    kernel: &RieszKernel,
) -> Result<(Points, Vec<f64>)> {
    points.check_dim(kernel.dim())?;
    if x0.len() != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), found: x0.len() });
    }
    let mut coords = Vec::with_capacity(points.coords().len());
    let mut out = Vec::with_capacity(weights.len());
    for (p, &w) in points.iter().zip(weights) {
        let r = squared_distance(p, x0).sqrt();
        coords.extend(invert_point(p, x0)?);
        out.push(w * kernel.at_distance(r));
    }
    Ok((Points::new(points.dim(), coords)?, out))
}

/// Measures that have a Kelvin transform of the same kind.
pub trait Kelvin: Sized {
    fn kelvin(&self, x0: &[f64], kernel: &RieszKernel) -> Result<Self>;
}

impl Kelvin for DiscreteMeasure {
    fn kelvin(&self, x0: &[f64], kernel: &RieszKernel) -> Result<Self> {
        let (p, w) = transform_parts(self.points(), self.weights(), x0, kernel)?;
        DiscreteMeasure::new(p, w)
    }
}

impl Kelvin for SignedDiscreteMeasure {
    fn kelvin(&self, x0: &[f64], kernel: &RieszKernel) -> Result<Self> {
        let (p, w) = transform_parts(self.points(), self.weights(), x0, kernel)?;
        SignedDiscreteMeasure::new(p, w)
    }
}

/// ν* with dν*(x*) = |x − x0|^(α−n) dν(x).
pub fn kelvin_transform<M: Kelvin>(mu: &M, x0: &[f64], kernel: &RieszKernel) -> Result<M> {
    mu.kelvin(x0, kernel)
}

/// Inverts every plate of a condenser and transforms a vector measure on it.
pub fn kelvin_condenser(
    cond: &Condenser,
    mu: &DiscreteVectorMeasure,
    x0: &[f64],
    kernel: &RieszKernel,
) -> Result<(Condenser, DiscreteVectorMeasure)> {
    let mut plates = Vec::with_capacity(cond.len());
    let mut blocks = Vec::with_capacity(cond.len());
    for (plate, w) in cond.plates().iter().zip(mu.blocks()) {
        let (p, wt) = transform_parts(plate.nodes(), w, x0, kernel)?;
        plates.push(Plate::new(plate.sign(), p)?);
        blocks.push(wt);
    }
    let inverted = Condenser::new(plates)?;
    let measure = DiscreteVectorMeasure::new(&inverted, blocks)?;
    Ok((inverted, measure))
}
