//! Plate discretizations and condenser assembly.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_distinct, COINCIDENCE_TOL};
use crate::points::{squared_distance, Points};

/// Seed used by every sampler unless a plate overrides it.
pub const DEFAULT_SEED: u64 = 42;

const GOLDEN_ANGLE: f64 = PI * 0.763_932_022_500_210_3; // π (3 − √5)

/// `N` nearly equidistributed points on the sphere `S(center, radius)`.
///
/// In R^3 this is a spherical Fibonacci lattice turned by a random rotation
/// drawn from `seed`; in higher dimensions normalized Gaussian samples are
/// used. Two points are always placed antipodally.
pub fn sample_sphere(center: &[f64], radius: f64, n: usize, seed: u64) -> Result<Points> {
    let dim = center.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 sphere nodes, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    if dim < 3 {
        return Err(Error::InvalidParameter(format!("sphere sampling needs dim >= 3, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units: Vec<Vec<f64>> = if dim == 3 {
        let rot = random_rotation(&mut rng);
        fibonacci_directions(n)
            .into_iter()
            .map(|u| (0..3).map(|r| rot[r].iter().zip(&u).map(|(a, b)| a * b).sum()).collect())
            .collect()
    } else if n == 2 {
        let u = gaussian_direction(&mut rng, dim);
        let v = u.iter().map(|x| -x).collect();
        vec![u, v]
    } else {
        (0..n).map(|_| gaussian_direction(&mut rng, dim)).collect()
    };
    let mut coords = Vec::with_capacity(n * dim);
    for u in &units {
        coords.extend(u.iter().zip(center).map(|(x, c)| c + radius * x));
    }
    Points::new(dim, coords)
}

fn fibonacci_directions(n: usize) -> Vec<[f64; 3]> {
    if n == 2 {
        return vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
    }
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * GOLDEN_ANGLE;
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}

fn gaussian_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniformly distributed rotation of R^3 from a random unit quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Radius of the surface of revolution `x2² + x3² = exp(−2 x1^r)` at `x1`.
pub fn revolution_radius(r_exponent: f64, x1: f64) -> f64 {
    (-x1.powf(r_exponent)).exp()
}

/// `N` points on `{x2² + x3² = exp(−2 x1^r), x1_min ≤ x1 ≤ x1_max}` laid out on a
/// golden-angle spiral whose x1 coordinates are uniform in meridian arc length.
pub fn sample_revolution_surface(
    r_exponent: f64,
    x1_min: f64,
    x1_max: f64,
    n: usize,
) -> Result<Points> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 surface nodes, got {n}")));
    }
    if !(r_exponent > 1.0 && x1_min >= 1.0 && x1_max > x1_min && x1_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "revolution surface needs r > 1, 1 <= x1_min < x1_max; got r = {r_exponent}, \
             range [{x1_min}, {x1_max}]"
        )));
    }
    // Cumulative meridian arc length on a fine grid, inverted by interpolation.
    const GRID: usize = 8192;
    let h = (x1_max - x1_min) / GRID as f64;
    let speed = |t: f64| {
        let rho = revolution_radius(r_exponent, t);
        let drho = -r_exponent * t.powf(r_exponent - 1.0) * rho;
        (1.0 + drho * drho).sqrt()
    };
    let mut arc = vec![0.0; GRID + 1];
    for k in 0..GRID {
        let (t0, t1) = (x1_min + k as f64 * h, x1_min + (k + 1) as f64 * h);
        arc[k + 1] = arc[k] + 0.5 * h * (speed(t0) + speed(t1));
    }
    let total = arc[GRID];
    let mut coords = Vec::with_capacity(3 * n);
    for i in 0..n {
        let target = (i as f64 + 0.5) / n as f64 * total;
        let k = arc.partition_point(|&s| s <= target).clamp(1, GRID) - 1;
        let frac = (target - arc[k]) / (arc[k + 1] - arc[k]);
        let x1 = (x1_min + (k as f64 + frac) * h).clamp(x1_min, x1_max);
        let rho = revolution_radius(r_exponent, x1);
        let phi = i as f64 * GOLDEN_ANGLE;
        coords.extend([x1, rho * phi.cos(), rho * phi.sin()]);
    }
    Points::new(3, coords)
}

/// Distance from each point to its nearest other point.
pub fn nearest_neighbor_spacing(points: &Points) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter(
            "nearest-neighbor spacing needs at least 2 points".into(),
        ));
    }
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| {
            let xi = points.get(i);
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, xj)| squared_distance(xi, xj))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Reads a point cloud: one node per line, whitespace-separated coordinates,
/// `#` starts a comment.
pub fn read_point_cloud(path: &Path) -> Result<Points> {
    let text = std::fs::read_to_string(path)?;
    parse_point_cloud(&text, &path.display().to_string())
}

pub fn parse_point_cloud(text: &str, origin: &str) -> Result<Points> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message,
        };
        let row = body
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|e| parse_err(format!("`{tok}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(format!(
                    "expected {} coordinates, found {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: "no points".into(),
        });
    }
    Points::from_rows(&rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    pub fn from_value(v: i32) -> Result<Self> {
        match v {
            1 => Ok(Sign::Positive),
            -1 => Ok(Sign::Negative),
            _ => Err(Error::InvalidParameter(format!("plate sign must be +1 or -1, got {v}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlateShape {
    Sphere { center: Vec<f64>, radius: f64 },
    /// `x2² + x3² = exp(−2 x1^r_exponent)` for `x1_min ≤ x1 ≤ x1_max`.
    RevolutionSurface { r_exponent: f64, x1_min: f64, x1_max: f64 },
    PointCloudFile { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    pub shape: PlateShape,
    pub sign: Sign,
    pub node_count: usize,
    /// Overrides the condenser-wide seed.
    pub seed: Option<u64>,
}

impl PlateSpec {
    pub fn sphere(center: &[f64], radius: f64, sign: Sign, node_count: usize) -> Self {
        Self {
            shape: PlateShape::Sphere { center: center.to_vec(), radius },
            sign,
            node_count,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn sample(&self, default_seed: u64) -> Result<Points> {
        if self.node_count < 2 {
            return Err(Error::InvalidParameter(format!(
                "plates need at least 2 nodes, got {}",
                self.node_count
            )));
        }
        let seed = self.seed.unwrap_or(default_seed);
        match &self.shape {
            PlateShape::Sphere { center, radius } => {
                sample_sphere(center, *radius, self.node_count, seed)
            }
            PlateShape::RevolutionSurface { r_exponent, x1_min, x1_max } => {
                sample_revolution_surface(*r_exponent, *x1_min, *x1_max, self.node_count)
            }
            PlateShape::PointCloudFile { path } => {
                let pts = read_point_cloud(path)?;
                if pts.len() != self.node_count {
                    return Err(Error::ShapeMismatch(format!(
                        "{} holds {} nodes but the plate declares {}",
                        path.display(),
                        pts.len(),
                        self.node_count
                    )));
                }
                Ok(pts)
            }
        }
    }
}

/// One discretized plate. Nodes carry no mass of their own.
#[derive(Clone, Debug, PartialEq)]
pub struct Plate {
    sign: Sign,
    nodes: Points,
}

impl Plate {
    pub fn new(sign: Sign, nodes: Points) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("a plate needs at least one node".into()));
        }
        check_distinct(&nodes)?;
        Ok(Self { sign, nodes })
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn nodes(&self) -> &Points {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// An ordered family of signed plates in which no node of a positive plate
/// coincides with a node of a negative plate. Equally signed plates may share
/// nodes or coincide entirely.
#[derive(Clone, Debug, PartialEq)]
pub struct Condenser {
    plates: Vec<Plate>,
}

impl Condenser {
    pub fn new(plates: Vec<Plate>) -> Result<Self> {
        let first = plates
            .first()
            .ok_or_else(|| Error::InvalidParameter("a condenser needs at least one plate".into()))?;
        let dim = first.nodes.dim();
        for p in &plates {
            p.nodes.check_dim(dim)?;
        }
        let cond = Self { plates };
        let tol2 = COINCIDENCE_TOL * COINCIDENCE_TOL;
        for (ip, pos) in cond.plates_with_sign(Sign::Positive) {
            for (ineg, neg) in cond.plates_with_sign(Sign::Negative) {
                let hit = (0..pos.len()).into_par_iter().find_map_first(|a| {
                    let x = pos.nodes.get(a);
                    neg.nodes.iter().enumerate().find_map(|(b, y)| {
                        let d2 = squared_distance(x, y);
                        (d2 <= tol2).then(|| (a, b, d2.sqrt()))
                    })
                });
                if let Some((node_pos, node_neg, distance)) = hit {
                    return Err(Error::CrossSignCoincidence {
                        plate_pos: ip,
                        node_pos,
                        plate_neg: ineg,
                        node_neg,
                        distance,
                    });
                }
            }
        }
        Ok(cond)
    }

    pub fn plates(&self) -> &[Plate] {
        &self.plates
    }

    pub fn plate(&self, i: usize) -> &Plate {
        &self.plates[i]
    }

    pub fn len(&self) -> usize {
        self.plates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.plates[0].nodes.dim()
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.plates.iter().map(Plate::len).collect()
    }

    pub fn plates_with_sign(&self, sign: Sign) -> impl Iterator<Item = (usize, &Plate)> + '_ {
        self.plates.iter().enumerate().filter(move |(_, p)| p.sign == sign)
    }

    /// Smallest distance between a node of a positive plate and a node of a
    /// negative plate; +∞ when one of the signs is absent.
    pub fn min_cross_sign_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (_, pos) in self.plates_with_sign(Sign::Positive) {
            for (_, neg) in self.plates_with_sign(Sign::Negative) {
                let d2 = (0..pos.len())
                    .into_par_iter()
                    .map(|a| {
                        let x = pos.nodes.get(a);
                        neg.nodes.iter().map(|y| squared_distance(x, y)).fold(f64::INFINITY, f64::min)
                    })
                    .reduce(|| f64::INFINITY, f64::min);
                best = best.min(d2.sqrt());
            }
        }
        best
    }
}

/// Samples every plate and validates the resulting condenser.
pub fn build_condenser(specs: &[PlateSpec], seed: u64) -> Result<Condenser> {
    if specs.is_empty() {
        return Err(Error::InvalidParameter("at least one plate spec is required".into()));
    }
    let plates = specs
        .iter()
        .map(|s| Plate::new(s.sign, s.sample(seed)?))
        .collect::<Result<Vec<_>>>()?;
    Condenser::new(plates)
}
