//! Accelerated projected-gradient solvers for the discrete unconstrained and
//! constrained Gauss problems, capacities, and balayage.
//!
//! The gradient of G with respect to the weights of plate i is 2·W^i, so a
//! step of size 1/L on G is `x − W / row_bound`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_neighbor_spacing, Condenser, Plate, Sign};
use crate::kernel::{
    kernel_matrix, potential_regularized, DiagonalPolicy, DiscreteMeasure, RieszKernel,
    WeightedNodes,
};
use crate::measures::{DiscreteVectorMeasure, ProblemSpec};
use crate::operator::EnergyOperator;
use crate::points::Points;

/// How the step length is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// FISTA with step 1/L and gradient-based momentum restart.
    #[default]
    FixedFromLipschitz,
    /// Monotone FISTA with an expanding step and backtracking; the recorded
    /// energy trace never increases.
    BacktrackingArmijo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative KKT residual at which a run stops.
    pub grad_tol: f64,
    pub step_rule: StepRule,
    /// Number of runs; the first starts from the proportional point, the
    /// others from random feasible points. The lowest energy wins.
    pub restart_count: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            grad_tol: 1e-9,
            step_rule: StepRule::FixedFromLipschitz,
            restart_count: 1,
            seed: crate::geometry::DEFAULT_SEED,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if self.restart_count == 0 {
            return Err(Error::InvalidParameter("restart_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub minimizer: DiscreteVectorMeasure,
    /// G at the minimizer.
    pub energy: f64,
    pub multipliers: Vec<f64>,
    /// Largest KKT violation, in units of `kkt_scale`.
    pub kkt_max_violation: f64,
    pub kkt_scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_cross_sign_distance: f64,
    /// G at every checked iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Weight floor ε_w = 1e−12·a/N separating active from free nodes.
pub fn weight_floor(mass: f64, nodes: usize) -> f64 {
    1e-12 * mass / nodes.max(1) as f64
}

/// Multiplier and violations of the node conditions on one plate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateKkt {
    pub multiplier: f64,
    /// max (w g − W) over nodes with μ < σ − ε_w (≤ 0 when satisfied).
    pub below_cap: f64,
    /// max (W − w g) over nodes with μ > ε_w (≤ 0 when satisfied).
    pub on_support: f64,
}

impl PlateKkt {
    pub fn violation(&self) -> f64 {
        self.below_cap.max(self.on_support).max(0.0)
    }
}

/// Node conditions for one plate. `caps` holds the effective caps, +∞ where
/// unbounded and 0 where the field is infinite.
pub fn plate_kkt(w: &[f64], mu: &[f64], caps: &[f64], g: &[f64], mass: f64) -> PlateKkt {
    let eps = weight_floor(mass, mu.len());
    let movable = |j: usize| caps[j] > 0.0;
    let below_cap = |j: usize| movable(j) && mu[j] < caps[j] - eps;
    let on_support = |j: usize| mu[j] > eps;

    let mut interior: Vec<(f64, f64)> = (0..mu.len())
        .filter(|&j| below_cap(j) && on_support(j))
        .map(|j| (w[j] / g[j], g[j]))
        .collect();
    let multiplier = if !interior.is_empty() {
        weighted_median(&mut interior)
    } else {
        // At cap nodes W ≤ w g, at zero nodes W ≥ w g.
        let hi = (0..mu.len())
            .filter(|&j| below_cap(j))
            .map(|j| w[j] / g[j])
            .fold(f64::INFINITY, f64::min);
        let lo = (0..mu.len())
            .filter(|&j| on_support(j))
            .map(|j| w[j] / g[j])
            .fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        }
    };
    let mut b1 = f64::NEG_INFINITY;
    let mut b2 = f64::NEG_INFINITY;
    for j in 0..mu.len() {
        let d = w[j] - multiplier * g[j];
        if below_cap(j) {
            b1 = b1.max(-d);
        }
        if on_support(j) {
            b2 = b2.max(d);
        }
    }
    PlateKkt { multiplier, below_cap: b1, on_support: b2 }
}

/// Lower weighted median of (value, weight) pairs; ties break toward the
/// earlier entry.
fn weighted_median(items: &mut [(f64, f64)]) -> f64 {
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(v, wt) in items.iter() {
        acc += wt;
        if acc >= 0.5 * total {
            return v;
        }
    }
    items[items.len() - 1].0
}

/// Euclidean projection of `x` onto {0 ≤ y ≤ caps, Σ g y = a}.
///
/// `caps = None` means unbounded. Cap entries may be 0 (node excluded) or
/// +∞.
pub fn project_capped_simplex(x: &[f64], caps: Option<&[f64]>, g: &[f64], a: f64) -> Result<Vec<f64>> {
    let inf = vec![f64::INFINITY; x.len()];
    project_block(x, caps.unwrap_or(&inf), g, a, 0)
}

fn project_block(x: &[f64], caps: &[f64], g: &[f64], a: f64, plate: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if caps.len() != n || g.len() != n {
        return Err(Error::ShapeMismatch("projection inputs differ in length".into()));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("mass target must be positive, got {a}")));
    }
    if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("gauge values must be positive".into()));
    }
    let unbounded = caps.iter().any(|c| c.is_infinite());
    let available: f64 = if unbounded {
        f64::INFINITY
    } else {
        caps.iter().zip(g).map(|(c, gv)| c * gv).sum()
    };
    if available < a * (1.0 - 1e-12) {
        return Err(Error::Infeasible { plate, available, required: a, deficit: a - available });
    }
    if !unbounded && available <= a * (1.0 + 1e-12) {
        return Ok(caps.to_vec());
    }

    let y_at = |t: f64| -> Vec<f64> {
        (0..n)
            .map(|j| if caps[j] > 0.0 { (x[j] - t * g[j]).clamp(0.0, caps[j]) } else { 0.0 })
            .collect()
    };
    let mass_of = |y: &[f64]| -> f64 { y.iter().zip(g).map(|(a, b)| a * b).sum() };

    // Σ g y(t) is nonincreasing in t; bracket the root.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut g2_inf = 0.0;
    let mut m_inf = f64::INFINITY;
    for j in 0..n {
        if caps[j] <= 0.0 {
            continue;
        }
        hi = hi.max(x[j] / g[j]);
        if caps[j].is_finite() {
            lo = lo.min((x[j] - caps[j]) / g[j]);
        } else {
            g2_inf += g[j] * g[j];
            m_inf = m_inf.min(x[j] / g[j]);
        }
    }
    if g2_inf > 0.0 {
        lo = lo.min(m_inf - a / g2_inf);
    }
    let tol = 1e-12 * a;
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        t = 0.5 * (lo + hi);
        let h = mass_of(&y_at(t));
        if (h - a).abs() <= tol || t <= lo || t >= hi {
            break;
        }
        if h > a {
            lo = t;
        } else {
            hi = t;
        }
    }

    // Solve exactly for t on the active set found by bisection.
    let y = y_at(t);
    let (mut fixed, mut gx, mut gg) = (0.0, 0.0, 0.0);
    for j in 0..n {
        if caps[j] <= 0.0 {
            continue;
        }
        if y[j] <= 0.0 {
            continue;
        } else if y[j] >= caps[j] {
            fixed += g[j] * caps[j];
        } else {
            gx += g[j] * x[j];
            gg += g[j] * g[j];
        }
    }
    if gg > 0.0 {
        let t_exact = (gx + fixed - a) / gg;
        let y_exact = y_at(t_exact);
        let same_set = (0..n).all(|j| {
            let free = y[j] > 0.0 && y[j] < caps[j];
            let free_exact = y_exact[j] > 0.0 && y_exact[j] < caps[j];
            free == free_exact
        });
        if same_set && (mass_of(&y_exact) - a).abs() <= (mass_of(&y) - a).abs() {
            return Ok(y_exact);
        }
    }
    Ok(y)
}

/// Problem data resolved against an operator, flattened over plates.
struct Prepared {
    offsets: Vec<usize>,
    field: Vec<f64>,
    caps: Vec<f64>,
    gauge: Vec<f64>,
    mass: Vec<f64>,
    row_bound: f64,
}

impl Prepared {
    fn new(op: &EnergyOperator, spec: &ProblemSpec) -> Result<Self> {
        let counts: Vec<usize> = (0..op.plate_count()).map(|i| op.plate_len(i)).collect();
        spec.validate_counts(&counts, op.kernel().dim())?;
        let field_blocks = op.field_values(spec)?;
        spec.check_feasible(&field_blocks)?;
        let mut caps = Vec::new();
        let mut gauge = Vec::new();
        for (c, f) in spec.plates.iter().zip(&field_blocks) {
            for (j, fv) in f.iter().enumerate() {
                caps.push(if fv.is_finite() { c.caps.cap(j) } else { 0.0 });
            }
            gauge.extend_from_slice(&c.gauge);
        }
        Ok(Self {
            offsets: op.registry().offsets().to_vec(),
            field: field_blocks.concat(),
            caps,
            gauge,
            mass: spec.plates.iter().map(|c| c.mass).collect(),
            row_bound: op.row_bound().max(f64::MIN_POSITIVE),
        })
    }

    fn plates(&self) -> usize {
        self.mass.len()
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for i in 0..self.plates() {
            let r = self.range(i);
            out.extend(project_block(
                &x[r.clone()],
                &self.caps[r.clone()],
                &self.gauge[r],
                self.mass[i],
                i,
            )?);
        }
        Ok(out)
    }

    fn blocks(&self, x: &[f64]) -> DiscreteVectorMeasure {
        DiscreteVectorMeasure::from_blocks_unchecked(
            (0..self.plates()).map(|i| x[self.range(i)].to_vec()).collect(),
        )
    }

    fn flatten(&self, mu: &DiscreteVectorMeasure) -> Result<Vec<f64>> {
        let counts: Vec<usize> = (0..self.plates()).map(|i| self.range(i).len()).collect();
        crate::measures::check_counts(&counts, mu.blocks(), "start")?;
        Ok(mu.blocks().concat())
    }

    /// Proportional start μ^i = a_i σ^i / ⟨g_i, σ^i⟩ on finite-field nodes,
    /// or a_i / Σ g_i uniformly when unbounded.
    fn proportional_start(&self) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.caps.len());
        for i in 0..self.plates() {
            let r = self.range(i);
            let base: Vec<f64> = self.caps[r.clone()]
                .iter()
                .map(|&c| if c.is_infinite() { 1.0 } else { c })
                .collect();
            let total: f64 = base.iter().zip(&self.gauge[r.clone()]).map(|(b, g)| b * g).sum();
            x.extend(base.iter().map(|b| self.mass[i] * b / total));
        }
        // Clip into the caps (the unbounded/finite mix is not always inside).
        self.project(&x)
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.caps.len());
        for i in 0..self.plates() {
            let r = self.range(i);
            let draws: Vec<f64> = self.caps[r.clone()]
                .iter()
                .map(|&c| if c > 0.0 { Exp1.sample(rng) } else { 0.0 })
                .collect();
            let total: f64 = draws.iter().zip(&self.gauge[r]).map(|(d, g)| d * g).sum();
            x.extend(draws.iter().map(|d| self.mass[i] * d / total));
        }
        self.project(&x)
    }

    fn pairing(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.field).map(|(&w, &f)| if w != 0.0 { w * f } else { 0.0 }).sum()
    }

    /// W at a point given K·R at that point.
    fn weighted(&self, op: &EnergyOperator, pot: &[f64]) -> Vec<f64> {
        let mut w = op.registry().plate_values_flat(pot);
        for (a, f) in w.iter_mut().zip(&self.field) {
            *a += f;
        }
        w
    }

    /// Gauss energy from the resultant, its potential and the weights.
    fn energy(&self, r: &[f64], pot: &[f64], x: &[f64]) -> f64 {
        dot(r, pot) + 2.0 * self.pairing(x)
    }

    fn kkt(&self, w: &[f64], x: &[f64]) -> Vec<PlateKkt> {
        (0..self.plates())
            .map(|i| {
                let r = self.range(i);
                plate_kkt(
                    &w[r.clone()],
                    &x[r.clone()],
                    &self.caps[r.clone()],
                    &self.gauge[r],
                    self.mass[i],
                )
            })
            .collect()
    }

    /// G(b) − G(a) without cancellation between two large energies.
    fn energy_change(
        &self,
        r_a: &[f64],
        p_a: &[f64],
        a: &[f64],
        r_b: &[f64],
        p_b: &[f64],
        b: &[f64],
    ) -> f64 {
        let quad: f64 = r_a
            .iter()
            .zip(r_b)
            .zip(p_a.iter().zip(p_b))
            .map(|((ra, rb), (pa, pb))| (rb - ra) * (pa + pb))
            .sum();
        let lin: f64 = a
            .iter()
            .zip(b)
            .zip(&self.field)
            .map(|((&u, &v), &f)| if u != v { (v - u) * f } else { 0.0 })
            .sum();
        quad + 2.0 * lin
    }

    /// Flat vector of w_i g_i.
    fn multiplier_field(&self, kkt: &[PlateKkt]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.gauge.len());
        for (i, k) in kkt.iter().enumerate() {
            out.extend(self.gauge[self.range(i)].iter().map(|g| k.multiplier * g));
        }
        out
    }

    /// Magnitude of the potential terms, for relative tolerances.
    fn scale(&self, op: &EnergyOperator, pot: &[f64]) -> f64 {
        let p = op.registry().plate_values_flat(pot);
        let pm = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fm = self.field.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
        (pm + fm).max(f64::MIN_POSITIVE)
    }

    fn gradient_step(&self, y: &[f64], w: &[f64], step: f64) -> Vec<f64> {
        y.iter()
            .zip(w)
            .zip(&self.caps)
            .map(|((&yv, &wv), &c)| if c > 0.0 { yv - step * wv } else { 0.0 })
            .collect()
    }
}

/// ⟨c, b − a⟩.
fn drift(c: &[f64], a: &[f64], b: &[f64]) -> f64 {
    c.iter().zip(a.iter().zip(b)).map(|(c, (a, b))| c * (b - a)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn combine(a: &[f64], b: &[f64], c: &[f64], cb: f64, cc: f64) -> Vec<f64> {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x + cb * y + cc * z).collect()
}

/// Callback receiving every checked iterate and its G value.
pub type Observer<'a> = &'a mut dyn FnMut(&DiscreteVectorMeasure, f64);

/// Solves with finite caps on at least one plate (any plate may be unbounded).
pub fn solve_constrained(
    cond: &Condenser,
    spec: &ProblemSpec,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    spec.validate(cond)?;
    let op = EnergyOperator::new(cond, kernel, diag)?;
    solve_with(&op, spec, opts)
}

/// Solves with all caps unbounded. Aborts with a short-circuit error when
/// mass piles up on an opposite-sign pair closer than 1e−9.
pub fn solve_unconstrained(
    cond: &Condenser,
    spec: &ProblemSpec,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if !spec.is_unconstrained() {
        return Err(Error::InvalidParameter(
            "solve_unconstrained needs unbounded caps on every plate".into(),
        ));
    }
    solve_constrained(cond, spec, kernel, diag, opts)
}

/// Runs `opts.restart_count` solves on a prepared operator and keeps the one
/// with the lowest energy (converged runs first).
pub fn solve_with(op: &EnergyOperator, spec: &ProblemSpec, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    let prep = Prepared::new(op, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<SolveReport> = None;
    for run in 0..opts.restart_count {
        let start = if run == 0 { prep.proportional_start()? } else { prep.random_start(&mut rng)? };
        let report = run_from(op, &prep, opts, start, None)?;
        let better = match &best {
            None => true,
            Some(b) => (report.converged, -report.energy) > (b.converged, -b.energy),
        };
        if better {
            best = Some(report);
        }
    }
    Ok(best.expect("restart_count >= 1"))
}

/// One run from a given start (projected onto the feasible set first).
pub fn solve_from(
    op: &EnergyOperator,
    spec: &ProblemSpec,
    opts: &SolveOptions,
    start: &DiscreteVectorMeasure,
    observer: Option<Observer<'_>>,
) -> Result<SolveReport> {
    opts.validate()?;
    let prep = Prepared::new(op, spec)?;
    let x = prep.project(&prep.flatten(start)?)?;
    run_from(op, &prep, opts, x, observer)
}

/// A random feasible point drawn as in the random restarts.
pub fn random_feasible(op: &EnergyOperator, spec: &ProblemSpec, seed: u64) -> Result<DiscreteVectorMeasure> {
    let prep = Prepared::new(op, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(prep.blocks(&prep.random_start(&mut rng)?))
}

fn run_from(
    op: &EnergyOperator,
    prep: &Prepared,
    opts: &SolveOptions,
    mut x: Vec<f64>,
    mut observer: Option<Observer<'_>>,
) -> Result<SolveReport> {
    let reg = op.registry();
    let mut r_x = reg.resultant_flat(&x);
    let mut p_x = op.matrix().matvec(&r_x);
    let mut g_x = prep.energy(&r_x, &p_x, &x);
    let mut x_prev = x.clone();
    let mut p_prev = p_x.clone();
    let mut t = 1.0f64;
    // Armijo state: current step and the iterate's extrapolation point.
    let base_step = 1.0 / prep.row_bound;
    let mut step = base_step;
    let mut y = x.clone();
    let mut p_y = p_x.clone();

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt;
    let mut scale;
    loop {
        iterations += 1;
        trace.push(g_x);
        if let Some(obs) = observer.as_mut() {
            obs(&prep.blocks(&x), g_x);
        }
        let w_x = prep.weighted(op, &p_x);
        kkt = prep.kkt(&w_x, &x);
        scale = prep.scale(op, &p_x);
        let violation = kkt.iter().map(PlateKkt::violation).fold(0.0, f64::max);
        if violation <= opts.grad_tol * scale {
            converged = true;
            break;
        }
        check_short_circuit(op, prep, &x)?;
        if iterations >= opts.max_iters {
            break;
        }

        match opts.step_rule {
            StepRule::FixedFromLipschitz => {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                let y = combine(&x, &x, &x_prev, beta, -beta);
                let p_y = combine(&p_x, &p_x, &p_prev, beta, -beta);
                let w_y = prep.weighted(op, &p_y);
                let z = prep.project(&prep.gradient_step(&y, &w_y, base_step))?;
                // Gradient restart: drop momentum when it points uphill.
                let uphill: f64 =
                    y.iter().zip(&z).zip(&x).map(|((yv, zv), xv)| (yv - zv) * (zv - xv)).sum();
                t = if uphill > 0.0 { 1.0 } else { t_next };
                x_prev = std::mem::replace(&mut x, z);
                p_prev = std::mem::take(&mut p_x);
                r_x = reg.resultant_flat(&x);
                p_x = op.matrix().matvec(&r_x);
                g_x = prep.energy(&r_x, &p_x, &x);
            }
            StepRule::BacktrackingArmijo => {
                // Changes are measured on the Lagrangian with the current
                // multipliers. On the feasible set it equals G, and it does
                // not see the rounding drift of ⟨g_i, μ^i⟩.
                let wg = prep.multiplier_field(&kkt);
                let r_y = reg.resultant_flat(&y);
                let mut w_y = prep.weighted(op, &p_y);
                for (a, b) in w_y.iter_mut().zip(&wg) {
                    *a -= b;
                }
                let mut s = (step * 1.5).max(base_step);
                let (z, r_z, p_z) = loop {
                    let z = prep.project(&prep.gradient_step(&y, &w_y, s))?;
                    let r_z = reg.resultant_flat(&z);
                    let p_z = op.matrix().matvec(&r_z);
                    let rise = prep.energy_change(&r_y, &p_y, &y, &r_z, &p_z, &z)
                        - 2.0 * drift(&wg, &y, &z);
                    let d: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
                    let model = 2.0 * dot(&w_y, &d) + dot(&d, &d) / s;
                    if rise <= model || s <= base_step {
                        break (z, r_z, p_z);
                    }
                    s = (0.5 * s).max(base_step);
                };
                step = s;
                let change = prep.energy_change(&r_x, &p_x, &x, &r_z, &p_z, &z)
                    - 2.0 * drift(&wg, &x, &z);
                if change <= 0.0 {
                    let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                    // z is the new iterate, so the z term and the x term merge.
                    let c = (t - 1.0) / t_next;
                    y = combine(&z, &z, &x, c, -c);
                    p_y = combine(&p_z, &p_z, &p_x, c, -c);
                    t = t_next;
                    x = z;
                    r_x = r_z;
                    p_x = p_z;
                    // Accumulating the exact change keeps the trace monotone.
                    g_x += change;
                } else {
                    // Reject z, keep x and restart momentum.
                    y = x.clone();
                    p_y = p_x.clone();
                    t = 1.0;
                }
            }
        }
    }
    let violation = kkt.iter().map(PlateKkt::violation).fold(0.0, f64::max);
    Ok(SolveReport {
        minimizer: prep.blocks(&x),
        energy: prep.energy(&r_x, &p_x, &x),
        multipliers: kkt.iter().map(|k| k.multiplier).collect(),
        kkt_max_violation: violation / scale,
        kkt_scale: scale,
        iterations,
        converged,
        min_cross_sign_distance: op.min_cross_sign_distance(),
        trace,
    })
}

fn check_short_circuit(op: &EnergyOperator, prep: &Prepared, x: &[f64]) -> Result<()> {
    for pair in op.close_pairs() {
        let ip = prep.offsets[pair.plate_pos] + pair.node_pos;
        let ineg = prep.offsets[pair.plate_neg] + pair.node_neg;
        let share_pos = x[ip] * prep.gauge[ip] / prep.mass[pair.plate_pos];
        let share_neg = x[ineg] * prep.gauge[ineg] / prep.mass[pair.plate_neg];
        if share_pos >= 0.5 && share_neg >= 0.5 {
            return Err(Error::ShortCircuit {
                plate_pos: pair.plate_pos,
                plate_neg: pair.plate_neg,
                distance: pair.distance,
            });
        }
    }
    Ok(())
}

/// Discrete capacity 1 / min{κ(μ, μ) : μ ≥ 0, μ(nodes) = 1}.
pub fn capacity(
    kernel: &RieszKernel,
    nodes: &Points,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
) -> Result<f64> {
    Ok(capacity_report(kernel, nodes, diag, opts)?.1)
}

/// Capacity together with the solve that produced it; the minimizer is the
/// discrete capacitary (equilibrium) measure.
pub fn capacity_report(
    kernel: &RieszKernel,
    nodes: &Points,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
) -> Result<(SolveReport, f64)> {
    if nodes.len() < 2 {
        return Err(Error::Degenerate("capacity needs at least two nodes".into()));
    }
    let cond = Condenser::new(vec![Plate::new(Sign::Positive, nodes.clone())?])?;
    let spec = ProblemSpec::unconstrained(&cond, &[1.0]);
    let report = solve_unconstrained(&cond, &spec, kernel, diag, opts)?;
    if report.energy <= 0.0 {
        return Err(Error::Degenerate(format!(
            "minimum energy {} is not positive; capacity is infinite",
            report.energy
        )));
    }
    let cap = 1.0 / report.energy;
    Ok((report, cap))
}

/// Balayage of ζ onto `target`: argmin over ν ≥ 0 on the target nodes of
/// ‖ζ − ν‖² in the energy norm.
pub fn balayage(
    kernel: &RieszKernel,
    zeta: &DiscreteMeasure,
    target: &Points,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
) -> Result<DiscreteMeasure> {
    opts.validate()?;
    if target.is_empty() {
        return Err(Error::InvalidParameter("balayage target has no nodes".into()));
    }
    target.check_dim(kernel.dim())?;
    zeta.points().check_dim(kernel.dim())?;
    let k = kernel_matrix(kernel, target, target, diag)?;
    let spacing = if diag.needs_spacing() {
        nearest_neighbor_spacing(target)?
    } else {
        vec![0.0; target.len()]
    };
    // b = κ(·, ζ) on the target; minimize νᵀKν − 2 bᵀν.
    let b = potential_regularized(kernel, zeta, target, diag, &spacing)?;
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let step = 1.0 / k.max_abs_row_sum().max(f64::MIN_POSITIVE);
    let n = target.len();
    let mut x = vec![0.0; n];
    let mut x_prev = x.clone();
    let mut p_x = vec![0.0; n];
    let mut p_prev = p_x.clone();
    let mut t = 1.0f64;
    for _ in 0..opts.max_iters {
        // Residual: (Kν − b) ≥ 0 everywhere, = 0 on the support.
        let residual = (0..n)
            .map(|j| {
                let d = p_x[j] - b[j];
                if x[j] > 0.0 { d.abs() } else { (-d).max(0.0) }
            })
            .fold(0.0, f64::max);
        if residual <= opts.grad_tol * scale {
            return DiscreteMeasure::new(target.clone(), x);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let y = combine(&x, &x, &x_prev, beta, -beta);
        let p_y = combine(&p_x, &p_x, &p_prev, beta, -beta);
        let z: Vec<f64> = (0..n).map(|j| (y[j] - step * (p_y[j] - b[j])).max(0.0)).collect();
        let uphill: f64 = (0..n).map(|j| (y[j] - z[j]) * (z[j] - x[j])).sum();
        t = if uphill > 0.0 { 1.0 } else { t_next };
        x_prev = std::mem::replace(&mut x, z);
        p_prev = std::mem::replace(&mut p_x, k.matvec(&x));
    }
    let residual = (0..n)
        .map(|j| {
            let d = p_x[j] - b[j];
            if x[j] > 0.0 { d.abs() } else { (-d).max(0.0) }
        })
        .fold(0.0, f64::max);
    Err(Error::NonConvergence { iterations: opts.max_iters, residual: residual / scale })
}
