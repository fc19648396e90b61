//! Certification of solver output: node conditions with multipliers, the
//! variational inequality against random feasible measures, uniqueness of
//! the resultant, duality, and continuity under shrinking constraints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Condenser, Plate, Sign};
use crate::kernel::{DiagonalPolicy, DiscreteMeasure, RieszKernel, WeightedNodes};
use crate::measures::{
    weighted_potential, Caps, DiscreteVectorMeasure, ExternalField, ProblemSpec,
};
use crate::operator::EnergyOperator;
use crate::points::Points;
use crate::solver::{
    plate_kkt, project_capped_simplex, random_feasible, solve_from, solve_with, SolveOptions,
    SolveReport,
};

/// Number of random feasible measures used for the variational inequality.
pub const VARIATIONAL_SAMPLES: usize = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KktReport {
    pub multipliers: Vec<f64>,
    /// Per plate: max (w g − W) over nodes below their cap, clamped at 0.
    pub below_cap_violation: Vec<f64>,
    /// Per plate: max (W − w g) over nodes carrying mass, clamped at 0.
    pub support_violation: Vec<f64>,
    /// Magnitude of the potentials; violations are compared to `tol · scale`.
    pub scale: f64,
    pub tol: f64,
    pub pass: bool,
    /// min over sampled feasible ν of Σ ⟨W^i, ν^i − μ^i⟩.
    pub variational_min: f64,
    /// Slack allowed for the variational inequality at this tolerance.
    pub variational_slack: f64,
    pub variational_pass: bool,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.below_cap_violation
            .iter()
            .chain(&self.support_violation)
            .fold(0.0, |m, v| m.max(*v))
    }
}

fn check_candidate(
    cond: &Condenser,
    spec: &ProblemSpec,
    mu: &DiscreteVectorMeasure,
    field: &[Vec<f64>],
) -> Result<()> {
    let bad = |m: String| Err(Error::InfeasibleCandidate(m));
    if mu.blocks().len() != cond.len() {
        return bad("plate count differs from the condenser".into());
    }
    for (i, (c, w)) in spec.plates.iter().zip(mu.blocks()).enumerate() {
        if w.len() != cond.plate(i).len() {
            return bad(format!("plate {i} has the wrong number of weights"));
        }
        for (j, &x) in w.iter().enumerate() {
            let cap = c.caps.cap(j);
            if x < 0.0 || x > cap * (1.0 + 1e-9) {
                return bad(format!("plate {i} node {j}: weight {x} outside [0, {cap}]"));
            }
            if x > 0.0 && field[i][j].is_infinite() {
                return bad(format!("plate {i} node {j}: mass on a node with infinite field"));
            }
        }
        let m: f64 = w.iter().zip(&c.gauge).map(|(a, b)| a * b).sum();
        if (m - c.mass).abs() > 1e-9 * c.mass {
            return bad(format!("plate {i}: ⟨g, μ⟩ = {m}, target {}", c.mass));
        }
    }
    Ok(())
}

/// Checks the node conditions of optimality for `candidate`. Potentials are
/// computed directly from the kernel, without the solver's operator.
pub fn kkt_check(
    cond: &Condenser,
    spec: &ProblemSpec,
    candidate: &DiscreteVectorMeasure,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    tol: f64,
) -> Result<KktReport> {
    spec.validate(cond)?;
    let field = spec.field_values(cond, kernel, diag)?;
    check_candidate(cond, spec, candidate, &field)?;
    let potentials: Vec<Vec<f64>> = (0..cond.len())
        .map(|i| weighted_potential(cond, candidate, spec, kernel, diag, i))
        .collect::<Result<_>>()?;

    let mut scale_pot = 0.0f64;
    let mut scale_field = 0.0f64;
    for (w, f) in potentials.iter().zip(&field) {
        for (a, b) in w.iter().zip(f) {
            if b.is_finite() {
                scale_pot = scale_pot.max((a - b).abs());
                scale_field = scale_field.max(b.abs());
            }
        }
    }
    let scale = (scale_pot + scale_field).max(f64::MIN_POSITIVE);

    let mut multipliers = Vec::new();
    let mut below = Vec::new();
    let mut support = Vec::new();
    for (i, c) in spec.plates.iter().enumerate() {
        let caps: Vec<f64> = (0..cond.plate(i).len())
            .map(|j| if field[i][j].is_finite() { c.caps.cap(j) } else { 0.0 })
            .collect();
        let k = plate_kkt(&potentials[i], candidate.plate(i), &caps, &c.gauge, c.mass);
        multipliers.push(k.multiplier);
        below.push(k.below_cap.max(0.0));
        support.push(k.on_support.max(0.0));
    }
    let max_violation = below.iter().chain(&support).fold(0.0f64, |m, v| m.max(*v));
    let pass = max_violation <= tol * scale;

    // Σ⟨W − w g, ν − μ⟩ ≥ −δ Σ ⟨|ν − μ|, g⟩/g_min; with ⟨g, ν − μ⟩ = 0 the
    // left side equals Σ⟨W, ν − μ⟩.
    let slack: f64 = spec
        .plates
        .iter()
        .map(|c| {
            let gmin = c.gauge.iter().cloned().fold(f64::INFINITY, f64::min);
            2.0 * c.mass / gmin
        })
        .sum::<f64>()
        * tol
        * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::geometry::DEFAULT_SEED);
    let mut variational_min = f64::INFINITY;
    for _ in 0..VARIATIONAL_SAMPLES {
        let mut total = 0.0;
        for (i, c) in spec.plates.iter().enumerate() {
            let n = cond.plate(i).len();
            let draws: Vec<f64> = (0..n)
                .map(|j| if field[i][j].is_finite() { Exp1.sample(&mut rng) } else { 0.0 })
                .collect();
            let s: f64 = draws.iter().zip(&c.gauge).map(|(d, g)| d * g).sum();
            let x: Vec<f64> = draws.iter().map(|d| c.mass * d / s).collect();
            let caps: Vec<f64> = (0..n)
                .map(|j| if field[i][j].is_finite() { c.caps.cap(j) } else { 0.0 })
                .collect();
            let nu = project_capped_simplex(&x, Some(&caps), &c.gauge, c.mass)?;
            for j in 0..n {
                let d = nu[j] - candidate.plate(i)[j];
                if d != 0.0 {
                    total += potentials[i][j] * d;
                }
            }
        }
        variational_min = variational_min.min(total);
    }
    Ok(KktReport {
        multipliers,
        below_cap_violation: below,
        support_violation: support,
        scale,
        tol,
        pass,
        variational_min,
        variational_slack: slack,
        variational_pass: variational_min >= -slack,
    })
}

/// Moves `fraction` of every plate's ⟨g, μ⟩ mass from the first half of the
/// nodes onto the second half, filling spare capacity in node order. The
/// result stays feasible for `spec`.
pub fn move_mass(
    spec: &ProblemSpec,
    mu: &DiscreteVectorMeasure,
    fraction: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(mu.blocks().len());
    for (i, (c, w)) in spec.plates.iter().zip(mu.blocks()).enumerate() {
        let n = w.len();
        let half = n / 2;
        let mut w = w.clone();
        let source: f64 = (0..half).map(|j| w[j] * c.gauge[j]).sum();
        let room: f64 = (half..n).map(|j| (c.caps.cap(j) - w[j]) * c.gauge[j]).sum();
        let amount = (fraction * c.mass).min(source).min(room);
        if amount <= 0.0 {
            return Err(Error::Degenerate(format!("plate {i}: no mass can be moved")));
        }
        for x in &mut w[..half] {
            *x *= 1.0 - amount / source;
        }
        let mut left = amount;
        for j in half..n {
            if left <= 0.0 {
                break;
            }
            let take = ((c.caps.cap(j) - w[j]) * c.gauge[j]).min(left);
            w[j] += take / c.gauge[j];
            left -= take;
        }
        out.push(w);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub energies: Vec<f64>,
    /// max over pairs of ‖Rλ_p − Rλ_q‖.
    pub max_distance: f64,
    /// `max_distance / ‖Rλ_1‖` (absolute when the norm vanishes).
    pub relative: f64,
}

/// Solves `trials` times from independent random feasible points and
/// compares the resultants.
pub fn uniqueness_check(
    cond: &Condenser,
    spec: &ProblemSpec,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
    trials: usize,
) -> Result<UniquenessReport> {
    if trials < 2 {
        return Err(Error::InvalidParameter("uniqueness_check needs at least 2 trials".into()));
    }
    spec.validate(cond)?;
    let op = EnergyOperator::new(cond, kernel, diag)?;
    let mut resultants = Vec::with_capacity(trials);
    let mut energies = Vec::with_capacity(trials);
    for p in 0..trials {
        let start = random_feasible(&op, spec, opts.seed.wrapping_add(p as u64))?;
        let rep = solve_from(&op, spec, opts, &start, None)?;
        if !rep.converged {
            return Err(Error::NonConvergence {
                iterations: rep.iterations,
                residual: rep.kkt_max_violation,
            });
        }
        resultants.push(op.registry().resultant_weights(&rep.minimizer));
        energies.push(rep.energy);
    }
    let k = op.matrix();
    let mut max_distance = 0.0f64;
    for p in 0..trials {
        for q in p + 1..trials {
            let d: Vec<f64> = resultants[p].iter().zip(&resultants[q]).map(|(a, b)| a - b).collect();
            max_distance = max_distance.max(k.bilinear(&d, &d).max(0.0).sqrt());
        }
    }
    let norm = k.bilinear(&resultants[0], &resultants[0]).max(0.0).sqrt();
    let relative = if norm > 0.0 { max_distance / norm } else { max_distance };
    Ok(UniquenessReport { energies, max_distance, relative })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualityReport {
    /// q = 1/(σ(F) − 1).
    pub q: f64,
    pub constrained: SolveReport,
    /// θ = q(σ − λ).
    pub theta: Vec<f64>,
    pub theta_mass: f64,
    /// Node conditions of θ for the unconstrained problem with f = −q κ(·, σ).
    pub kkt: KktReport,
    /// −W^θ averaged over supp θ.
    pub eta: f64,
    /// (max − min) of W^θ over supp θ, divided by the KKT scale.
    pub spread: f64,
    pub theta_energy: f64,
    pub direct_energy: f64,
    pub relative_gap: f64,
}

/// Solves the constrained problem with caps σ on F, forms θ = q(σ − λ), and
/// certifies θ as the solution of the unconstrained problem with external
/// field f = −q κ(·, σ).
pub fn duality_check(
    f_nodes: &Points,
    sigma: &DiscreteMeasure,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
    tol: f64,
) -> Result<DualityReport> {
    if kernel.alpha() > 2.0 {
        return Err(Error::InvalidParameter("duality needs alpha <= 2".into()));
    }
    if sigma.points() != f_nodes {
        return Err(Error::ShapeMismatch("sigma must live on the nodes of F".into()));
    }
    let total = sigma.total_mass();
    if total <= 1.0 {
        return Err(Error::InvalidParameter(format!("sigma(F) = {total} must exceed 1")));
    }
    let q = 1.0 / (total - 1.0);
    let cond = Condenser::new(vec![Plate::new(Sign::Positive, f_nodes.clone())?])?;
    let op = EnergyOperator::new(&cond, kernel, diag)?;

    let primal = ProblemSpec::constrained(&cond, &[1.0], vec![sigma.weights().to_vec()]);
    let constrained = solve_with(&op, &primal, opts)?;
    if !constrained.converged {
        return Err(Error::NonConvergence {
            iterations: constrained.iterations,
            residual: constrained.kkt_max_violation,
        });
    }
    let theta: Vec<f64> = sigma
        .weights()
        .iter()
        .zip(constrained.minimizer.plate(0))
        .map(|(s, l)| (q * (s - l)).max(0.0))
        .collect();
    let theta_mass: f64 = theta.iter().sum();

    let zeta = sigma.clone().into_signed().scaled(-q);
    let dual = ProblemSpec::unconstrained(&cond, &[1.0]).with_field(ExternalField::RieszOf(zeta));
    // θ carries mass 1 up to rounding in λ; renormalize for the check.
    let theta_measure =
        DiscreteVectorMeasure::new(&cond, vec![theta.iter().map(|t| t / theta_mass).collect()])?;
    let kkt = kkt_check(&cond, &dual, &theta_measure, kernel, diag, tol)?;

    let w = weighted_potential(&cond, &theta_measure, &dual, kernel, diag, 0)?;
    let eps = crate::solver::weight_floor(1.0, theta.len());
    let on_support: Vec<f64> = w
        .iter()
        .zip(theta_measure.plate(0))
        .filter(|(_, &t)| t > eps)
        .map(|(v, _)| *v)
        .collect();
    let (lo, hi) = on_support
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let eta = -on_support.iter().sum::<f64>() / on_support.len().max(1) as f64;
    let spread = if on_support.is_empty() { 0.0 } else { (hi - lo) / kkt.scale };

    let field = op.field_values(&dual)?;
    let theta_energy = op.gauss_energy(&theta_measure, &field);
    let direct = solve_with(&op, &dual, opts)?;
    if !direct.converged {
        return Err(Error::NonConvergence {
            iterations: direct.iterations,
            residual: direct.kkt_max_violation,
        });
    }
    let relative_gap =
        (theta_energy - direct.energy).abs() / direct.energy.abs().max(f64::MIN_POSITIVE);
    Ok(DualityReport {
        q,
        constrained,
        theta,
        theta_mass,
        kkt,
        eta,
        spread,
        theta_energy,
        direct_energy: direct.energy,
        relative_gap,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub energies: Vec<f64>,
    pub limit_energy: f64,
    /// G_{ℓ+1} ≥ G_ℓ up to 1e−9 relative.
    pub nondecreasing: bool,
    /// |G_last − G_limit| / |G_limit|.
    pub final_relative_gap: f64,
    /// ‖Rλ_ℓ − Rλ_{ℓ+1}‖ for successive levels.
    pub successive_distances: Vec<f64>,
    /// ‖Rλ_ℓ − Rλ_limit‖.
    pub distances_to_limit: Vec<f64>,
    pub reports: Vec<SolveReport>,
}

fn finite_mask(field: &[Vec<f64>]) -> Vec<Vec<bool>> {
    field.iter().map(|f| f.iter().map(|v| v.is_finite()).collect()).collect()
}

/// Solves a chain of problems on one condenser whose feasible sets shrink
/// toward `limit`. Nodes are removed from a level by giving them an infinite
/// field, so A_ℓ is the set of nodes with finite field.
pub fn continuity_check(
    cond: &Condenser,
    levels: &[ProblemSpec],
    limit: &ProblemSpec,
    kernel: &RieszKernel,
    diag: DiagonalPolicy,
    opts: &SolveOptions,
) -> Result<ContinuityReport> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("continuity_check needs at least one level".into()));
    }
    let op = EnergyOperator::new(cond, kernel, diag)?;
    let chain: Vec<&ProblemSpec> = levels.iter().chain(std::iter::once(limit)).collect();
    let mut masks = Vec::with_capacity(chain.len());
    for spec in &chain {
        spec.validate(cond)?;
        masks.push(finite_mask(&op.field_values(spec)?));
    }
    for (l, pair) in chain.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        for (i, (pa, pb)) in a.plates.iter().zip(&b.plates).enumerate() {
            if pa.mass != pb.mass || pa.gauge != pb.gauge {
                return Err(Error::InvalidParameter(format!(
                    "level {l}: mass and gauge must stay fixed along the chain"
                )));
            }
            for j in 0..cond.plate(i).len() {
                if masks[l + 1][i][j] && !masks[l][i][j] {
                    return Err(Error::InvalidParameter(format!(
                        "level {l}: node sets must be nested"
                    )));
                }
                if pb.caps.cap(j) > pa.caps.cap(j) {
                    return Err(Error::InvalidParameter(format!(
                        "level {l}: caps must be nonincreasing"
                    )));
                }
            }
            if matches!(pa.caps, Caps::Finite(_)) && matches!(pb.caps, Caps::Unbounded) {
                return Err(Error::InvalidParameter(format!(
                    "level {l}: caps must be nonincreasing"
                )));
            }
        }
    }

    let mut reports = Vec::with_capacity(chain.len());
    for spec in &chain {
        let rep = solve_with(&op, spec, opts)?;
        if !rep.converged {
            return Err(Error::NonConvergence {
                iterations: rep.iterations,
                residual: rep.kkt_max_violation,
            });
        }
        reports.push(rep);
    }
    let limit_report = reports.pop().expect("limit level");
    let energies: Vec<f64> = reports.iter().map(|r| r.energy).collect();
    let nondecreasing = energies
        .windows(2)
        .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(w[1].abs()));
    let last = *energies.last().expect("nonempty");
    let final_relative_gap =
        (last - limit_report.energy).abs() / limit_report.energy.abs().max(f64::MIN_POSITIVE);

    let res: Vec<Vec<f64>> =
        reports.iter().map(|r| op.registry().resultant_weights(&r.minimizer)).collect();
    let res_limit = op.registry().resultant_weights(&limit_report.minimizer);
    let dist = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        op.matrix().bilinear(&d, &d).max(0.0).sqrt()
    };
    let successive_distances = res.windows(2).map(|w| dist(&w[0], &w[1])).collect();
    let distances_to_limit = res.iter().map(|r| dist(r, &res_limit)).collect();
    Ok(ContinuityReport {
        energies,
        limit_energy: limit_report.energy,
        nondecreasing,
        final_relative_gap,
        successive_distances,
        distances_to_limit,
        reports,
    })
}
