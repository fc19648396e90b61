//! Acceptance suite. Each test prints one `criterion N ...: PASS|FAIL` line
//! to stderr (uncaptured) and then asserts.

#[path = "../../core/tests/support/enumeration.rs"]
mod enumeration;

use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riesz_cli::config::{Outcome, Problem};
use riesz_cli::experiments::{
    capacity_sweep, continuity, duality, short_circuit, touching_balls_problem, zu_problem,
    CapacitySweepParams, Common, ContinuityParams, DualityParams, ShortCircuitParams,
    TouchingBallsParams,
};
use riesz_core::geometry::sample_sphere;
use riesz_core::kelvin::{invert_point, kelvin_transform};
use riesz_core::kernel::{
    mutual_energy, DiagonalPolicy, DiscreteMeasure, RieszKernel, SignedDiscreteMeasure,
    WeightedNodes,
};
use riesz_core::measures::{weighted_potential, DiscreteVectorMeasure, ProblemSpec};
use riesz_core::points::{distance, Points};
use riesz_core::solver::{balayage, solve_constrained, SolveOptions, StepRule};
use riesz_core::verify::{kkt_check, move_mass, uniqueness_check};

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let word = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {name}: {word} ({detail})");
    assert!(pass, "criterion {n} {name}: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Two-sphere condenser, r1 = 1, r2 = 2, 2000 nodes per plate.
const ZU_NODES: usize = 2000;

fn zu_unconstrained() -> &'static (Problem, Outcome) {
    static CELL: OnceLock<(Problem, Outcome)> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = zu_problem(1.0, 2.0, ZU_NODES, None, &Common::default()).unwrap();
        let out = p.solve().unwrap();
        (p, out)
    })
}

fn zu_loose() -> &'static (Problem, Outcome) {
    static CELL: OnceLock<(Problem, Outcome)> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = zu_problem(1.0, 2.0, ZU_NODES, Some(1.5), &Common::default()).unwrap();
        let out = p.solve().unwrap();
        (p, out)
    })
}

#[test]
fn criterion_01_sphere_capacity() {
    let p = CapacitySweepParams { radii: vec![1.0, 2.0, 4.0], nodes: 4000, ..Default::default() };
    let rows = capacity_sweep(&p).unwrap();
    let worst = rows.iter().map(|r| rel(r.capacity, r.radius)).fold(0.0, f64::max);
    let slowest = rows.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.converged) && worst <= 0.05 && slowest <= 60.0;
    let caps: Vec<String> = rows.iter().map(|r| format!("{:.5}", r.capacity)).collect();
    verdict(
        1,
        "sphere capacity c(S_r) = r",
        pass,
        format!("c = [{}], worst rel err {worst:.2e} <= 5e-2, slowest solve {slowest:.1}s <= 60s", caps.join(", ")),
    );
}

#[test]
fn criterion_02_two_sphere_energy() {
    let (_, a) = zu_unconstrained();
    let (_, b) = zu_loose();
    let ea = a.report.energy;
    let eb = b.report.energy;
    let pass = a.report.converged
        && b.report.converged
        && rel(ea, 0.5) <= 0.05
        && rel(eb, 0.5) <= 0.05
        && a.seconds <= 120.0
        && b.seconds <= 120.0;
    verdict(
        2,
        "two-sphere energy 1/r1 - 1/r2",
        pass,
        format!(
            "unconstrained {ea:.6} ({:.1}s), loosely constrained {eb:.6} ({:.1}s), target 0.5 within 5%",
            a.seconds, b.seconds
        ),
    );
}

#[test]
fn criterion_03_weighted_potential_constancy() {
    let (p, out) = zu_unconstrained();
    let mu = &out.report.minimizer;
    let w1 = weighted_potential(&p.cond, mu, &p.spec, &p.kernel, p.diag, 0).unwrap();
    let w2 = weighted_potential(&p.cond, mu, &p.spec, &p.kernel, p.diag, 1).unwrap();
    let spread1 = w1.iter().map(|w| (w - 0.5).abs()).fold(0.0, f64::max) / 0.5;
    let max2 = w2.iter().map(|w| w.abs()).fold(0.0, f64::max);
    verdict(
        3,
        "weighted potential constancy",
        spread1 <= 0.05 && max2 <= 0.05,
        format!("plate 1: max |W - 0.5|/0.5 = {spread1:.2e} <= 5e-2; plate 2: max |W| = {max2:.2e} <= 5e-2"),
    );
}

#[test]
fn criterion_04_short_circuit_rates() {
    let p = ShortCircuitParams { nodes: 2000, joint: false, ..Default::default() };
    let res = short_circuit(&p).unwrap();
    let within = res.pairs.iter().all(|r| r.energy.is_finite() && rel(r.energy, r.expected) <= 0.10);
    let decreasing = res.pairs.windows(2).all(|w| w[1].energy < w[0].energy);
    let detail: Vec<String> = res
        .pairs
        .iter()
        .map(|r| format!("k={} E={:.4e} vs {:.4}", r.k, r.energy, r.expected))
        .collect();
    verdict(
        4,
        "short-circuit pair energies k^-1",
        within && decreasing,
        format!("{}; within 10%: {within}, strictly decreasing: {decreasing}", detail.join("; ")),
    );
}

#[test]
fn criterion_05_touching_balls() {
    let p = TouchingBallsParams { nodes: 1000, ..Default::default() };
    let problem = touching_balls_problem(&p).unwrap();
    let out = problem.solve().unwrap();
    let pass = out.report.converged && out.kkt.pass && out.kkt.tol == 1e-2;
    verdict(
        5,
        "touching balls solvable with scaled equilibrium caps",
        pass,
        format!(
            "alpha 1.5, converged {} in {} iterations, KKT violation {:.2e} vs 1e-2 x scale {:.3e}, min cross-sign distance {:.2e}",
            out.report.converged,
            out.report.iterations,
            out.kkt.max_violation(),
            out.kkt.scale,
            out.report.min_cross_sign_distance
        ),
    );
}

#[test]
fn criterion_06_kkt_certification() {
    const TOL: f64 = 1e-6;
    let mut problems: Vec<(&str, Problem)> = Vec::new();
    problems.push(("zu loose caps 500", zu_problem(1.0, 2.0, 500, Some(1.5), &Common::default()).unwrap()));
    problems.push(("zu unconstrained 500", zu_problem(1.0, 2.0, 500, None, &Common::default()).unwrap()));
    problems.push((
        "touching balls 300",
        touching_balls_problem(&TouchingBallsParams { nodes: 300, ..Default::default() }).unwrap(),
    ));
    {
        // Binding caps proportional to 1 + 0.5 x3/r with σ(A_i) = 1.2.
        let base = zu_problem(1.0, 2.0, 500, None, &Common::default()).unwrap();
        let caps: Vec<Vec<f64>> = base
            .cond
            .plates()
            .iter()
            .zip([1.0, 2.0])
            .map(|(pl, r)| {
                let raw: Vec<f64> = pl.nodes().iter().map(|x| 1.0 + 0.5 * x[2] / r).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| 1.2 * v / s).collect()
            })
            .collect();
        let spec = ProblemSpec::constrained(&base.cond, &[1.0, 1.0], caps);
        problems.push(("binding caps 500", Problem { spec, ..base }));
    }
    let mut lines = Vec::new();
    let mut pass = true;
    let mut solved = 0;
    for (name, p) in &problems {
        let out = p.solve().unwrap();
        if !out.report.converged {
            continue;
        }
        solved += 1;
        let good = kkt_check(&p.cond, &p.spec, &out.report.minimizer, &p.kernel, p.diag, TOL).unwrap();
        let moved = move_mass(&p.spec, &out.report.minimizer, 0.05).unwrap();
        let moved = DiscreteVectorMeasure::new(&p.cond, moved).unwrap();
        let bad = kkt_check(&p.cond, &p.spec, &moved, &p.kernel, p.diag, TOL).unwrap();
        pass &= good.pass && !bad.pass;
        lines.push(format!(
            "{name}: {:.1e}/{:.1e}",
            good.max_violation() / good.scale,
            bad.max_violation() / bad.scale
        ));
    }
    for (name, cached) in [("zu unconstrained 2000", zu_unconstrained()), ("zu loose 2000", zu_loose())] {
        let (p, out) = cached;
        solved += 1;
        let good = kkt_check(&p.cond, &p.spec, &out.report.minimizer, &p.kernel, p.diag, TOL).unwrap();
        let moved = move_mass(&p.spec, &out.report.minimizer, 0.05).unwrap();
        let moved = DiscreteVectorMeasure::new(&p.cond, moved).unwrap();
        let bad = kkt_check(&p.cond, &p.spec, &moved, &p.kernel, p.diag, TOL).unwrap();
        pass &= good.pass && !bad.pass;
        lines.push(format!(
            "{name}: {:.1e}/{:.1e}",
            good.max_violation() / good.scale,
            bad.max_violation() / bad.scale
        ));
    }
    pass &= solved == problems.len() + 2;
    verdict(
        6,
        "KKT certification",
        pass,
        format!("relative violation solved/perturbed at tol {TOL:e}: {}", lines.join("; ")),
    );
}

#[test]
fn criterion_07_resultant_uniqueness() {
    let (p, _) = zu_unconstrained();
    let rep = uniqueness_check(&p.cond, &p.spec, &p.kernel, p.diag, &p.opts, 3).unwrap();
    verdict(
        7,
        "resultant uniqueness",
        rep.relative <= 1e-4,
        format!("3 random starts, max relative energy-norm distance {:.2e} <= 1e-4", rep.relative),
    );
}

#[test]
fn criterion_08_kelvin_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = [0.0f64; 3];
    let rand_point = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..3).map(|_| rng.random_range(-3.0..3.0)).collect() };
    for _ in 0..100 {
        let kernel = RieszKernel::new(rng.random_range(0.3..2.0), 3).unwrap();
        let x0 = rand_point(&mut rng);
        let measure = |rng: &mut ChaCha8Rng| loop {
            let n = rng.random_range(1..6usize);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| rand_point(rng)).collect();
            if rows.iter().any(|r| distance(r, &x0) < 0.1) {
                continue;
            }
            let Ok(pts) = Points::from_rows(&rows) else { continue };
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(m) = SignedDiscreteMeasure::new(pts, w) {
                return m;
            }
        };
        let a = measure(&mut rng);
        let b = measure(&mut rng);

        let x = a.points().get(0);
        let y = b.points().get(0);
        if distance(x, y) > 1e-6 {
            let xs = invert_point(x, &x0).unwrap();
            let ys = invert_point(y, &x0).unwrap();
            let expect = distance(x, y) / (distance(x, &x0) * distance(y, &x0));
            worst[0] = worst[0].max(rel(distance(&xs, &ys), expect));
        }

        let ka = kelvin_transform(&a, &x0, &kernel).unwrap();
        let kb = kelvin_transform(&b, &x0, &kernel).unwrap();
        if let (Ok(e), Ok(es)) = (
            mutual_energy(&kernel, &a, &b, DiagonalPolicy::Zero),
            mutual_energy(&kernel, &ka, &kb, DiagonalPolicy::Zero),
        ) {
            worst[1] = worst[1].max((e - es).abs() / e.abs().max(1e-300));
        }

        let back = kelvin_transform(&ka, &x0, &kernel).unwrap();
        for (p, q) in a.points().iter().zip(back.points().iter()) {
            worst[2] = worst[2].max(distance(p, q) / p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0));
        }
        for (w, v) in a.weights().iter().zip(back.weights()) {
            worst[2] = worst[2].max(rel(*v, *w));
        }
    }
    verdict(
        8,
        "Kelvin identities",
        worst.iter().all(|&w| w <= 1e-10),
        format!(
            "100 cases: distance {:.1e}, energy {:.1e}, involution {:.1e}, all <= 1e-10",
            worst[0], worst[1], worst[2]
        ),
    );
}

/// Potential at x of the harmonic measure of the exterior of S(0, 1) for the
/// pole y, from the Poisson kernel (|y|² − 1)/(4π|z − y|³) on a fine
/// Fibonacci quadrature.
fn poisson_potential(x: &[f64], y: &[f64], quad: &Points) -> f64 {
    let ny2: f64 = y.iter().map(|v| v * v).sum();
    let area = 4.0 * std::f64::consts::PI / quad.len() as f64;
    quad.iter()
        .map(|z| {
            let p = (ny2 - 1.0) / (4.0 * std::f64::consts::PI * distance(z, y).powi(3));
            p * area / distance(z, x)
        })
        .sum()
}

#[test]
fn criterion_09_balayage_oracle() {
    let kernel = RieszKernel::newtonian(3).unwrap();
    let target = sample_sphere(&[0.0; 3], 1.0, 2000, 9).unwrap();
    let diag = DiagonalPolicy::calibrated(&kernel, 2000).unwrap();
    let y = [0.0, 0.0, 2.0];
    let zeta = DiscreteMeasure::dirac(&y, 1.0).unwrap();
    let opts = SolveOptions { grad_tol: 1e-8, max_iters: 100_000, ..Default::default() };
    let swept = balayage(&kernel, &zeta, &target, diag, &opts).unwrap();
    let mass = swept.total_mass();

    let quad = sample_sphere(&[0.0; 3], 1.0, 40_000, 99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let r = rng.random_range(1.2..5.0);
        let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x: Vec<f64> = d.iter().map(|v| r * v / n).collect();
        let discrete: f64 = swept
            .points()
            .iter()
            .zip(swept.weights())
            .map(|(z, w)| w * kernel.eval(&x, z).unwrap())
            .sum();
        worst = worst.max(rel(discrete, poisson_potential(&x, &y, &quad)));
    }
    verdict(
        9,
        "balayage onto S(0,1)",
        rel(mass, 0.5) <= 0.02 && worst <= 0.02,
        format!("swept mass {mass:.5} vs 0.5 within 2%, worst potential rel err at 50 exterior points {worst:.2e} <= 2e-2"),
    );
}

#[test]
fn criterion_10_duality() {
    let p = DualityParams { nodes: 2000, ..Default::default() };
    let rep = duality(&p).unwrap();
    let pass = rep.kkt.pass && rep.kkt.tol == 1e-2 && rep.relative_gap <= 1e-3;
    verdict(
        10,
        "duality theta = q(sigma - lambda)",
        pass,
        format!(
            "q = {:.4}, KKT violation {:.2e} vs 1e-2 x scale {:.3e}, G(theta) = {:.6}, direct {:.6}, rel gap {:.2e} <= 1e-3",
            rep.q,
            rep.kkt.max_violation(),
            rep.kkt.scale,
            rep.theta_energy,
            rep.direct_energy,
            rep.relative_gap
        ),
    );
}

#[test]
fn criterion_11_enumeration_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 30 {
        let Some(inst) = enumeration::random_instance(&mut rng) else { continue };
        let exact = enumeration::oracle(&inst);
        for rule in [StepRule::FixedFromLipschitz, StepRule::BacktrackingArmijo] {
            let opts = SolveOptions { grad_tol: 1e-12, max_iters: 200_000, step_rule: rule, ..Default::default() };
            let rep = solve_constrained(&inst.cond, &inst.spec, &inst.kernel, inst.diag, &opts).unwrap();
            let r = if rep.converged { (rep.energy - exact).abs() / exact.abs().max(1e-12) } else { f64::INFINITY };
            worst = worst.max(r);
        }
        checked += 1;
    }
    verdict(
        11,
        "brute-force equivalence",
        worst <= 1e-8,
        format!("{checked} instances with <= 6 nodes, both step rules, worst rel gap {worst:.2e} <= 1e-8"),
    );
}

#[test]
fn criterion_12_continuity() {
    let p = ContinuityParams { nodes: ZU_NODES, levels: 6, ..Default::default() };
    let rep = continuity(&p).unwrap();
    let pass = rep.nondecreasing && rep.final_relative_gap <= 0.01;
    let e: Vec<String> = rep.energies.iter().map(|v| format!("{v:.6}")).collect();
    verdict(
        12,
        "continuity under shrinking caps",
        pass,
        format!(
            "G_1..G_6 = [{}], G_inf = {:.6}, nondecreasing {}, |G_6 - G_inf|/G_inf = {:.2e} <= 1e-2",
            e.join(", "),
            rep.limit_energy,
            rep.nondecreasing,
            rep.final_relative_gap
        ),
    );
}
