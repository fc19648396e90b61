use proptest::prelude::*;
use riesz_core::geometry::{sample_sphere, Condenser, Plate, Sign};
use riesz_core::kelvin::{invert_point, kelvin_condenser, kelvin_transform};
use riesz_core::kernel::{
    kernel_matrix, mutual_energy, DiagonalPolicy, DiscreteMeasure, RieszKernel,
    SignedDiscreteMeasure, WeightedNodes,
};
use riesz_core::measures::{
    gauss_energy, resultant, semimetric, semimetric_squared, vector_energy, DiscreteVectorMeasure,
    ExternalField, ProblemSpec,
};
use riesz_core::operator::EnergyOperator;
use riesz_core::points::distance;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn kernel_strategy() -> impl Strategy<Value = RieszKernel> {
    (3usize..=4, 0.2f64..1.95).prop_map(|(n, t)| RieszKernel::new(t, n).unwrap())
}

/// Two plates of opposite sign on disjoint sphere samples, plus weights.
fn two_plate(n1: usize, n2: usize, seed: u64) -> Condenser {
    Condenser::new(vec![
        Plate::new(Sign::Positive, sample_sphere(&[0.0; 3], 1.0, n1, seed).unwrap()).unwrap(),
        Plate::new(Sign::Negative, sample_sphere(&[0.0; 3], 1.7, n2, seed + 1).unwrap()).unwrap(),
    ])
    .unwrap()
}

fn weights(n: usize, raw: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|j| raw[j % raw.len()] + 1e-3 * j as f64).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric(k in kernel_strategy(), seed in 0u64..1000) {
        let p = sample_sphere(&vec![0.0; k.dim()], 1.0, 12, seed).unwrap();
        let m = kernel_matrix(&k, &p, &p, DiagonalPolicy::Zero).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn mutual_energy_is_bilinear(
        k in kernel_strategy(),
        a in prop::collection::vec(0.0f64..1.0, 6),
        b in prop::collection::vec(0.0f64..1.0, 6),
        c in prop::collection::vec(0.0f64..1.0, 5),
        s in -2.0f64..2.0,
    ) {
        let dim = k.dim();
        let pa = sample_sphere(&vec![0.0; dim], 1.0, 6, 1).unwrap();
        let pc = sample_sphere(&vec![0.5; dim], 2.0, 5, 2).unwrap();
        let mu = SignedDiscreteMeasure::new(pa.clone(), a.clone()).unwrap();
        let nu = SignedDiscreteMeasure::new(pa.clone(), b.clone()).unwrap();
        let comb = SignedDiscreteMeasure::new(
            pa,
            a.iter().zip(&b).map(|(x, y)| x + s * y).collect(),
        ).unwrap();
        let rho = SignedDiscreteMeasure::new(pc, c).unwrap();
        let lhs = mutual_energy(&k, &comb, &rho, DiagonalPolicy::Zero).unwrap();
        let rhs = mutual_energy(&k, &mu, &rho, DiagonalPolicy::Zero).unwrap()
            + s * mutual_energy(&k, &nu, &rho, DiagonalPolicy::Zero).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        let sym = mutual_energy(&k, &rho, &comb, DiagonalPolicy::Zero).unwrap();
        prop_assert!(rel(lhs, sym) <= 1e-12);
    }

    #[test]
    fn calibrated_diagonal_gives_nonnegative_energy(
        n1 in 20usize..120,
        n2 in 20usize..120,
        seed in 0u64..500,
        raw1 in prop::collection::vec(0.0f64..1.0, 1..8),
        raw2 in prop::collection::vec(0.0f64..1.0, 1..8),
    ) {
        let k = RieszKernel::newtonian(3).unwrap();
        let cond = two_plate(n1, n2, seed);
        let diag = DiagonalPolicy::calibrated(&k, n1.min(n2).max(16)).unwrap();
        let mu = DiscreteVectorMeasure::new(&cond, vec![weights(n1, &raw1), weights(n2, &raw2)]).unwrap();
        let e = vector_energy(&cond, &mu, &k, diag).unwrap();
        prop_assert!(e >= -1e-10);
    }

    #[test]
    fn semimetric_is_isometric_to_resultant_distance(
        seed in 0u64..500,
        raw in prop::collection::vec(0.0f64..1.0, 4..10),
        raw2 in prop::collection::vec(0.0f64..1.0, 4..10),
    ) {
        let k = RieszKernel::new(1.5, 3).unwrap();
        let cond = two_plate(15, 11, seed);
        let mu = DiscreteVectorMeasure::new(&cond, vec![weights(15, &raw), weights(11, &raw2)]).unwrap();
        let nu = DiscreteVectorMeasure::new(&cond, vec![weights(15, &raw2), weights(11, &raw)]).unwrap();
        // Zero diagonal: the union route is the plain mutual energy.
        let sq = semimetric_squared(&cond, &mu, &nu, &k, DiagonalPolicy::Zero).unwrap();
        let rm = resultant(&cond, &mu, DiagonalPolicy::Zero).unwrap();
        let rn = resultant(&cond, &nu, DiagonalPolicy::Zero).unwrap();
        let diff = SignedDiscreteMeasure::new(
            rm.measure().points().clone(),
            rm.measure().weights().iter().zip(rn.measure().weights()).map(|(a, b)| a - b).collect(),
        ).unwrap();
        let direct = mutual_energy(&k, &diff, &diff, DiagonalPolicy::Zero).unwrap();
        prop_assert!((sq - direct).abs() <= 1e-10 * (sq.abs().max(direct.abs()) + 1e-12));
        // Nearest-neighbor diagonal: compare with the resultant's own spacing.
        let diag = DiagonalPolicy::nearest_neighbor(3.0).unwrap();
        let sq = semimetric_squared(&cond, &mu, &nu, &k, diag).unwrap();
        let rm = resultant(&cond, &mu, diag).unwrap();
        let rn = resultant(&cond, &nu, diag).unwrap();
        prop_assert!(rel(sq, rm.distance_squared(&rn, &k, diag)) <= 1e-10);
    }

    #[test]
    fn energy_equals_resultant_energy_with_shared_nodes(
        seed in 0u64..500,
        raw in prop::collection::vec(0.0f64..1.0, 2..10),
        raw2 in prop::collection::vec(0.0f64..1.0, 2..10),
        raw3 in prop::collection::vec(0.0f64..1.0, 2..10),
    ) {
        let k = RieszKernel::newtonian(3).unwrap();
        let a = sample_sphere(&[0.0; 3], 1.0, 30, seed).unwrap();
        let b = sample_sphere(&[0.0; 3], 2.0, 20, seed + 7).unwrap();
        // Plates 0 and 1 coincide; plate 1 also shares its first 30 nodes only.
        let cond = Condenser::new(vec![
            Plate::new(Sign::Positive, a.clone()).unwrap(),
            Plate::new(Sign::Positive, a).unwrap(),
            Plate::new(Sign::Negative, b).unwrap(),
        ]).unwrap();
        let mu = DiscreteVectorMeasure::new(
            &cond,
            vec![weights(30, &raw), weights(30, &raw2), weights(20, &raw3)],
        ).unwrap();
        for diag in [DiagonalPolicy::Zero, DiagonalPolicy::nearest_neighbor(3.0).unwrap()] {
            let e = vector_energy(&cond, &mu, &k, diag).unwrap();
            let r = resultant(&cond, &mu, diag).unwrap();
            prop_assert!(rel(e, r.energy(&k, diag)) <= 1e-10);
            let op = EnergyOperator::new(&cond, &k, diag).unwrap();
            prop_assert!(rel(e, op.energy(&mu)) <= 1e-10);
        }
        let r = resultant(&cond, &mu, DiagonalPolicy::Zero).unwrap();
        let via_mutual = mutual_energy(&k, r.measure(), r.measure(), DiagonalPolicy::Zero).unwrap();
        let e = vector_energy(&cond, &mu, &k, DiagonalPolicy::Zero).unwrap();
        prop_assert!(rel(e, via_mutual) <= 1e-10);
    }

    #[test]
    fn gauss_energy_is_convex(
        seed in 0u64..500,
        raw in prop::collection::vec(0.0f64..1.0, 3..9),
        raw2 in prop::collection::vec(0.0f64..1.0, 3..9),
        fvals in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let k = RieszKernel::newtonian(3).unwrap();
        let cond = two_plate(40, 30, seed);
        let diag = DiagonalPolicy::calibrated(&k, 30).unwrap();
        let spec = ProblemSpec::unconstrained(&cond, &[1.0, 1.0])
            .with_field(ExternalField::NodeGrid(vec![fvals.clone(), fvals[..30].to_vec()]));
        let mu = DiscreteVectorMeasure::new(&cond, vec![weights(40, &raw), weights(30, &raw2)]).unwrap();
        let nu = DiscreteVectorMeasure::new(&cond, vec![weights(40, &raw2), weights(30, &raw)]).unwrap();
        let mid = mu.lerp(&nu, 0.5);
        let g = |m: &DiscreteVectorMeasure| gauss_energy(&cond, m, &spec, &k, diag).unwrap();
        let (gm, gn, gh) = (g(&mu), g(&nu), g(&mid));
        let scale = gm.abs().max(gn.abs()).max(1.0);
        prop_assert!(gh <= 0.5 * (gm + gn) + 1e-10 * scale);
    }

    #[test]
    fn case_two_energy_is_bounded_below(
        seed in 0u64..500,
        raw in prop::collection::vec(0.0f64..1.0, 3..9),
        zw in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let k = RieszKernel::newtonian(3).unwrap();
        let cond = two_plate(40, 30, seed);
        let diag = DiagonalPolicy::calibrated(&k, 30).unwrap();
        // ζ on a subset of plate nodes, so one quadratic form covers both.
        let op = EnergyOperator::new(&cond, &k, diag).unwrap();
        let nodes = op.registry().nodes();
        let idx: Vec<usize> = (0..12).map(|j| (j * 5) % nodes.len()).collect();
        let zeta = SignedDiscreteMeasure::new(nodes.subset(&idx), zw.clone()).unwrap();
        let mut zfull = vec![0.0; nodes.len()];
        for (&g, &w) in idx.iter().zip(&zw) {
            zfull[g] += w;
        }
        let zz = op.matrix().bilinear(&zfull, &zfull);
        let spec = ProblemSpec::unconstrained(&cond, &[1.0, 1.0])
            .with_field(ExternalField::RieszOf(zeta));
        let mu = DiscreteVectorMeasure::new(&cond, vec![weights(40, &raw), weights(30, &raw)]).unwrap();
        let g = gauss_energy(&cond, &mu, &spec, &k, diag).unwrap();
        prop_assert!(g >= -zz - 1e-10 * zz.abs().max(1.0));
        // G = ‖Rμ + ζ‖² − ‖ζ‖².
        let mut r = op.registry().resultant_weights(&mu);
        for (a, b) in r.iter_mut().zip(&zfull) {
            *a += b;
        }
        prop_assert!(rel(g, op.matrix().bilinear(&r, &r) - zz) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inversion_distance_identity(
        x in prop::collection::vec(-5.0f64..5.0, 3),
        y in prop::collection::vec(-5.0f64..5.0, 3),
        x0 in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        prop_assume!(distance(&x, &x0) > 1e-3 && distance(&y, &x0) > 1e-3);
        let xs = invert_point(&x, &x0).unwrap();
        let ys = invert_point(&y, &x0).unwrap();
        let expect = distance(&x, &y) / (distance(&x, &x0) * distance(&y, &x0));
        prop_assert!((distance(&xs, &ys) - expect).abs() <= 1e-12 * expect.max(1e-300));
    }

    #[test]
    fn kelvin_is_an_involution_and_preserves_energy(
        k in kernel_strategy(),
        seed in 0u64..1000,
        w1 in prop::collection::vec(0.01f64..1.0, 7),
        w2 in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let dim = k.dim();
        let x0: Vec<f64> = (0..dim).map(|i| 0.1 * i as f64).collect();
        let a = DiscreteMeasure::new(sample_sphere(&vec![0.0; dim], 1.3, 7, seed).unwrap(), w1).unwrap();
        let b = SignedDiscreteMeasure::new(sample_sphere(&vec![0.2; dim], 2.6, 5, seed + 3).unwrap(), w2).unwrap();
        let a2 = kelvin_transform(&kelvin_transform(&a, &x0, &k).unwrap(), &x0, &k).unwrap();
        for (p, q) in a.points().coords().iter().zip(a2.points().coords()) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
        for (p, q) in a.weights().iter().zip(a2.weights()) {
            prop_assert!(rel(*p, *q) <= 1e-12);
        }
        let before = mutual_energy(&k, &a, &b, DiagonalPolicy::Zero).unwrap();
        let after = mutual_energy(
            &k,
            &kelvin_transform(&a, &x0, &k).unwrap(),
            &kelvin_transform(&b, &x0, &k).unwrap(),
            DiagonalPolicy::Zero,
        ).unwrap();
        prop_assert!(rel(before, after) <= 1e-10);
    }

    #[test]
    fn kelvin_is_additive(
        seed in 0u64..1000,
        w1 in prop::collection::vec(0.01f64..1.0, 6),
        w2 in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let k = RieszKernel::new(1.2, 3).unwrap();
        let p = sample_sphere(&[0.0; 3], 1.5, 6, seed).unwrap();
        let x0 = [0.3, -0.2, 0.1];
        let sum = DiscreteMeasure::new(p.clone(), w1.iter().zip(&w2).map(|(a, b)| a + b).collect()).unwrap();
        let a = kelvin_transform(&DiscreteMeasure::new(p.clone(), w1).unwrap(), &x0, &k).unwrap();
        let b = kelvin_transform(&DiscreteMeasure::new(p, w2).unwrap(), &x0, &k).unwrap();
        let s = kelvin_transform(&sum, &x0, &k).unwrap();
        // Same nodes, so merging is node-wise.
        prop_assert_eq!(a.points(), s.points());
        for j in 0..6 {
            prop_assert!(rel(s.weights()[j], a.weights()[j] + b.weights()[j]) <= 1e-14);
        }
    }

    #[test]
    fn kelvin_preserves_the_semimetric(
        seed in 0u64..1000,
        raw in prop::collection::vec(0.0f64..1.0, 3..8),
        raw2 in prop::collection::vec(0.0f64..1.0, 3..8),
    ) {
        let k = RieszKernel::new(1.7, 3).unwrap();
        let cond = two_plate(9, 7, seed);
        let x0 = [0.05, 0.02, -0.03];
        let mu = DiscreteVectorMeasure::new(&cond, vec![weights(9, &raw), weights(7, &raw2)]).unwrap();
        let nu = DiscreteVectorMeasure::new(&cond, vec![weights(9, &raw2), weights(7, &raw)]).unwrap();
        let (c2, mu2) = kelvin_condenser(&cond, &mu, &x0, &k).unwrap();
        let (_, nu2) = kelvin_condenser(&cond, &nu, &x0, &k).unwrap();
        let a = semimetric_squared(&cond, &mu, &nu, &k, DiagonalPolicy::Zero).unwrap();
        let b = semimetric_squared(&c2, &mu2, &nu2, &k, DiagonalPolicy::Zero).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300));
    }
}

#[test]
fn semimetric_vanishes_for_r_equivalent_measures() {
    let k = RieszKernel::newtonian(3).unwrap();
    let a = sample_sphere(&[0.0; 3], 1.0, 25, 3).unwrap();
    let cond = Condenser::new(vec![
        Plate::new(Sign::Positive, a.clone()).unwrap(),
        Plate::new(Sign::Positive, a).unwrap(),
    ])
    .unwrap();
    let u = weights(25, &[0.3, 0.9, 0.1]);
    let v = weights(25, &[0.5, 0.2]);
    let mu = DiscreteVectorMeasure::new(&cond, vec![u.clone(), v.clone()]).unwrap();
    let nu = DiscreteVectorMeasure::new(&cond, vec![v, u]).unwrap();
    let diag = DiagonalPolicy::calibrated(&k, 25).unwrap();
    assert!(semimetric(&cond, &mu, &nu, &k, diag).unwrap() <= 1e-7);
}
