//! Exhaustive active-set enumeration for tiny constrained problems.
//!
//! Each node is either at 0, at its cap, or free. For every assignment the
//! equality-constrained QP on the free nodes is solved exactly, and the best
//! feasible stationary point is the global minimum of the convex problem.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use riesz_core::geometry::{Condenser, Plate, Sign};
use riesz_core::kernel::{DiagonalPolicy, RieszKernel};
use riesz_core::measures::{Caps, ExternalField, PlateConstraint, ProblemSpec};
use riesz_core::operator::EnergyOperator;
use riesz_core::points::{distance, Points};

pub struct Instance {
    pub cond: Condenser,
    pub spec: ProblemSpec,
    pub kernel: RieszKernel,
    pub diag: DiagonalPolicy,
}

/// Dense Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-13 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn cholesky_ok(q: &[Vec<f64>]) -> bool {
    let n = q.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = q[i][i] - s;
                if d <= 1e-10 {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (q[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

/// Q over plate nodes (signed blocks) and the flattened problem data.
fn flatten(inst: &Instance) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>) {
    let op = EnergyOperator::new(&inst.cond, &inst.kernel, inst.diag).unwrap();
    let reg = op.registry();
    let mut idx = Vec::new();
    let mut sign = Vec::new();
    let mut plate = Vec::new();
    for i in 0..inst.cond.len() {
        for &g in reg.plate_map(i) {
            idx.push(g);
            sign.push(reg.sign(i));
            plate.push(i);
        }
    }
    let n = idx.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| sign[a] * sign[b] * op.matrix().get(idx[a], idx[b])).collect())
        .collect();
    let f = op.field_values(&inst.spec).unwrap().concat();
    let mut caps = Vec::new();
    let mut gauge = Vec::new();
    for c in &inst.spec.plates {
        for j in 0..c.gauge.len() {
            caps.push(c.caps.cap(j));
        }
        gauge.extend_from_slice(&c.gauge);
    }
    (q, f, caps, gauge, plate)
}

/// Global minimum of xᵀQx + 2fᵀx over the feasible set.
pub fn oracle(inst: &Instance) -> f64 {
    let (q, f, caps, gauge, plate) = flatten(inst);
    let n = q.len();
    let m = inst.cond.len();
    let mass: Vec<f64> = inst.spec.plates.iter().map(|c| c.mass).collect();
    let mut best = f64::INFINITY;
    let states = 3usize.pow(n as u32);
    for code in 0..states {
        // 0: at zero, 1: at cap, 2: free.
        let mut state = vec![0usize; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = c % 3;
            c /= 3;
        }
        if (0..n).any(|j| state[j] == 1 && caps[j].is_infinite()) {
            continue;
        }
        let mut x = vec![0.0; n];
        for j in 0..n {
            if state[j] == 1 {
                x[j] = caps[j];
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == 2).collect();
        // Plates without free nodes must already meet their mass.
        let mut ok = true;
        for i in 0..m {
            if !free.iter().any(|&j| plate[j] == i) {
                let got: f64 = (0..n).filter(|&j| plate[j] == i).map(|j| gauge[j] * x[j]).sum();
                if (got - mass[i]).abs() > 1e-12 * mass[i] {
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let active_plates: Vec<usize> =
            (0..m).filter(|&i| free.iter().any(|&j| plate[j] == i)).collect();
        let nf = free.len();
        let dim = nf + active_plates.len();
        if nf > 0 {
            // [2Q_FF  −G; Gᵀ 0] [x_F; w] = [−2 f_F − 2 Q_FC x_C; a − G_C x_C]
            let mut a = vec![vec![0.0; dim]; dim];
            let mut b = vec![0.0; dim];
            for (r, &j) in free.iter().enumerate() {
                for (cidx, &k) in free.iter().enumerate() {
                    a[r][cidx] = 2.0 * q[j][k];
                }
                let fixed: f64 = (0..n).filter(|&k| state[k] != 2).map(|k| q[j][k] * x[k]).sum();
                b[r] = -2.0 * f[j] - 2.0 * fixed;
                let pi = active_plates.iter().position(|&p| p == plate[j]).unwrap();
                a[r][nf + pi] = -gauge[j];
                a[nf + pi][r] = gauge[j];
            }
            for (pi, &i) in active_plates.iter().enumerate() {
                let fixed: f64 = (0..n)
                    .filter(|&k| plate[k] == i && state[k] != 2)
                    .map(|k| gauge[k] * x[k])
                    .sum();
                b[nf + pi] = mass[i] - fixed;
            }
            let Some(sol) = solve_linear(a, b) else { continue };
            for (r, &j) in free.iter().enumerate() {
                x[j] = sol[r];
            }
            if free.iter().any(|&j| x[j] < -1e-12 || x[j] > caps[j] + 1e-12) {
                continue;
            }
        }
        let mut val = 0.0;
        for j in 0..n {
            for k in 0..n {
                val += x[j] * q[j][k] * x[k];
            }
            val += 2.0 * f[j] * x[j];
        }
        best = best.min(val);
    }
    best
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let kernel = RieszKernel::new(rng.random_range(0.5..2.0), 3).unwrap();
    let plates = rng.random_range(1..=2usize);
    let total = rng.random_range(plates.max(2)..=6usize);
    let mut counts = vec![1usize; plates];
    for _ in plates..total {
        let i = rng.random_range(0..plates);
        counts[i] += 1;
    }
    if counts.iter().any(|&c| c < 2) {
        return None;
    }
    let mut all: Vec<Vec<f64>> = Vec::new();
    let mut plate_vec = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        let mut rows = Vec::new();
        for _ in 0..c {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            if all.iter().any(|q| distance(q, &p) < 0.25) {
                return None;
            }
            all.push(p.clone());
            rows.push(p);
        }
        let sign = if i == 0 || rng.random_bool(0.5) { Sign::Positive } else { Sign::Negative };
        plate_vec.push(Plate::new(sign, Points::from_rows(&rows).unwrap()).unwrap());
    }
    let cond = Condenser::new(plate_vec).ok()?;
    let diag = DiagonalPolicy::nearest_neighbor(rng.random_range(2.0..4.0)).unwrap();
    let mut constraints = Vec::new();
    let mut grid = Vec::new();
    for &c in &counts {
        let mass = rng.random_range(0.5..2.0);
        let gauge: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        let caps = if rng.random_bool(0.3) {
            Caps::Unbounded
        } else {
            // Caps with total ⟨g, σ⟩ between 1.1 and 2.5 times the mass.
            let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().zip(&gauge).map(|(a, b)| a * b).sum();
            let factor = rng.random_range(1.1..2.5) * mass / s;
            Caps::Finite(raw.iter().map(|r| r * factor).collect())
        };
        constraints.push(PlateConstraint { caps, mass, gauge });
        grid.push((0..c).map(|_| rng.random_range(-0.5..0.5)).collect());
    }
    let field = if rng.random_bool(0.5) { ExternalField::NodeGrid(grid) } else { ExternalField::Zero };
    let inst = Instance {
        cond,
        spec: ProblemSpec { plates: constraints, field },
        kernel,
        diag,
    };
    let (q, ..) = flatten(&inst);
    cholesky_ok(&q).then_some(inst)
}

