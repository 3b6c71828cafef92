//! Shared helpers for integration and acceptance tests: random instances
//! and an exponential-cone formulation of the likelihood program solved by
//! an external conic solver.

#![allow(dead_code)]

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, ExponentialConeT, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT};
use elicit_core::grid::{mass_diff, BreakpointGrid};
use elicit_core::lottery::{Choice, ComparisonRecord, Lottery};
use elicit_core::simulate::{random_pair, SimulatedDM};
use elicit_core::utility::{PiecewiseUtility, Shape, StructureLevel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random small instance: grid, answered queries and structure level.
pub struct Instance {
    pub grid: BreakpointGrid,
    pub data: Vec<ComparisonRecord>,
    pub level: StructureLevel,
}

/// Random concave increasing utility values on `grid` with slope at most
/// `lipschitz`.
pub fn random_concave(grid: &BreakpointGrid, lipschitz: f64, r: &mut ChaCha8Rng) -> PiecewiseUtility {
    let n = grid.len();
    let mut slopes: Vec<f64> = (0..n - 1).map(|_| r.random_range(0.05..1.0)).collect();
    slopes.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = slopes.iter().enumerate().map(|(j, s)| s * grid.gap(j)).sum();
    let flat = 1.0 / grid.upper();
    let mut beta: Vec<f64> = slopes.iter().map(|s| s / total).collect();
    if beta[0] > lipschitz {
        let t = (beta[0] - lipschitz) / (beta[0] - flat);
        beta.iter_mut().for_each(|b| *b = (1.0 - t) * *b + t * flat);
    }
    let mut alpha = vec![0.0];
    for (j, b) in beta.iter().enumerate() {
        alpha.push(alpha[j] + b * grid.gap(j));
    }
    alpha[n - 1] = 1.0;
    PiecewiseUtility::interpolate(grid.clone(), alpha).unwrap()
}

/// Instances mixing truthful, random and reversed answers so that both
/// rationalisable and non-rationalisable data occur.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(2..=10usize);
    let upper = [1.0, 100.0, 1e5][r.random_range(0..3usize)];
    let mut pts = vec![0.0, upper];
    while pts.len() < n {
        let y = (r.random_range(1..1000u32) as f64) * upper / 1000.0;
        if !pts.contains(&y) {
            pts.push(y);
        }
    }
    pts.sort_by(f64::total_cmp);
    let grid = BreakpointGrid::new(pts, upper * 1e-6).unwrap();
    let shape = Shape::ALL[r.random_range(0..4usize)];
    let lipschitz = r.random_range(1.5..20.0) / upper;
    let cbar = [1.0, 5.0, 100.0][r.random_range(0..3usize)];
    let level = StructureLevel::new(shape, lipschitz, cbar).unwrap();
    let k = r.random_range(1..=50usize);
    let truth = random_concave(&grid, lipschitz, &mut r);
    let sigma = [0.05, 0.3, 2.0][r.random_range(0..3usize)];
    let dm = SimulatedDM::new(truth, sigma).unwrap();
    let mode = seed % 3;
    let data = (0..k)
        .map(|_| {
            let (w, y) = random_pair(grid.points(), &mut r).unwrap();
            let z = match mode {
                0 => dm.sample_choice(&w, &y, &mut r).unwrap(),
                1 => if r.random::<bool>() { Choice::First } else { Choice::Second },
                _ => dm.sample_choice(&w, &y, &mut r).unwrap().flipped(),
            };
            ComparisonRecord { w, y, z }
        })
        .collect();
    Instance { grid, data, level }
}

/// Maximum log-likelihood over the structure level, written directly in
/// the adjusted values `theta` (`theta_1 = 0`) with epigraph variables
/// `t_k >= log(1 + exp(r_k . theta))` expressed through two exponential
/// cones each.
pub fn conic_loglik(grid: &BreakpointGrid, data: &[ComparisonRecord], level: &StructureLevel) -> (f64, SolverStatus) {
    let n = grid.len();
    let m = n - 1; // theta_2..theta_N
    let k = data.len();
    let nv = m + 3 * k;
    let (th, t, u1, u2) = (|j: usize| j - 1, |i: usize| m + i, |i: usize| m + k + i, |i: usize| m + 2 * k + i);
    let (mut rows, mut cols, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut row = 0usize;
    let put = |r: usize, c: usize, v: f64, rows: &mut Vec<usize>, cols: &mut Vec<usize>, vals: &mut Vec<f64>| {
        rows.push(r);
        cols.push(c);
        vals.push(v);
    };
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    for (i, rec) in data.iter().enumerate() {
        let p = mass_diff(&rec.w, &rec.y, grid).unwrap();
        let sign = match rec.z {
            Choice::First => -1.0,
            Choice::Second => 1.0,
        };
        // s = b - A x; first cone (r.theta - t, 1, u1)
        for j in 1..n {
            let c = sign * p.full()[j];
            if c != 0.0 {
                put(row, th(j), -c, &mut rows, &mut cols, &mut vals);
            }
        }
        put(row, t(i), 1.0, &mut rows, &mut cols, &mut vals);
        b.push(0.0);
        b.push(1.0);
        put(row + 2, u1(i), -1.0, &mut rows, &mut cols, &mut vals);
        b.push(0.0);
        // second cone (-t, 1, u2)
        put(row + 3, t(i), 1.0, &mut rows, &mut cols, &mut vals);
        b.push(0.0);
        b.push(1.0);
        put(row + 5, u2(i), -1.0, &mut rows, &mut cols, &mut vals);
        b.push(0.0);
        row += 6;
        cones.push(ExponentialConeT());
        cones.push(ExponentialConeT());
    }
    // Linear inequalities a . x <= c as s = c - a . x >= 0.
    let mut ineq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..k {
        ineq.push((vec![(u1(i), 1.0), (u2(i), 1.0)], 1.0));
    }
    let gamma = th(n - 1);
    ineq.push((vec![(gamma, -1.0)], 0.0));
    ineq.push((vec![(gamma, 1.0)], level.cbar));
    let coef = |j: usize| if j == 0 { None } else { Some(th(j)) };
    // slope_j = (theta_{j+1} - theta_j) / d_j as sparse terms
    let slope = |j: usize| -> Vec<(usize, f64)> {
        let d = grid.gap(j);
        let mut v = vec![(th(j + 1), 1.0 / d)];
        if let Some(c) = coef(j) {
            v.push((c, -1.0 / d));
        }
        v
    };
    match level.shape {
        Shape::Full | Shape::NoLipschitz => {
            for j in 0..m {
                // increasing
                ineq.push((slope(j).into_iter().map(|(c, v)| (c, -v)).collect(), 0.0));
            }
            for j in 0..m.saturating_sub(1) {
                // slope_{j+1} - slope_j <= 0
                let mut a = slope(j + 1);
                a.extend(slope(j).into_iter().map(|(c, v)| (c, -v)));
                ineq.push((a, 0.0));
            }
            if level.shape == Shape::Full {
                for j in 0..m {
                    let mut a = slope(j);
                    a.push((gamma, -level.lipschitz));
                    ineq.push((a, 0.0));
                }
            }
        }
        Shape::MonotoneOnly => {
            for j in 0..m {
                ineq.push((slope(j).into_iter().map(|(c, v)| (c, -v)).collect(), 0.0));
            }
        }
        Shape::Unstructured => {
            for j in 1..n - 1 {
                ineq.push((vec![(th(j), 1.0), (gamma, -level.unstructured_bound)], 0.0));
                ineq.push((vec![(th(j), -1.0), (gamma, -level.unstructured_bound)], 0.0));
            }
        }
    }
    let n_ineq = ineq.len();
    for (a, c) in ineq {
        for (col, v) in a {
            put(row, col, v, &mut rows, &mut cols, &mut vals);
        }
        b.push(c);
        row += 1;
    }
    cones.push(NonnegativeConeT(n_ineq));
    let a = CscMatrix::new_from_triplets(row, nv, rows, cols, vals);
    let p = CscMatrix::zeros((nv, nv));
    let mut q = vec![0.0; nv];
    for i in 0..k {
        q[t(i)] = 1.0;
    }
    let settings = DefaultSettings { verbose: false, tol_gap_abs: 1e-10, tol_gap_rel: 1e-10, tol_feas: 1e-10, max_iter: 500, ..DefaultSettings::default() };
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).unwrap();
    solver.solve();
    (-solver.solution.obj_val, solver.solution.status)
}

/// Brute-force maximum of `f` over `{v >= 0, sum v <= 1, v_i <= caps_i}` on
/// a lattice of step `1 / steps`.
pub fn simplex_grid_max(dim: usize, steps: usize, caps: &[f64], f: &dyn Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
    let mut best = (f64::NEG_INFINITY, vec![0.0; dim]);
    let mut idx = vec![0usize; dim];
    loop {
        let total: usize = idx.iter().sum();
        if total <= steps {
            let v: Vec<f64> = idx.iter().map(|i| *i as f64 / steps as f64).collect();
            if v.iter().zip(caps).all(|(x, c)| *x <= c + 1e-12) {
                let val = f(&v);
                if val > best.0 {
                    best = (val, v);
                }
            }
        }
        let mut d = 0;
        loop {
            if d == dim {
                return best;
            }
            idx[d] += 1;
            if idx[d] <= steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

pub fn dirac(y: f64) -> Lottery {
    Lottery::dirac(y).unwrap()
}
