//! Primal-dual interior-point method for
//!
//! ```text
//! minimize    sum_k softplus(r_k . x + o_k)
//! subject to  A x <= b
//! ```
//!
//! with sparse `r_k` and sparse `A`. Requires a strictly feasible start.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::num::{sigmoid, softplus};

/// Sparse vector as parallel index/value lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Sparse {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl Sparse {
    pub fn push(&mut self, i: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        match self.idx.iter().position(|&j| j == i) {
            Some(p) => self.val[p] += v,
            None => {
                self.idx.push(i);
                self.val.push(v);
            }
        }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.val {
            *v *= c;
        }
    }
}

pub(crate) struct Program<'a> {
    pub dim: usize,
    pub terms: &'a [Sparse],
    pub offsets: &'a [f64],
    pub a: &'a [Sparse],
    pub b: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub mu: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self { gap_tol: 1e-10, feas_tol: 1e-9, max_iter: 200, mu: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    #[allow(dead_code)]
    pub objective: f64,
    pub iterations: usize,
    pub gap: f64,
}

impl Program<'_> {
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.terms.iter().zip(self.offsets).map(|(r, o)| softplus(r.dot(x) + o)).sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (r, o) in self.terms.iter().zip(self.offsets) {
            let w = sigmoid(r.dot(x) + o);
            for (&i, v) in r.idx.iter().zip(&r.val) {
                g[i] += w * v;
            }
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (r, o) in self.terms.iter().zip(self.offsets) {
            let s = sigmoid(r.dot(x) + o);
            let w = s * (1.0 - s);
            if w == 0.0 {
                continue;
            }
            for (&i, vi) in r.idx.iter().zip(&r.val) {
                for (&j, vj) in r.idx.iter().zip(&r.val) {
                    h[(i, j)] += w * vi * vj;
                }
            }
        }
        h
    }

    fn slacks(&self, x: &[f64]) -> Vec<f64> {
        self.a.iter().zip(self.b).map(|(a, b)| b - a.dot(x)).collect()
    }

    fn dual_residual(&self, g: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut r = g.to_vec();
        for (a, l) in self.a.iter().zip(lambda) {
            for (&i, v) in a.idx.iter().zip(&a.val) {
                r[i] += l * v;
            }
        }
        r
    }

    fn residual_norm(&self, x: &[f64], lambda: &[f64], t: f64) -> f64 {
        let rd = self.dual_residual(&self.gradient(x), lambda);
        let s = self.slacks(x);
        let cent: f64 = lambda.iter().zip(&s).map(|(l, s)| (l * s - 1.0 / t).powi(2)).sum();
        libm::sqrt(rd.iter().map(|v| v * v).sum::<f64>() + cent)
    }
}

const STALL_FACTOR: f64 = 1e3;
const STALL_WINDOW: usize = 10;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn solve_spd(mut m: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch.solve(&rhs));
    }
    let scale = (0..m.nrows()).fold(1e-300_f64, |acc, i| acc.max(m[(i, i)].abs()));
    let mut reg = 1e-14 * scale;
    for _ in 0..12 {
        for i in 0..m.nrows() {
            m[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(m.clone()) {
            return Ok(ch.solve(&rhs));
        }
        reg *= 10.0;
    }
    Err(Error::Solver { status: "singular-newton-system".to_string(), detail: "Newton matrix is not positive definite".to_string() })
}

pub(crate) fn solve(p: &Program<'_>, x0: Vec<f64>, settings: Settings) -> Result<Outcome> {
    let n = p.dim;
    let m = p.a.len();
    let mut x = x0;
    let s0 = p.slacks(&x);
    if s0.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Solver { status: "infeasible-start".to_string(), detail: "starting point is not strictly feasible".to_string() });
    }
    if m == 0 && n == 0 {
        return Ok(Outcome { objective: p.objective(&x), x, iterations: 0, gap: 0.0 });
    }
    let mut lambda: Vec<f64> = s0.iter().map(|s| 1.0 / s).collect();
    let f0 = p.objective(&x);
    let gap_tol = settings.gap_tol * f0.abs().max(1.0);
    let feas_tol = settings.feas_tol * (1.0 + max_abs(&p.gradient(&x)));

    // Merit history for stall detection: (gap / gap_tol).max(residual / feas_tol).
    let mut history: Vec<f64> = Vec::new();
    for iter in 0..settings.max_iter {
        let s = p.slacks(&x);
        let eta: f64 = s.iter().zip(&lambda).map(|(s, l)| s * l).sum();
        let g = p.gradient(&x);
        let rd = p.dual_residual(&g, &lambda);
        let merit = (eta / gap_tol).max(max_abs(&rd) / feas_tol);
        if merit <= 1.0 {
            return Ok(Outcome { objective: p.objective(&x), x, iterations: iter, gap: eta });
        }
        // Ill-conditioned Newton systems (flat directions) can stall just above
        // the tolerances; accept when close and no longer improving.
        if merit <= STALL_FACTOR && history.len() >= STALL_WINDOW && merit > 0.9 * history[history.len() - STALL_WINDOW] {
            return Ok(Outcome { objective: p.objective(&x), x, iterations: iter, gap: eta });
        }
        history.push(merit);
        let t = if m == 0 { 1.0 } else { settings.mu * m as f64 / eta };

        let mut mat = p.hessian(&x);
        let mut rhs = DVector::from_iterator(n, rd.iter().map(|v| -v));
        for ((a, si), li) in p.a.iter().zip(&s).zip(&lambda) {
            let d = li / si;
            let rc = li * si - 1.0 / t;
            for (&i, vi) in a.idx.iter().zip(&a.val) {
                rhs[i] += vi * rc / si;
                for (&j, vj) in a.idx.iter().zip(&a.val) {
                    mat[(i, j)] += d * vi * vj;
                }
            }
        }
        let dx = solve_spd(mat, rhs)?;
        let dlambda: Vec<f64> = p
            .a
            .iter()
            .zip(&s)
            .zip(&lambda)
            .map(|((a, si), li)| {
                let adx: f64 = a.idx.iter().zip(&a.val).map(|(&i, v)| v * dx[i]).sum();
                (-(li * si - 1.0 / t) + li * adx) / si
            })
            .collect();

        let mut step = 1.0_f64;
        for (l, dl) in lambda.iter().zip(&dlambda) {
            if *dl < 0.0 {
                step = step.min(-l / dl);
            }
        }
        step *= 0.99;
        let trial = |step: f64| -> (Vec<f64>, Vec<f64>) {
            let xn = x.iter().zip(dx.iter()).map(|(x, d)| x + step * d).collect();
            let ln = lambda.iter().zip(&dlambda).map(|(l, d)| l + step * d).collect();
            (xn, ln)
        };
        let base = p.residual_norm(&x, &lambda, t);
        let mut accepted = None;
        while step > 1e-14 {
            let (xn, ln) = trial(step);
            if p.slacks(&xn).iter().all(|s| *s > 0.0) && p.residual_norm(&xn, &ln, t) <= (1.0 - 0.01 * step) * base {
                accepted = Some((xn, ln));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((xn, ln)) => {
                x = xn;
                lambda = ln;
            }
            None => {
                // Stalled at the limit of floating point: accept if nearly converged.
                if merit <= STALL_FACTOR {
                    return Ok(Outcome { objective: p.objective(&x), x, iterations: iter, gap: eta });
                }
                return Err(Error::Solver {
                    status: "line-search-failure".to_string(),
                    detail: alloc::format!("no progress at iteration {iter}: gap {eta:.3e}, dual residual {:.3e}", max_abs(&rd)),
                });
            }
        }
    }
    Err(Error::Solver { status: "max-iterations".to_string(), detail: alloc::format!("no convergence in {} iterations", settings.max_iter) })
}
