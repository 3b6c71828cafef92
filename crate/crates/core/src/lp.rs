//! Dense dictionary simplex for `max c.x  s.t.  A x <= b, x >= 0`.
//!
//! Phase one adds a single auxiliary variable. Entering variables follow
//! the largest-coefficient rule and fall back to Bland's rule once a run of
//! degenerate pivots suggests cycling.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const OPT_TOL: f64 = 1e-10;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// Row-major dictionary: for basic row `i`,
/// `basic_i = t[i][0] - sum_j t[i][j + 1] * nonbasic_j`.
/// The last row holds the objective as `z = t[m][0] - sum_j t[m][j + 1] * nonbasic_j`.
struct Dictionary {
    m: usize,
    cols: usize,
    t: Vec<f64>,
    basic: Vec<usize>,
    nonbasic: Vec<usize>,
    pivots: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Pivoted,
}

impl Dictionary {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.t[i * (self.cols + 1) + j]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.cols + 1;
        let piv = self.at(r, e + 1);
        let inv = 1.0 / piv;
        for j in 0..w {
            if j != e + 1 {
                *self.at_mut(r, j) *= inv;
            }
        }
        *self.at_mut(r, e + 1) = inv;
        let row_r: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.at(i, e + 1);
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for j in 0..w {
                if j != e + 1 {
                    row[j] -= f * row_r[j];
                }
            }
            row[e + 1] = -f * inv;
        }
        core::mem::swap(&mut self.basic[r], &mut self.nonbasic[e]);
        self.pivots += 1;
    }

    fn entering(&self, bland: bool, skip: Option<usize>) -> Option<usize> {
        let obj = self.m;
        let candidates = (0..self.cols).filter(|&j| Some(self.nonbasic[j]) != skip && self.at(obj, j + 1) < -OPT_TOL);
        if bland {
            candidates.min_by_key(|&j| self.nonbasic[j])
        } else {
            candidates.min_by(|&a, &b| self.at(obj, a + 1).total_cmp(&self.at(obj, b + 1)))
        }
    }

    fn leaving(&self, e: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, e + 1);
            if a > PIVOT_TOL {
                let ratio = self.at(i, 0).max(0.0) / a;
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - 1e-12 * br.abs().max(1.0)
                            || (ratio <= br + 1e-12 * br.abs().max(1.0) && self.basic[i] < self.basic[bi])
                        {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
        }
        best.map(|(i, _)| i)
    }

    fn step(&mut self, bland: bool, skip: Option<usize>) -> Step {
        let Some(e) = self.entering(bland, skip) else { return Step::Optimal };
        let Some(r) = self.leaving(e) else { return Step::Unbounded };
        self.pivot(r, e);
        Step::Pivoted
    }

    fn optimize(&mut self, skip: Option<usize>, max_pivots: usize) -> Result<()> {
        let mut degenerate = 0;
        let mut last = self.at(self.m, 0);
        loop {
            if self.pivots > max_pivots {
                return Err(Error::Solver { status: "max-pivots".to_string(), detail: "simplex pivot limit reached".to_string() });
            }
            match self.step(degenerate >= DEGENERATE_RUN, skip) {
                Step::Optimal => return Ok(()),
                Step::Unbounded => {
                    return Err(Error::Solver { status: "unbounded".to_string(), detail: "linear program is unbounded".to_string() })
                }
                Step::Pivoted => {
                    let z = self.at(self.m, 0);
                    if z > last + 1e-14 * last.abs().max(1.0) {
                        degenerate = 0;
                    } else {
                        degenerate += 1;
                    }
                    last = z;
                }
            }
        }
    }
}

/// Maximises `c.x` subject to `A x <= b` and `x >= 0`, with `A` given row-wise.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let m = a.len();
    if b.len() != m {
        return Err(Error::Dimension { expected: m, got: b.len() });
    }
    if let Some(row) = a.iter().find(|r| r.len() != n) {
        return Err(Error::Dimension { expected: n, got: row.len() });
    }
    let aux = n + m;
    let needs_phase_one = b.iter().any(|&bi| bi < 0.0);
    let cols = if needs_phase_one { n + 1 } else { n };
    let w = cols + 1;
    let mut t = vec![0.0; (m + 1) * w];
    for i in 0..m {
        t[i * w] = b[i];
        t[i * w + 1..i * w + 1 + n].copy_from_slice(&a[i]);
        if needs_phase_one {
            t[i * w + n + 1] = -1.0;
        }
    }
    let mut nonbasic: Vec<usize> = (0..n).collect();
    if needs_phase_one {
        nonbasic.push(aux);
    }
    let mut d = Dictionary { m, cols, t, basic: (n..n + m).collect(), nonbasic, pivots: 0 };
    let max_pivots = 50 * (m + n + 10);

    if needs_phase_one {
        // maximise -x_aux
        *d.at_mut(m, n + 1) = 1.0;
        let r = (0..m).min_by(|&i, &j| d.at(i, 0).total_cmp(&d.at(j, 0))).unwrap_or(0);
        d.pivot(r, n);
        d.optimize(None, max_pivots)?;
        let scale = b.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        if d.at(m, 0) < -1e-9 * scale {
            return Err(Error::Solver { status: "infeasible".to_string(), detail: "linear program has no feasible point".to_string() });
        }
        if let Some(r) = d.basic.iter().position(|&v| v == aux) {
            let e = (0..cols)
                .max_by(|&i, &j| d.at(r, i + 1).abs().total_cmp(&d.at(r, j + 1).abs()))
                .filter(|&e| d.at(r, e + 1).abs() > PIVOT_TOL);
            match e {
                Some(e) => d.pivot(r, e),
                None => *d.at_mut(r, 0) = 0.0,
            }
        }
        // Fix the auxiliary variable at zero by excluding it from entering.
        let pos = d.nonbasic.iter().position(|&v| v == aux);
        for j in 0..=cols {
            *d.at_mut(m, j) = 0.0;
        }
        for (var, &cv) in c.iter().enumerate() {
            if cv == 0.0 {
                continue;
            }
            if let Some(p) = d.nonbasic.iter().position(|&v| v == var) {
                *d.at_mut(m, p + 1) -= cv;
            } else if let Some(r) = d.basic.iter().position(|&v| v == var) {
                for j in 0..=cols {
                    let v = d.at(r, j);
                    *d.at_mut(m, j) += cv * v;
                }
            }
        }
        if let Some(p) = pos {
            *d.at_mut(m, p + 1) = 0.0;
        }
        d.optimize(Some(aux), max_pivots)?;
    } else {
        for (j, &cv) in c.iter().enumerate() {
            *d.at_mut(m, j + 1) = -cv;
        }
        d.optimize(None, max_pivots)?;
    }

    let mut x = vec![0.0; n];
    for (i, &v) in d.basic.iter().enumerate() {
        if v < n {
            x[v] = d.at(i, 0).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpSolution { x, objective, pivots: d.pivots })
}
