//! Constrained maximum-likelihood estimation of the adjusted utility.
//!
//! The program is solved in the adjusted values `theta = alpha / sigma` at the
//! breakpoints, with `theta_1 = 0` and `theta_N = gamma = 1 / sigma`:
//!
//! ```text
//! maximize   -sum_k ln(1 + exp(-Z_k p^k . theta))
//! subject to the shape restrictions of the structure level, gamma in [0, cbar]
//! ```
//!
//! The estimate is then split into a normalised utility and a scale.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bounds::{info_matrix_from_rows, Spectrum};
use crate::error::{domain, Error, Result};
use crate::grid::{mass_diff, BreakpointGrid};
use crate::ipm::{self, Program, Settings, Sparse};
use crate::lottery::ComparisonRecord;
use crate::lp;
use crate::num::{sigmoid, softplus};
use crate::utility::{PiecewiseUtility, Shape, StructureLevel, Utility};

/// Signed rows `r_k = -Z_k p^k` of the log-likelihood, over all `N` breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRows {
    n: usize,
    rows: Vec<Sparse>,
    reduced: Vec<Vec<f64>>,
}

impl LikelihoodRows {
    pub fn from_dataset(dataset: &[ComparisonRecord], grid: &BreakpointGrid) -> Result<Self> {
        let n = grid.len();
        let mut rows = Vec::with_capacity(dataset.len());
        let mut reduced = Vec::with_capacity(dataset.len());
        for rec in dataset {
            let p = mass_diff(&rec.w, &rec.y, grid)?;
            let z = rec.z.sign();
            let mut r = Sparse::default();
            for (j, v) in p.full().iter().enumerate().skip(1) {
                r.push(j, -z * v);
            }
            rows.push(r);
            reduced.push(p.reduced().to_vec());
        }
        Ok(Self { n, rows, reduced })
    }

    /// Number of breakpoints.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Unsigned reduced mass-difference rows `p^k_{2:N}`.
    pub fn reduced(&self) -> &[Vec<f64>] {
        &self.reduced
    }

    /// `sum_k Z_k p^k` over all breakpoints.
    pub fn aggregate(&self) -> Vec<f64> {
        let mut pbar = vec![0.0; self.n];
        for r in &self.rows {
            for (&i, v) in r.idx.iter().zip(&r.val) {
                pbar[i] -= v;
            }
        }
        pbar
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: theta.len() });
        }
        Ok(())
    }
}

/// `-sum_k ln(1 + exp(-Z_k p^k . theta))`.
pub fn log_likelihood(theta: &[f64], rows: &LikelihoodRows) -> Result<f64> {
    rows.check(theta)?;
    Ok(-rows.rows.iter().map(|r| softplus(r.dot(theta))).sum::<f64>())
}

/// Gradient of [`log_likelihood`] in `theta`. The first component is
/// reported as 0 since `theta_1` is pinned.
pub fn log_likelihood_gradient(theta: &[f64], rows: &LikelihoodRows) -> Result<Vec<f64>> {
    rows.check(theta)?;
    let mut g = vec![0.0; rows.n];
    for r in &rows.rows {
        let w = sigmoid(r.dot(theta));
        for (&i, v) in r.idx.iter().zip(&r.val) {
            g[i] -= w * v;
        }
    }
    Ok(g)
}

/// Log-likelihood of a utility and error scale, evaluated directly from the
/// lotteries without a grid.
pub fn log_likelihood_of<U: Utility + ?Sized>(u: &U, sigma: f64, dataset: &[ComparisonRecord]) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(domain("error scale must be positive"));
    }
    dataset.iter().try_fold(0.0, |acc, rec| {
        let gap = u.expected(&rec.w)? - u.expected(&rec.y)?;
        Ok(acc - softplus(-rec.z.sign() * gap / sigma))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleStatus {
    Unique,
    NonUniqueRankDeficient,
    /// `gamma* = 0`: no admissible utility rationalises the choices.
    NotRationalizable,
    /// `gamma*` sits at its upper bound `cbar`.
    SeparationAtBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Solve with `sigma` fixed to this value instead of estimating it.
    pub fixed_sigma: Option<f64>,
    /// `gamma* <= gamma_zero_rel_tol * cbar` counts as `gamma* = 0`.
    pub gamma_zero_rel_tol: f64,
    /// `gamma* >= (1 - separation_rel_tol) * cbar` counts as separation.
    pub separation_rel_tol: f64,
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        let s = Settings::default();
        Self {
            fixed_sigma: None,
            gamma_zero_rel_tol: 1e-6,
            separation_rel_tol: 1e-6,
            gap_tol: s.gap_tol,
            feas_tol: s.feas_tol,
            max_iter: s.max_iter,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleProblem {
    grid: BreakpointGrid,
    rows: LikelihoodRows,
    structure: StructureLevel,
    options: MleOptions,
}

impl MleProblem {
    pub fn new(grid: BreakpointGrid, dataset: &[ComparisonRecord], structure: StructureLevel) -> Result<Self> {
        let rows = LikelihoodRows::from_dataset(dataset, &grid)?;
        Self::from_rows(grid, rows, structure)
    }

    pub fn from_rows(grid: BreakpointGrid, rows: LikelihoodRows, structure: StructureLevel) -> Result<Self> {
        structure.validate()?;
        if rows.dim() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: rows.dim() });
        }
        if structure.shape == Shape::Full && structure.lipschitz * grid.upper() <= 1.0 {
            return Err(domain("L * upper must exceed 1, otherwise no normalised utility is strictly L-Lipschitz"));
        }
        Ok(Self { grid, rows, structure, options: MleOptions::default() })
    }

    pub fn with_options(mut self, options: MleOptions) -> Result<Self> {
        if let Some(s) = options.fixed_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(domain("fixed sigma must be positive"));
            }
        }
        self.options = options;
        Ok(self)
    }

    pub fn with_fixed_sigma(self, sigma: f64) -> Result<Self> {
        let options = MleOptions { fixed_sigma: Some(sigma), ..self.options };
        self.with_options(options)
    }

    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    pub fn rows(&self) -> &LikelihoodRows {
        &self.rows
    }

    pub fn structure(&self) -> &StructureLevel {
        &self.structure
    }

    pub fn options(&self) -> &MleOptions {
        &self.options
    }

    pub fn gamma_zero_tol(&self) -> f64 {
        self.options.gamma_zero_rel_tol * self.structure.cbar
    }
}

/// Linear restrictions `a . theta <= b` over all `N` values, each row
/// scaled to unit max-abs coefficient.
pub(crate) fn structure_rows(grid: &BreakpointGrid, level: &StructureLevel) -> Vec<(Sparse, f64)> {
    let n = grid.len();
    let last = n - 1;
    let slope = |j: usize, c: f64, row: &mut Sparse| {
        let d = grid.gap(j);
        row.push(j + 1, c / d);
        row.push(j, -c / d);
    };
    let mut out: Vec<(Sparse, f64)> = Vec::new();
    let mut add = |row: Sparse, b: f64| out.push((row, b));
    match level.shape {
        Shape::Full | Shape::NoLipschitz => {
            for j in 0..n.saturating_sub(2) {
                let mut r = Sparse::default();
                slope(j + 1, 1.0, &mut r);
                slope(j, -1.0, &mut r);
                add(r, 0.0);
            }
            if level.shape == Shape::Full {
                let mut r = Sparse::default();
                slope(0, 1.0, &mut r);
                r.push(last, -level.lipschitz);
                add(r, 0.0);
            }
            let mut r = Sparse::default();
            slope(n - 2, -1.0, &mut r);
            add(r, 0.0);
        }
        Shape::MonotoneOnly => {
            for j in 0..n - 1 {
                let mut r = Sparse::default();
                slope(j, -1.0, &mut r);
                add(r, 0.0);
            }
        }
        Shape::Unstructured => {
            for j in 1..last {
                let mut up = Sparse::default();
                up.push(j, 1.0);
                up.push(last, -level.unstructured_bound);
                add(up, 0.0);
                let mut lo = Sparse::default();
                lo.push(j, -1.0);
                lo.push(last, -level.unstructured_bound);
                add(lo, 0.0);
            }
        }
    }
    let mut lo = Sparse::default();
    lo.push(last, -1.0);
    add(lo, 0.0);
    let mut hi = Sparse::default();
    hi.push(last, 1.0);
    add(hi, level.cbar);
    for (row, b) in &mut out {
        let s = row.max_abs();
        if s > 0.0 {
            row.scale(1.0 / s);
            *b /= s;
        }
    }
    out
}

/// Restrictions in the free variables: `theta_2..theta_N`, or
/// `theta_2..theta_{N-1}` when `gamma` is fixed.
struct Reduced {
    dim: usize,
    a: Vec<Sparse>,
    b: Vec<f64>,
}

fn reduce_rows(rows: &[(Sparse, f64)], n: usize, fixed_gamma: Option<f64>) -> Result<Reduced> {
    let last = n - 1;
    let dim = if fixed_gamma.is_some() { n - 2 } else { n - 1 };
    let mut a = Vec::with_capacity(rows.len());
    let mut b = Vec::with_capacity(rows.len());
    for (row, rhs) in rows {
        let mut out = Sparse::default();
        let mut rhs = *rhs;
        for (&i, &v) in row.idx.iter().zip(&row.val) {
            match (i, fixed_gamma) {
                (0, _) => {}
                (i, Some(g)) if i == last => rhs -= v * g,
                (i, _) => out.push(i - 1, v),
            }
        }
        if out.is_empty() {
            if rhs < -1e-12 {
                return Err(domain("fixed scale violates the structure restrictions"));
            }
            continue;
        }
        a.push(out);
        b.push(rhs);
    }
    Ok(Reduced { dim, a, b })
}

/// Strictly feasible point `gamma * (1 - e^{-a y / upper}) / (1 - e^{-a})`.
fn interior_start(grid: &BreakpointGrid, level: &StructureLevel, gamma: f64) -> Vec<f64> {
    let upper = grid.upper();
    let curvature = if level.shape == Shape::Full { (level.lipschitz * upper - 1.0).min(1.0) } else { 1.0 };
    let denom = libm::expm1(-curvature);
    grid.points().iter().map(|y| gamma * libm::expm1(-curvature * y / upper) / denom).collect()
}

/// Maximum-likelihood estimate and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleSolution {
    pub structure: StructureLevel,
    pub grid: BreakpointGrid,
    pub gamma_star: f64,
    /// `1 / gamma*`; absent when `gamma* = 0`.
    pub sigma_hat: Option<f64>,
    /// Normalised utility values `alpha_hat` at the breakpoints.
    pub alpha_hat: Option<Vec<f64>>,
    pub beta_hat: Option<Vec<f64>>,
    /// Identified adjusted values `alpha_hat * gamma*`.
    pub theta_hat: Vec<f64>,
    pub loglik: f64,
    pub status: MleStatus,
    /// Eigen-summary of the information matrix of the data.
    pub spectrum: Spectrum,
    pub gamma_zero_tol: f64,
    pub fixed_sigma: Option<f64>,
    pub iterations: usize,
    pub duality_gap: f64,
}

impl MleSolution {
    /// The normalised estimate, when one exists.
    pub fn utility(&self) -> Option<PiecewiseUtility> {
        let alpha = self.alpha_hat.clone()?;
        let beta = self.beta_hat.clone()?;
        PiecewiseUtility::from_parts(self.grid.clone(), alpha, beta).ok()
    }

    pub fn has_utility(&self) -> bool {
        self.alpha_hat.is_some()
    }
}

/// Projects a utility vector onto the structure restrictions and the
/// normalisation `alpha_1 = 0`, `alpha_N = 1`.
fn clean_alpha(raw: &[f64], grid: &BreakpointGrid, level: &StructureLevel) -> Vec<f64> {
    let n = raw.len();
    if level.shape == Shape::Unstructured {
        let mut a = raw.to_vec();
        a[0] = 0.0;
        a[n - 1] = 1.0;
        return a;
    }
    let mut beta: Vec<f64> = (0..n - 1).map(|j| ((raw[j + 1] - raw[j]) / grid.gap(j)).max(0.0)).collect();
    if matches!(level.shape, Shape::Full | Shape::NoLipschitz) {
        for j in 1..beta.len() {
            beta[j] = beta[j].min(beta[j - 1]);
        }
    }
    let total: f64 = beta.iter().enumerate().map(|(j, b)| b * grid.gap(j)).sum();
    if !(total > 0.0) {
        beta = vec![1.0 / grid.upper(); n - 1];
    } else {
        for b in &mut beta {
            *b /= total;
        }
    }
    if level.shape == Shape::Full && beta[0] > level.lipschitz {
        // Mix with the straight line, which keeps every restriction.
        let flat = 1.0 / grid.upper();
        let t = (beta[0] - level.lipschitz) / (beta[0] - flat);
        for b in &mut beta {
            *b = (1.0 - t) * *b + t * flat;
        }
    }
    let mut alpha = Vec::with_capacity(n);
    alpha.push(0.0);
    for (j, b) in beta.iter().enumerate() {
        let next = alpha[j] + b * grid.gap(j);
        alpha.push(next);
    }
    alpha[n - 1] = 1.0;
    alpha
}

pub fn solve_mle(problem: &MleProblem) -> Result<MleSolution> {
    let grid = &problem.grid;
    let level = &problem.structure;
    let n = grid.len();
    let last = n - 1;
    let fixed_gamma = problem.options.fixed_sigma.map(|s| 1.0 / s);
    let rows = structure_rows(grid, level);
    let reduced = reduce_rows(&rows, n, fixed_gamma)?;

    let mut terms = Vec::with_capacity(problem.rows.len());
    let mut offsets = Vec::with_capacity(problem.rows.len());
    for r in &problem.rows.rows {
        let mut t = Sparse::default();
        let mut off = 0.0;
        for (&i, &v) in r.idx.iter().zip(&r.val) {
            match fixed_gamma {
                Some(g) if i == last => off += v * g,
                _ => t.push(i - 1, v),
            }
        }
        terms.push(t);
        offsets.push(off);
    }

    let gamma0 = fixed_gamma.unwrap_or_else(|| level.cbar.min(2.0) / 2.0);
    let theta0 = interior_start(grid, level, gamma0);
    let x0: Vec<f64> = theta0[1..1 + reduced.dim].to_vec();
    let program = Program { dim: reduced.dim, terms: &terms, offsets: &offsets, a: &reduced.a, b: &reduced.b };
    let settings = Settings {
        gap_tol: problem.options.gap_tol,
        feas_tol: problem.options.feas_tol,
        max_iter: problem.options.max_iter,
        ..Settings::default()
    };
    let out = ipm::solve(&program, x0, settings)?;

    let mut theta = vec![0.0; n];
    theta[1..1 + reduced.dim].copy_from_slice(&out.x);
    if let Some(g) = fixed_gamma {
        theta[last] = g;
    }
    if fixed_gamma.is_none() && theta[last] > 0.0 {
        // The feasible set is a cone cut by gamma <= cbar, so both ends of the ray
        // through the solution are feasible. Prefer them when they are no worse.
        let here = log_likelihood(&theta, &problem.rows)?;
        let zero = -(problem.rows.len() as f64) * core::f64::consts::LN_2;
        let tol = problem.options.gap_tol * here.abs().max(1.0);
        if zero >= here - tol {
            theta.iter_mut().for_each(|t| *t = 0.0);
        } else {
            let c = level.cbar / theta[last];
            let edge: Vec<f64> = theta.iter().map(|t| t * c).collect();
            if log_likelihood(&edge, &problem.rows)? > here {
                theta = edge;
                theta[last] = level.cbar;
            }
        }
    }
    let gamma = theta[last];
    let loglik = log_likelihood(&theta, &problem.rows)?;
    let spectrum = if problem.rows.is_empty() {
        Spectrum { k: 0, dim: n - 1, rank: 0, eigenvalues: vec![0.0; n - 1], lambda_min: 0.0 }
    } else {
        info_matrix_from_rows(problem.rows.reduced(), n - 1)?.spectrum()
    };
    let rank = spectrum.rank;
    let zero_tol = problem.gamma_zero_tol();
    let (status, alpha, theta_hat) = if gamma <= zero_tol {
        (MleStatus::NotRationalizable, None, vec![0.0; n])
    } else {
        let raw: Vec<f64> = theta.iter().map(|t| t / gamma).collect();
        let alpha = clean_alpha(&raw, grid, level);
        let theta_hat = alpha.iter().map(|a| a * gamma).collect();
        let status = if fixed_gamma.is_none() && gamma >= level.cbar * (1.0 - problem.options.separation_rel_tol) {
            MleStatus::SeparationAtBound
        } else if rank == n - 1 {
            MleStatus::Unique
        } else {
            MleStatus::NonUniqueRankDeficient
        };
        (status, Some(alpha), theta_hat)
    };
    let beta = alpha.as_ref().map(|a| (0..n - 1).map(|j| (a[j + 1] - a[j]) / grid.gap(j)).collect());

    Ok(MleSolution {
        structure: *level,
        grid: grid.clone(),
        gamma_star: gamma,
        sigma_hat: (status != MleStatus::NotRationalizable).then(|| 1.0 / gamma),
        alpha_hat: alpha,
        beta_hat: beta,
        theta_hat,
        loglik,
        status,
        spectrum,
        gamma_zero_tol: zero_tol,
        fixed_sigma: problem.options.fixed_sigma,
        iterations: out.iterations,
        duality_gap: out.gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GammaZero,
    GammaPositive,
}

/// Outcome of the aggregate rationalisability test `max_{alpha in A} pbar . alpha <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationalizability {
    pub verdict: Verdict,
    pub pbar: Vec<f64>,
    /// LP optimum; absent when the sign test on `pbar` already decided.
    pub lp_value: Option<f64>,
    /// Maximising utility values.
    pub certificate: Option<Vec<f64>>,
}

/// Decides whether `gamma* = 0` without solving the likelihood program.
pub fn check_rationalizability(
    dataset: &[ComparisonRecord],
    grid: &BreakpointGrid,
    level: &StructureLevel,
) -> Result<Rationalizability> {
    level.validate()?;
    let rows = LikelihoodRows::from_dataset(dataset, grid)?;
    let pbar = rows.aggregate();
    let n = grid.len();
    let scale = 1.0 + pbar.iter().map(|v| v.abs()).sum::<f64>();
    let tol = 1e-12 * scale;
    if level.shape != Shape::Unstructured && pbar.iter().all(|v| *v <= 0.0) {
        return Ok(Rationalizability { verdict: Verdict::GammaZero, pbar, lp_value: None, certificate: None });
    }
    let shift = if level.shape == Shape::Unstructured { level.unstructured_bound } else { 0.0 };
    let reduced = reduce_rows(&structure_rows(grid, level), n, Some(1.0))?;
    let m = reduced.dim;
    let (value, alpha) = if m == 0 {
        (pbar[n - 1], vec![0.0, 1.0])
    } else {
        let mut a = Vec::with_capacity(reduced.a.len());
        let mut b = Vec::with_capacity(reduced.a.len());
        for (row, rhs) in reduced.a.iter().zip(&reduced.b) {
            let mut dense = vec![0.0; m];
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                dense[i] = v;
            }
            let shifted: f64 = rhs + shift * dense.iter().sum::<f64>();
            a.push(dense);
            b.push(shifted);
        }
        let c: Vec<f64> = pbar[1..n - 1].to_vec();
        let sol = lp::maximize(&c, &a, &b)?;
        let mut alpha = vec![0.0; n];
        for j in 0..m {
            alpha[j + 1] = sol.x[j] - shift;
        }
        alpha[n - 1] = 1.0;
        let value = pbar.iter().zip(&alpha).map(|(p, a)| p * a).sum();
        (value, alpha)
    };
    let verdict = if value <= tol { Verdict::GammaZero } else { Verdict::GammaPositive };
    Ok(Rationalizability { verdict, pbar, lp_value: Some(value), certificate: Some(alpha) })
}

/// The optimal set of utilities sharing the estimate's breakpoint values:
/// the estimate is its pointwise minimum and `upper` its pointwise maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityBand {
    pub lower: PiecewiseUtility,
    pub shape: Shape,
    pub lipschitz: f64,
}

impl UtilityBand {
    /// Largest admissible utility value at `y`.
    pub fn upper(&self, y: f64) -> Result<f64> {
        let u = &self.lower;
        let g = u.grid();
        let lower = u.value(y)?;
        if g.index_of(y).is_some() {
            return Ok(lower);
        }
        let j = g.segment_of(y);
        let (a, b, pts) = (u.alpha(), u.beta(), g.points());
        if self.shape == Shape::MonotoneOnly {
            return Ok(a[j + 1]);
        }
        let from_left = match (j, self.shape) {
            (0, Shape::Full) => a[0] + self.lipschitz * (y - pts[0]),
            (0, _) => f64::INFINITY,
            (j, _) => a[j] + b[j - 1] * (y - pts[j]),
        };
        let from_right = if j + 1 == b.len() { a[j + 1] } else { a[j + 1] - b[j + 1] * (pts[j + 1] - y) };
        Ok(from_left.min(from_right).max(lower))
    }

    /// Breakpoints and interior kinks of the upper envelope as `(y, value)`.
    pub fn upper_polyline(&self) -> Result<Vec<(f64, f64)>> {
        let g = self.lower.grid();
        let pts = g.points();
        let mut out = Vec::with_capacity(2 * pts.len());
        for (j, (&y_j, &a_j)) in pts.iter().zip(self.lower.alpha()).enumerate().take(pts.len() - 1) {
            out.push((y_j, a_j));
            if let Some(y) = self.kink(j) {
                out.push((y, self.upper(y)?));
            }
        }
        out.push((g.upper(), self.lower.alpha()[pts.len() - 1]));
        Ok(out)
    }

    fn kink(&self, j: usize) -> Option<f64> {
        let u = &self.lower;
        let (a, b, pts) = (u.alpha(), u.beta(), u.grid().points());
        if self.shape == Shape::MonotoneOnly {
            return Some(pts[j] + 1e-9 * (pts[j + 1] - pts[j]));
        }
        let left_slope = if j == 0 {
            if self.shape == Shape::Full { self.lipschitz } else { return None }
        } else {
            b[j - 1]
        };
        let right_slope = if j + 1 == b.len() { 0.0 } else { b[j + 1] };
        if left_slope <= right_slope {
            return None;
        }
        // a_j + s_l (y - y_j) = a_{j+1} - s_r (y_{j+1} - y)
        let y = (a[j + 1] - a[j] - right_slope * pts[j + 1] + left_slope * pts[j]) / (left_slope - right_slope);
        (y > pts[j] && y < pts[j + 1]).then_some(y)
    }
}

pub fn optimal_set_band(solution: &MleSolution) -> Result<UtilityBand> {
    if solution.status != MleStatus::Unique {
        return Err(Error::State("the optimal set is characterised only for a unique estimate".to_string()));
    }
    if solution.structure.shape == Shape::Unstructured {
        return Err(Error::State("without shape restrictions the optimal set is unbounded".to_string()));
    }
    let lower = solution.utility().ok_or_else(|| Error::State("solution carries no utility".to_string()))?;
    Ok(UtilityBand { lower, shape: solution.structure.shape, lipschitz: solution.structure.lipschitz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lottery::{Choice, Lottery};

    fn rec(w: Lottery, y: Lottery, z: Choice) -> ComparisonRecord {
        ComparisonRecord { w, y, z }
    }

    fn full(cbar: f64) -> StructureLevel {
        StructureLevel::new(Shape::Full, 10.0, cbar).unwrap()
    }

    #[test]
    fn likelihood_examples() {
        let g = BreakpointGrid::endpoints(1.0).unwrap();
        let d: Vec<_> = (0..3).map(|_| rec(Lottery::dirac(0.0).unwrap(), Lottery::dirac(1.0).unwrap(), Choice::First)).collect();
        let rows = LikelihoodRows::from_dataset(&d, &g).unwrap();
        assert!((log_likelihood(&[0.0, 0.0], &rows).unwrap() + 3.0 * core::f64::consts::LN_2).abs() < 1e-14);
        let empty = LikelihoodRows::from_dataset(&[], &g).unwrap();
        assert_eq!(log_likelihood(&[0.0, 0.3], &empty).unwrap(), 0.0);
        assert_eq!(log_likelihood_gradient(&[0.0, 0.3], &empty).unwrap(), vec![0.0, 0.0]);
        // r = -Z p = -(1)(1, -1) = (-1, 1) so r . theta = theta_2.
        let one = LikelihoodRows::from_dataset(&d[..1], &g).unwrap();
        let ll = log_likelihood(&[0.0, libm::log(3.0)], &one).unwrap();
        assert!((ll + libm::log(4.0)).abs() < 1e-14);
        assert!(log_likelihood(&[0.0], &one).is_err());
    }

    #[test]
    fn gradient_at_zero_is_half_signed_mass() {
        let g = BreakpointGrid::new(vec![0.0, 0.5, 1.0], 1e-6).unwrap();
        let w = Lottery::from_pairs(&[(0.5, 0.6), (0.0, 0.4)]).unwrap();
        let y = Lottery::dirac(1.0).unwrap();
        let d = [rec(w.clone(), y.clone(), Choice::Second)];
        let rows = LikelihoodRows::from_dataset(&d, &g).unwrap();
        let grad = log_likelihood_gradient(&[0.0; 3], &rows).unwrap();
        let p = mass_diff(&w, &y, &g).unwrap();
        for (g, pj) in grad.iter().zip(p.full()).skip(1) {
            assert!((g + pj / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_choice_on_dominance_is_not_rationalizable() {
        let g = BreakpointGrid::endpoints(1.0).unwrap();
        let d = [rec(Lottery::dirac(0.0).unwrap(), Lottery::dirac(1.0).unwrap(), Choice::First)];
        let p = MleProblem::new(g.clone(), &d, full(100.0)).unwrap();
        let s = solve_mle(&p).unwrap();
        assert_eq!(s.status, MleStatus::NotRationalizable);
        assert!(s.sigma_hat.is_none() && s.utility().is_none());
        let r = check_rationalizability(&d, &g, &full(100.0)).unwrap();
        assert_eq!(r.verdict, Verdict::GammaZero);
        assert!(r.lp_value.is_none());
    }

    #[test]
    fn right_choice_on_dominance_separates() {
        let g = BreakpointGrid::endpoints(1.0).unwrap();
        let d = [rec(Lottery::dirac(1.0).unwrap(), Lottery::dirac(0.0).unwrap(), Choice::First)];
        let s = solve_mle(&MleProblem::new(g, &d, full(100.0)).unwrap()).unwrap();
        assert_eq!(s.status, MleStatus::SeparationAtBound);
        assert!((s.gamma_star - 100.0).abs() <= 1e-6 * 100.0);
        assert!(s.loglik < 0.0);
    }

    #[test]
    fn contradictory_answers_give_gamma_zero() {
        let g = BreakpointGrid::new(vec![0.0, 0.4, 1.0], 1e-6).unwrap();
        let w = Lottery::from_pairs(&[(0.4, 0.5), (1.0, 0.5)]).unwrap();
        let y = Lottery::dirac(0.4).unwrap();
        let d = [rec(w.clone(), y.clone(), Choice::First), rec(w, y, Choice::Second)];
        let s = solve_mle(&MleProblem::new(g.clone(), &d, full(100.0)).unwrap()).unwrap();
        assert_eq!(s.status, MleStatus::NotRationalizable);
        assert!((s.loglik + 2.0 * core::f64::consts::LN_2).abs() < 1e-8);
        let r = check_rationalizability(&d, &g, &full(100.0)).unwrap();
        assert_eq!(r.verdict, Verdict::GammaZero);
    }

    #[test]
    fn clean_alpha_enforces_structure() {
        let g = BreakpointGrid::new(vec![0.0, 1.0, 2.0, 3.0], 1e-6).unwrap();
        let a = clean_alpha(&[0.0, 0.5, 0.5 + 0.5 + 1e-9, 1.0], &g, &full(1.0));
        let u = PiecewiseUtility::interpolate(g, a).unwrap();
        assert!(u.satisfies(&full(1.0), 0.0));
        assert_eq!(u.alpha()[3], 1.0);
    }

    #[test]
    fn two_point_band_is_capped_only_by_lipschitz() {
        let g = BreakpointGrid::endpoints(1.0).unwrap();
        let u = PiecewiseUtility::interpolate(g, vec![0.0, 1.0]).unwrap();
        let band = UtilityBand { lower: u, shape: Shape::NoLipschitz, lipschitz: 10.0 };
        assert_eq!(band.upper(0.3).unwrap(), 1.0);
        assert_eq!(band.upper(0.0).unwrap(), 0.0);
        let full_band = UtilityBand { shape: Shape::Full, ..band };
        assert!((full_band.upper(0.05).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fixed_sigma_pins_gamma() {
        let g = BreakpointGrid::new(vec![0.0, 0.5, 1.0], 1e-6).unwrap();
        let d = [
            rec(Lottery::dirac(0.5).unwrap(), Lottery::from_pairs(&[(0.0, 0.5), (1.0, 0.5)]).unwrap(), Choice::First),
            rec(Lottery::dirac(1.0).unwrap(), Lottery::dirac(0.5).unwrap(), Choice::Second),
        ];
        let p = MleProblem::new(g, &d, full(100.0)).unwrap().with_fixed_sigma(4.0).unwrap();
        let s = solve_mle(&p).unwrap();
        assert_eq!(s.gamma_star, 0.25);
        assert_eq!(s.fixed_sigma, Some(4.0));
        assert!((s.theta_hat[2] - 0.25).abs() < 1e-15);
    }
}
