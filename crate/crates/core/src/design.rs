//! Query generation: random pairs, rank-complete designs and the
//! multi-round orthogonal design that refines the grid one breakpoint at a
//! time.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{mass_diff, BreakpointGrid};
use crate::lottery::{Lottery, Outcome};
use crate::simulate::{random_lottery, random_pair};

/// Default amplitude of a designed query's mass difference.
pub const DEFAULT_SCALE: f64 = 0.5;

/// Relative residual below which a candidate adds no new direction.
const SPAN_TOL: f64 = 1e-9;

/// Random candidates tried per slot before falling back to a basis direction.
const MAX_CANDIDATES: usize = 64;

/// Unanswered pair of lotteries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub w: Lottery,
    pub y: Lottery,
}

impl From<(Lottery, Lottery)> for Query {
    fn from((w, y): (Lottery, Lottery)) -> Self {
        Self { w, y }
    }
}

/// `count` independent random pairs on the grid points.
pub fn random_queries<R: Rng + ?Sized>(grid: &BreakpointGrid, count: usize, rng: &mut R) -> Result<Vec<Query>> {
    (0..count).map(|_| random_pair(grid.points(), rng).map(Query::from)).collect()
}

/// Incremental Gram-Schmidt basis of the span of accepted rows.
struct Span {
    basis: Vec<Vec<f64>>,
}

impl Span {
    fn residual(&self, v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        // Two passes keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for b in &self.basis {
                let c: f64 = b.iter().zip(&r).map(|(b, r)| b * r).sum();
                r.iter_mut().zip(b).for_each(|(r, b)| *r -= c * b);
            }
        }
        r
    }

    /// Adds `v` if it leaves the current span; returns whether it did.
    fn try_add(&mut self, v: &[f64]) -> bool {
        let scale = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if scale == 0.0 {
            return false;
        }
        let r = self.residual(v);
        let norm = libm::sqrt(r.iter().map(|x| x * x).sum::<f64>());
        if norm <= SPAN_TOL * scale {
            return false;
        }
        self.basis.push(r.into_iter().map(|x| x / norm).collect());
        true
    }
}

/// `k` queries whose reduced mass differences span all `N - 1` directions.
///
/// The first `N - 1` queries are random pairs accepted only when they enlarge
/// the span (with a basis-direction fallback), so every prefix of length at
/// least `N - 1` has a full-rank information matrix. The rest are random.
pub fn full_rank_design<R: Rng + ?Sized>(grid: &BreakpointGrid, k: usize, rng: &mut R) -> Result<Vec<Query>> {
    let dim = grid.len() - 1;
    if k < dim {
        return Err(domain(alloc::format!(
            "a full-rank design on {} breakpoints needs at least {dim} queries, got {k}",
            grid.len()
        )));
    }
    let mut span = Span { basis: Vec::with_capacity(dim) };
    let mut out = Vec::with_capacity(k);
    while span.basis.len() < dim {
        let mut accepted = None;
        for _ in 0..MAX_CANDIDATES {
            let q = Query::from(random_pair(grid.points(), rng)?);
            let row = mass_diff(&q.w, &q.y, grid)?;
            if span.try_add(row.reduced()) {
                accepted = Some(q);
                break;
            }
        }
        let q = match accepted {
            Some(q) => q,
            None => {
                let j = (0..dim)
                    .max_by(|&a, &b| {
                        let ra = span.residual(&unit(dim, a))[a];
                        let rb = span.residual(&unit(dim, b))[b];
                        ra.total_cmp(&rb)
                    })
                    .unwrap_or(0);
                let e = unit(dim, j);
                span.try_add(&e);
                direction_to_query(&e, grid, DEFAULT_SCALE)?
            }
        };
        out.push(q);
    }
    out.extend(random_queries(grid, k - dim, rng)?);
    Ok(out)
}

fn unit(dim: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[j] = 1.0;
    e
}

/// Pair whose reduced mass difference is a positive multiple of `direction`.
///
/// The positive and negative parts go to `W` and `Y`, scaled by
/// `scale / max(|q+|_1, |q-|_1, 1)`; each lottery puts its remaining mass on
/// the first breakpoint.
pub fn direction_to_query(direction: &[f64], grid: &BreakpointGrid, scale: f64) -> Result<Query> {
    let dim = grid.len() - 1;
    if direction.len() != dim {
        return Err(Error::Dimension { expected: dim, got: direction.len() });
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(domain("query scale must lie in (0, 1]"));
    }
    if direction.iter().any(|d| !d.is_finite()) || direction.iter().all(|d| *d == 0.0) {
        return Err(domain("direction must be finite and nonzero"));
    }
    let pos: f64 = direction.iter().filter(|d| **d > 0.0).sum();
    let neg: f64 = -direction.iter().filter(|d| **d < 0.0).sum::<f64>();
    let c = scale / pos.max(neg).max(1.0);
    let side = |sign: f64| -> Result<Lottery> {
        let pts = grid.points();
        let mut outcomes: Vec<Outcome> = direction
            .iter()
            .enumerate()
            .filter(|(_, d)| **d * sign > 0.0)
            .map(|(j, d)| Outcome { payoff: pts[j + 1], prob: c * d.abs() })
            .collect();
        let used: f64 = outcomes.iter().map(|o| o.prob).sum();
        outcomes.push(Outcome { payoff: pts[0], prob: 1.0 - used });
        Lottery::new(outcomes)
    };
    Ok(Query { w: side(1.0)?, y: side(-1.0)? })
}

/// Role of a query within a design round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Orthogonal,
    Exploration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignQuery {
    pub kind: QueryKind,
    pub w: Lottery,
    pub y: Lottery,
}

/// Queries of one round together with the breakpoint it introduces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    /// 1-based round index.
    pub round: usize,
    /// Breakpoint count the orthogonal batch was built on.
    pub n_r: usize,
    pub queries: Vec<DesignQuery>,
    pub new_breakpoint: f64,
}

/// Progress of the multi-round design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignState {
    grid: BreakpointGrid,
    issued: Vec<(Lottery, Lottery)>,
    rounds: usize,
    scale: f64,
    payoff_quantum: f64,
}

impl DesignState {
    /// Starts on `{0, upper}` with new breakpoints rounded to `payoff_quantum`.
    pub fn new(upper: f64, payoff_quantum: f64, scale: f64) -> Result<Self> {
        if !(upper > 0.0 && upper.is_finite()) {
            return Err(domain("upper payoff must be positive and finite"));
        }
        if !(payoff_quantum > 0.0 && payoff_quantum.is_finite()) {
            return Err(domain("payoff quantum must be positive"));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(domain("query scale must lie in (0, 1]"));
        }
        let grid = BreakpointGrid::new(vec![0.0, upper], payoff_quantum / 2.0)?;
        Ok(Self { grid, issued: Vec::new(), rounds: 0, scale, payoff_quantum })
    }

    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    /// Completed rounds.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Breakpoint count of the next round.
    pub fn n_r(&self) -> usize {
        self.grid.len()
    }

    /// Queries issued so far.
    pub fn len(&self) -> usize {
        self.issued.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issued.is_empty()
    }

    pub fn issued(&self) -> &[(Lottery, Lottery)] {
        &self.issued
    }

    /// Reduced mass differences of all issued queries on the current grid.
    pub fn rows(&self) -> Result<Vec<Vec<f64>>> {
        self.issued.iter().map(|(w, y)| mass_diff(w, y, &self.grid).map(|p| p.reduced().to_vec())).collect()
    }

    /// Rounded midpoint of the widest gap, if it lies strictly inside it.
    fn next_breakpoint(&self) -> Option<(usize, f64)> {
        let pts = self.grid.points();
        let j = (0..pts.len() - 1).max_by(|&a, &b| self.grid.gap(a).total_cmp(&self.grid.gap(b)).then(b.cmp(&a)))?;
        let q = self.payoff_quantum;
        let m = libm::round((pts[j] + pts[j + 1]) / 2.0 / q) * q;
        (m > pts[j] && m < pts[j + 1]).then_some((j, m))
    }
}

/// Runs one round: `N_r - 1` orthogonal queries on the current grid and one
/// exploration query that introduces the midpoint of the widest gap.
///
/// The design is non-adaptive, so earlier answers do not enter. Returns
/// [`Error::DesignComplete`] once the widest gap cannot be split on the
/// payoff quantum; the state is unchanged in that case.
pub fn multi_round_step(state: &mut DesignState) -> Result<Round> {
    let (j, m) = state.next_breakpoint().ok_or(Error::DesignComplete)?;
    let grid = state.grid.clone();
    let dim = grid.len() - 1;
    let mut queries = Vec::with_capacity(dim + 1);
    for i in 0..dim {
        let q = direction_to_query(&unit(dim, i), &grid, state.scale)?;
        queries.push(DesignQuery { kind: QueryKind::Orthogonal, w: q.w, y: q.y });
    }
    let pts = grid.points();
    let s = state.scale;
    let base = pts[0];
    let w = Lottery::new(vec![Outcome { payoff: m, prob: s }, Outcome { payoff: base, prob: 1.0 - s }])?;
    let y = Lottery::new(vec![
        Outcome { payoff: pts[j], prob: s / 2.0 },
        Outcome { payoff: pts[j + 1], prob: s / 2.0 },
        Outcome { payoff: base, prob: 1.0 - s },
    ])?;
    queries.push(DesignQuery { kind: QueryKind::Exploration, w, y });

    state.grid = grid.with_point(m)?;
    state.issued.extend(queries.iter().map(|q| (q.w.clone(), q.y.clone())));
    state.rounds += 1;
    Ok(Round { round: state.rounds, n_r: dim + 1, queries, new_breakpoint: m })
}

/// The lowest `ceil(fraction * N)` breakpoints (at least two).
///
/// Queries supported on this pool never reach the upper breakpoints, so the
/// information matrix on the full grid stays rank-deficient however many
/// are asked, and the upper utility values are pinned only by the shape
/// restrictions.
pub fn leading_pool(grid: &BreakpointGrid, fraction: f64) -> Result<Vec<f64>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(domain("pool fraction must lie in (0, 1)"));
    }
    let n = grid.len();
    if n < 3 {
        return Err(domain("grid too small to leave breakpoints unobserved"));
    }
    let count = (libm::ceil(fraction * n as f64) as usize).clamp(2, n - 1);
    Ok(grid.points()[..count].to_vec())
}

/// Random queries restricted to `pool`.
pub fn pooled_queries<R: Rng + ?Sized>(pool: &[f64], count: usize, rng: &mut R) -> Result<Vec<Query>> {
    (0..count).map(|_| Ok(Query { w: random_lottery(pool, rng)?, y: random_lottery(pool, rng)? })).collect()
}
