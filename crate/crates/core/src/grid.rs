//! Breakpoint grids and probability-mass difference vectors.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lottery::{ComparisonRecord, Lottery};

/// Default resolution at which two payoffs count as the same breakpoint.
pub const DEFAULT_QUANTUM: f64 = 1e-6;

fn default_quantum() -> f64 {
    DEFAULT_QUANTUM
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    points: Vec<f64>,
    #[serde(default = "default_quantum")]
    quantum: f64,
}

/// Sorted breakpoints `0 = y_1 < ... < y_N = upper`.
///
/// Payoffs are matched against breakpoints after rounding to `quantum`, so
/// `20000.0000000001` and `20000` land on the same point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct BreakpointGrid {
    points: Vec<f64>,
    quantum: f64,
}

impl BreakpointGrid {
    pub fn new(points: Vec<f64>, quantum: f64) -> Result<Self> {
        if !(quantum > 0.0 && quantum.is_finite()) {
            return Err(domain("grid quantum must be positive"));
        }
        if points.len() < 2 {
            return Err(domain("a grid needs at least the two endpoints"));
        }
        if points[0] != 0.0 {
            return Err(domain("first breakpoint must be 0"));
        }
        let grid = Self { points, quantum };
        for w in grid.points.windows(2) {
            if !w[1].is_finite() || grid.key(w[1]) <= grid.key(w[0]) {
                return Err(domain("breakpoints must be finite and strictly increasing"));
            }
        }
        Ok(grid)
    }

    /// The two-point grid `{0, upper}`.
    pub fn endpoints(upper: f64) -> Result<Self> {
        Self::new(alloc::vec![0.0, upper], DEFAULT_QUANTUM)
    }

    fn key(&self, y: f64) -> i64 {
        libm::round(y / self.quantum) as i64
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn upper(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    /// Width of segment `j` (0-based), i.e. `y_{j+1} - y_j`.
    pub fn gap(&self, j: usize) -> f64 {
        self.points[j + 1] - self.points[j]
    }

    /// Mesh size: the widest gap between adjacent breakpoints.
    pub fn mesh(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the breakpoint matching `y`, if any.
    pub fn index_of(&self, y: f64) -> Option<usize> {
        let k = self.key(y);
        self.points.binary_search_by(|p| self.key(*p).cmp(&k)).ok()
    }

    /// Index `j` of the segment `[y_j, y_{j+1}]` containing `y`.
    pub(crate) fn segment_of(&self, y: f64) -> usize {
        let n = self.points.len();
        match self.points.binary_search_by(|p| p.total_cmp(&y)) {
            Ok(i) => i.min(n - 2),
            Err(i) => (i.max(1) - 1).min(n - 2),
        }
    }

    /// Returns a new grid with `y` added as a breakpoint.
    pub fn with_point(&self, y: f64) -> Result<Self> {
        if !(0.0..=self.upper()).contains(&y) {
            return Err(domain("new breakpoint outside [0, upper]"));
        }
        let mut points = self.points.clone();
        if self.index_of(y).is_none() {
            let pos = points.partition_point(|p| *p < y);
            points.insert(pos, y);
        }
        Self::new(points, self.quantum)
    }

    fn check_payoff(&self, y: f64) -> Result<()> {
        if y < 0.0 || self.key(y) > self.key(self.upper()) {
            return Err(domain(alloc::format!("payoff {y} outside [0, {}]", self.upper())));
        }
        Ok(())
    }
}

impl TryFrom<RawGrid> for BreakpointGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Self::new(raw.points, raw.quantum)
    }
}

impl From<BreakpointGrid> for RawGrid {
    fn from(g: BreakpointGrid) -> Self {
        RawGrid { points: g.points, quantum: g.quantum }
    }
}

/// Grid made of `{0} ∪ supports ∪ {upper}` for a dataset.
pub fn build_grid(dataset: &[ComparisonRecord], upper: f64) -> Result<BreakpointGrid> {
    build_grid_with_quantum(dataset, upper, DEFAULT_QUANTUM)
}

pub fn build_grid_with_quantum(
    dataset: &[ComparisonRecord],
    upper: f64,
    quantum: f64,
) -> Result<BreakpointGrid> {
    if !(upper > 0.0 && upper.is_finite()) {
        return Err(domain("upper payoff bound must be positive"));
    }
    let probe = BreakpointGrid::new(alloc::vec![0.0, upper], quantum)?;
    let mut keyed: BTreeMap<i64, f64> = BTreeMap::new();
    keyed.insert(0, 0.0);
    for rec in dataset {
        for y in rec.w.support().chain(rec.y.support()) {
            probe.check_payoff(y)?;
            keyed.entry(probe.key(y)).or_insert(y);
        }
    }
    keyed.insert(probe.key(upper), upper);
    BreakpointGrid::new(keyed.into_values().collect(), quantum)
}

/// Probability-mass difference `P[W = y_j] - P[Y = y_j]` over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDiffVector {
    full: Vec<f64>,
}

impl MassDiffVector {
    pub fn full(&self) -> &[f64] {
        &self.full
    }

    /// Entries for `y_2, ..., y_N`.
    pub fn reduced(&self) -> &[f64] {
        &self.full[1..]
    }

    pub fn into_full(self) -> Vec<f64> {
        self.full
    }
}

pub fn mass_diff(w: &Lottery, y: &Lottery, grid: &BreakpointGrid) -> Result<MassDiffVector> {
    let mut full = alloc::vec![0.0; grid.len()];
    for (lottery, sign) in [(w, 1.0), (y, -1.0)] {
        for o in lottery.outcomes() {
            let j = grid.index_of(o.payoff).ok_or_else(|| {
                Error::Domain(alloc::format!("payoff {} is not a breakpoint of the grid", o.payoff))
            })?;
            full[j] += sign * o.prob;
        }
    }
    Ok(MassDiffVector { full })
}
