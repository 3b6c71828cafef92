//! Piecewise-linear utilities on a breakpoint grid.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::BreakpointGrid;
use crate::lottery::Lottery;

/// Anything that assigns a utility to a monetary payoff in `[0, upper]`.
pub trait Utility {
    fn upper(&self) -> f64;

    fn value(&self, y: f64) -> Result<f64>;

    /// Expected utility of a lottery.
    fn expected(&self, x: &Lottery) -> Result<f64> {
        x.outcomes().iter().try_fold(0.0, |acc, o| Ok(acc + o.prob * self.value(o.payoff)?))
    }
}

/// Whether a utility is normalised to `u(upper) = 1` or is an adjusted
/// utility `u / sigma` whose right endpoint is `1 / sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Normalized,
    Adjusted,
}

#[derive(Serialize, Deserialize)]
struct RawPiecewise {
    grid: BreakpointGrid,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

/// Piecewise-linear utility with values `alpha` at the breakpoints and
/// slopes `beta` on the segments. Both are stored; they agree by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewise", into = "RawPiecewise")]
pub struct PiecewiseUtility {
    grid: BreakpointGrid,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

const SLOPE_REL_TOL: f64 = 1e-9;
const NORMALIZATION_TOL: f64 = 1e-12;

fn slopes(grid: &BreakpointGrid, alpha: &[f64]) -> Vec<f64> {
    (0..grid.len() - 1).map(|j| (alpha[j + 1] - alpha[j]) / grid.gap(j)).collect()
}

impl PiecewiseUtility {
    /// Linear interpolation of `alpha` through the grid.
    pub fn interpolate(grid: BreakpointGrid, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: alpha.len() });
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(domain("utility values must be finite"));
        }
        if alpha[0] != 0.0 {
            return Err(domain("utility must vanish at 0"));
        }
        let beta = slopes(&grid, &alpha);
        Ok(Self { grid, alpha, beta })
    }

    /// Builds a utility from both representations, checking they agree.
    pub fn from_parts(grid: BreakpointGrid, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let u = Self::interpolate(grid, alpha)?;
        if beta.len() != u.beta.len() {
            return Err(Error::Dimension { expected: u.beta.len(), got: beta.len() });
        }
        // Slopes from differences of nearly equal values carry only the
        // precision of the values themselves.
        for (j, (b, expect)) in beta.iter().zip(&u.beta).enumerate() {
            let scale = u.alpha[j].abs().max(u.alpha[j + 1].abs()).max(1e-300);
            if (b - expect).abs() * u.grid.gap(j) > SLOPE_REL_TOL * scale {
                return Err(domain("slopes disagree with breakpoint values"));
            }
        }
        Ok(Self { beta, ..u })
    }

    /// The straight line from `(0, 0)` to `(upper, 1)`.
    pub fn linear(upper: f64) -> Result<Self> {
        Self::interpolate(BreakpointGrid::endpoints(upper)?, alloc::vec![0.0, 1.0])
    }

    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn scale(&self) -> Scale {
        if (self.alpha[self.alpha.len() - 1] - 1.0).abs() <= NORMALIZATION_TOL {
            Scale::Normalized
        } else {
            Scale::Adjusted
        }
    }

    /// The utility multiplied by `factor`, e.g. `u / sigma` with `factor = 1 / sigma`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            alpha: self.alpha.iter().map(|a| a * factor).collect(),
            beta: self.beta.iter().map(|b| b * factor).collect(),
        }
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.beta.iter().all(|b| *b >= -tol)
    }

    pub fn is_concave(&self, tol: f64) -> bool {
        self.beta.windows(2).all(|w| w[1] <= w[0] + tol)
    }

    /// Largest slope; the Lipschitz modulus of the utility.
    pub fn max_slope(&self) -> f64 {
        self.beta.iter().fold(f64::NEG_INFINITY, |m, b| m.max(b.abs()))
    }

    /// Checks the shape restrictions promised by `level`.
    pub fn satisfies(&self, level: &StructureLevel, tol: f64) -> bool {
        match level.shape {
            Shape::Full => {
                self.is_monotone(tol) && self.is_concave(tol) && self.beta[0] <= level.lipschitz + tol
            }
            Shape::NoLipschitz => self.is_monotone(tol) && self.is_concave(tol),
            Shape::MonotoneOnly => self.is_monotone(tol),
            Shape::Unstructured => true,
        }
    }

    /// The segments as lines `beta_j (y - y_j) + alpha_j`, returned as
    /// `(beta_j, y_j, alpha_j)`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.beta
            .iter()
            .enumerate()
            .map(|(j, b)| (*b, self.grid.points()[j], self.alpha[j]))
    }
}

impl Utility for PiecewiseUtility {
    fn upper(&self) -> f64 {
        self.grid.upper()
    }

    fn value(&self, y: f64) -> Result<f64> {
        if !(0.0..=self.grid.upper()).contains(&y) {
            return Err(domain(alloc::format!("payoff {y} outside [0, {}]", self.grid.upper())));
        }
        if let Some(j) = self.grid.index_of(y) {
            return Ok(self.alpha[j]);
        }
        let j = self.grid.segment_of(y);
        Ok(self.alpha[j] + self.beta[j] * (y - self.grid.points()[j]))
    }
}

impl TryFrom<RawPiecewise> for PiecewiseUtility {
    type Error = Error;

    fn try_from(raw: RawPiecewise) -> Result<Self> {
        Self::from_parts(raw.grid, raw.alpha, raw.beta)
    }
}

impl From<PiecewiseUtility> for RawPiecewise {
    fn from(u: PiecewiseUtility) -> Self {
        RawPiecewise { grid: u.grid, alpha: u.alpha, beta: u.beta }
    }
}

/// Projection of utility values sampled at the grid onto the
/// piecewise-linear interpolant through them.
///
/// For a concave utility the result lies below the utility everywhere and
/// agrees with it at every breakpoint.
pub fn pla_project(values: &[f64], grid: &BreakpointGrid) -> Result<PiecewiseUtility> {
    if values.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: values.len() });
    }
    if values.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("values must be non-decreasing along the grid"));
    }
    PiecewiseUtility::interpolate(grid.clone(), values.to_vec())
}

/// Samples `u` at every breakpoint and projects.
pub fn pla_of<U: Utility + ?Sized>(u: &U, grid: &BreakpointGrid) -> Result<PiecewiseUtility> {
    let values = grid.points().iter().map(|&y| u.value(y)).collect::<Result<Vec<_>>>()?;
    pla_project(&values, grid)
}

/// How much shape information is imposed on the utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    /// Monotone, concave, Lipschitz.
    #[serde(rename = "full")]
    Full,
    /// Monotone and concave.
    #[serde(rename = "nolip")]
    NoLipschitz,
    #[serde(rename = "mono")]
    MonotoneOnly,
    /// Only the endpoint normalisation.
    #[serde(rename = "none")]
    Unstructured,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Full, Shape::NoLipschitz, Shape::MonotoneOnly, Shape::Unstructured];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Full => "full",
            Shape::NoLipschitz => "nolip",
            Shape::MonotoneOnly => "mono",
            Shape::Unstructured => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| domain(alloc::format!("unknown structure level `{s}`")))
    }
}

/// Structure level plus its constants: Lipschitz modulus `lipschitz` and
/// the upper bound `cbar` on `1 / sigma`.
///
/// `unstructured_bound` caps `|u(y_j)|` when no shape is imposed; without
/// it the likelihood can be driven to its supremum at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureLevel {
    pub shape: Shape,
    pub lipschitz: f64,
    pub cbar: f64,
    #[serde(default = "default_unstructured_bound")]
    pub unstructured_bound: f64,
}

fn default_unstructured_bound() -> f64 {
    StructureLevel::DEFAULT_UNSTRUCTURED_BOUND
}

impl StructureLevel {
    pub const DEFAULT_UNSTRUCTURED_BOUND: f64 = 10.0;

    pub fn new(shape: Shape, lipschitz: f64, cbar: f64) -> Result<Self> {
        let level = Self { shape, lipschitz, cbar, unstructured_bound: Self::DEFAULT_UNSTRUCTURED_BOUND };
        level.validate()?;
        Ok(level)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(domain("Lipschitz modulus must be positive"));
        }
        if !(self.cbar > 0.0 && self.cbar.is_finite()) {
            return Err(domain("cbar must be positive"));
        }
        if !(self.unstructured_bound > 1.0 && self.unstructured_bound.is_finite()) {
            return Err(domain("unstructured bound must exceed 1"));
        }
        Ok(())
    }

    pub fn with_shape(self, shape: Shape) -> Self {
        Self { shape, ..self }
    }
}
