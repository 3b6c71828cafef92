//! Computations shared by the command line and the service, so both
//! interfaces return identical numbers for identical inputs.

use elicit_core::bounds::{empirical_errors, kolmogorov_distance, theoretical_bounds, BoundParams, BoundReport, Lambda, Regime};
use elicit_core::decide::{equivalence_check, optimize_portfolio, PortfolioProblem, UtilityFamily};
use elicit_core::mle::{optimal_set_band, MleSolution, MleStatus};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::io::{format_money, Truth};

pub fn bound_params(solution: &MleSolution, delta: f64, lambda: Lambda) -> BoundParams {
    BoundParams {
        delta,
        lambda,
        cbar: solution.structure.cbar,
        lipschitz: solution.structure.lipschitz,
        mesh: solution.grid.mesh(),
    }
}

pub fn bounds_for(solution: &MleSolution, delta: f64, lambda: Lambda) -> Result<BoundReport> {
    Ok(theoretical_bounds(&solution.spectrum, &bound_params(solution, delta, lambda))?)
}

/// One CSV row comparing the bounds with the realised errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    pub lambda: f64,
    pub regime: Regime,
    pub rank: usize,
    pub lambda_min: f64,
    pub log_l2_bound: f64,
    pub l2_bound: f64,
    pub linf_bound: f64,
    pub kolmogorov_bound: f64,
    pub vacuous: bool,
    pub l2_error: f64,
    pub linf_error: f64,
    /// Absent when the estimate carries no utility.
    pub kolmogorov_error: Option<f64>,
}

pub fn bounds_row(solution: &MleSolution, truth: &Truth, delta: f64, lambda: Lambda) -> Result<BoundsRow> {
    let report = bounds_for(solution, delta, lambda)?;
    let theta_star = truth.theta(&solution.grid)?;
    let (l2_error, linf_error) = empirical_errors(&solution.theta_hat, &theta_star)?;
    let kolmogorov_error = match solution.utility() {
        Some(u) => Some(kolmogorov_distance(&u, &truth.pla(&solution.grid)?)?),
        None => None,
    };
    Ok(BoundsRow {
        n: solution.grid.len(),
        k: solution.spectrum.k,
        delta,
        lambda: report.lambda,
        regime: report.regime,
        rank: report.rank,
        lambda_min: solution.spectrum.lambda_min,
        log_l2_bound: report.log_l2_bound,
        l2_bound: report.l2_bound,
        linf_bound: report.linf_bound,
        kolmogorov_bound: report.kolmogorov_bound,
        vacuous: report.vacuous,
        l2_error,
        linf_error,
        kolmogorov_error,
    })
}

/// Ambiguity set used for the robust criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// All admissible utilities sharing the estimate's breakpoint values.
    OptimalSet,
    /// The estimate alone, when the optimal set is not characterised.
    EstimateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub budget: String,
    /// Money per asset, `asset_0` first.
    pub allocation: Vec<String>,
    /// Sample-average expected utility at the allocation.
    pub objective: f64,
    pub lp_objective: f64,
    pub delta: f64,
    pub sigma_hat: f64,
    pub offset: f64,
    pub par: f64,
    pub prar: f64,
    pub family: FamilyKind,
    pub max_deviation: f64,
    pub equivalence_holds: bool,
    pub cuts: usize,
}

/// Tolerance on the PaR/PRaR offsets.
pub const EQUIVALENCE_TOL: f64 = 1e-8;

/// Optimises the portfolio for an estimate and reports the risk measures.
pub fn recommend(
    solution: &MleSolution,
    scenarios: Vec<Vec<f64>>,
    budget: f64,
    caps: Vec<f64>,
    delta: f64,
) -> Result<Recommendation> {
    if !matches!(solution.status, MleStatus::Unique | MleStatus::SeparationAtBound) {
        return Err(invalid(format!(
            "estimate status is {:?}; a recommendation needs a unique or boundary estimate",
            solution.status
        )));
    }
    let utility = solution.utility().ok_or_else(|| invalid("estimate carries no utility"))?;
    let sigma = solution.sigma_hat.ok_or_else(|| invalid("estimate carries no scale"))?;
    let (family, kind) = match optimal_set_band(solution) {
        Ok(band) => (UtilityFamily::OptimalSet(band), FamilyKind::OptimalSet),
        Err(_) => (UtilityFamily::Finite(vec![utility.clone()]), FamilyKind::EstimateOnly),
    };
    let problem = PortfolioProblem::new(scenarios, budget, caps, utility)?;
    let sol = optimize_portfolio(&problem)?;
    let eq = equivalence_check(&problem, &sol, &family, delta, sigma)?;
    Ok(Recommendation {
        budget: format_money(budget),
        allocation: sol.allocation.iter().map(|x| format_money(*x)).collect(),
        objective: sol.objective,
        lp_objective: sol.lp_objective,
        delta,
        sigma_hat: sigma,
        offset: eq.offset,
        par: eq.par,
        prar: eq.prar,
        family: kind,
        max_deviation: eq.max_deviation,
        equivalence_holds: eq.holds(EQUIVALENCE_TOL),
        cuts: sol.cuts,
    })
}
