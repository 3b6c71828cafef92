//! Risk measures under response error and the sample-average portfolio
//! program built on an elicited piecewise-linear utility.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lottery::{Lottery, Outcome};
use crate::lp;
use crate::mle::UtilityBand;
use crate::simulate::gumbel_quantile;
use crate::utility::{PiecewiseUtility, Utility};

/// Preference-at-Risk: the `delta`-quantile of `E[u(X)] + eps` with
/// `eps ~ Gumbel(0, sigma)`.
pub fn par<U: Utility + ?Sized>(u: &U, x: &Lottery, delta: f64, sigma: f64) -> Result<f64> {
    Ok(u.expected(x)? + gumbel_quantile(delta, sigma)?)
}

/// Ambiguity set of utilities for the robust measure.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilityFamily {
    /// Every admissible utility whose breakpoint values match the estimate.
    /// Its pointwise infimum is the estimate's interpolant.
    OptimalSet(UtilityBand),
    /// Explicit finite list.
    Finite(Vec<PiecewiseUtility>),
}

/// Preference-Robust-at-Risk: the worst PaR over `family`.
pub fn prar(family: &UtilityFamily, x: &Lottery, delta: f64, sigma: f64) -> Result<f64> {
    match family {
        UtilityFamily::OptimalSet(band) => par(&band.lower, x, delta, sigma),
        UtilityFamily::Finite(us) => {
            if us.is_empty() {
                return Err(domain("finite utility family is empty"));
            }
            us.iter().try_fold(f64::INFINITY, |m, u| Ok(m.min(par(u, x, delta, sigma)?)))
        }
    }
}

/// Wealth `x . (1 + xi)` in one scenario.
pub fn wealth(x: &[f64], returns: &[f64]) -> f64 {
    x.iter().zip(returns).map(|(x, r)| x * (1.0 + r)).sum()
}

/// Single-period portfolio over a risk-free asset (index 0) and `S` risky
/// assets, evaluated on `T` equally likely return scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioProblem {
    /// `T` rows of `S + 1` return rates.
    pub scenarios: Vec<Vec<f64>>,
    pub budget: f64,
    /// Per-asset caps as fractions of the budget, one per risky asset.
    pub caps: Vec<f64>,
    pub utility: PiecewiseUtility,
}

impl PortfolioProblem {
    pub fn new(scenarios: Vec<Vec<f64>>, budget: f64, caps: Vec<f64>, utility: PiecewiseUtility) -> Result<Self> {
        let p = Self { scenarios, budget, caps, utility };
        p.validate()?;
        Ok(p)
    }

    pub fn assets(&self) -> usize {
        self.caps.len()
    }

    pub fn horizon(&self) -> usize {
        self.scenarios.len()
    }

    /// Checks shapes, caps, concavity, and that every feasible allocation
    /// keeps wealth inside the utility's domain in every scenario.
    pub fn validate(&self) -> Result<()> {
        let s = self.caps.len();
        if self.scenarios.is_empty() {
            return Err(domain("at least one return scenario is required"));
        }
        if let Some(row) = self.scenarios.iter().find(|r| r.len() != s + 1) {
            return Err(Error::Dimension { expected: s + 1, got: row.len() });
        }
        if self.scenarios.iter().flatten().any(|r| !r.is_finite() || *r < -1.0) {
            return Err(domain("return rates must be finite and at least -1"));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(domain("budget must be positive"));
        }
        if self.caps.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(domain("caps must lie in [0, 1]"));
        }
        let tol = 1e-9 * self.utility.max_slope().max(f64::MIN_POSITIVE);
        if !self.utility.is_concave(tol) {
            return Err(domain("the portfolio program represents the utility as a minimum of lines, which needs a concave utility"));
        }
        let upper = self.utility.grid().upper();
        for (t, row) in self.scenarios.iter().enumerate() {
            let (lo, hi) = self.wealth_range(row);
            if lo < -1e-12 * upper || hi > upper * (1.0 + 1e-12) {
                return Err(domain(alloc::format!(
                    "scenario {t}: feasible wealth spans [{lo}, {hi}], outside the utility domain [0, {upper}]"
                )));
            }
        }
        Ok(())
    }

    /// Smallest and largest wealth over feasible allocations, by filling the
    /// budget greedily in order of gross return.
    fn wealth_range(&self, row: &[f64]) -> (f64, f64) {
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        let cap = |i: usize| if i == 0 { 1.0 } else { self.caps[i - 1] };
        let fill = |idx: &mut dyn Iterator<Item = &usize>| {
            let mut left = 1.0_f64;
            let mut w = 0.0;
            for &i in idx {
                let take = left.min(cap(i));
                w += take * (1.0 + row[i]);
                left -= take;
                if left <= 0.0 {
                    break;
                }
            }
            w * self.budget
        };
        (fill(&mut order.iter()), fill(&mut order.iter().rev()))
    }

    /// Sample-average expected utility of an allocation in money units.
    pub fn expected_utility(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.caps.len() + 1 {
            return Err(Error::Dimension { expected: self.caps.len() + 1, got: x.len() });
        }
        let upper = self.utility.grid().upper();
        let total = self.scenarios.iter().try_fold(0.0, |acc, r| {
            let h = wealth(x, r).clamp(0.0, upper);
            Ok::<_, Error>(acc + self.utility.value(h)?)
        })?;
        Ok(total / self.horizon() as f64)
    }

    /// Distribution of terminal wealth under `x`.
    pub fn wealth_lottery(&self, x: &[f64]) -> Result<Lottery> {
        let upper = self.utility.grid().upper();
        let p = 1.0 / self.horizon() as f64;
        Lottery::new(self.scenarios.iter().map(|r| Outcome { payoff: wealth(x, r).clamp(0.0, upper), prob: p }).collect())
    }

    /// Whether `x` satisfies the budget and caps within `tol` (money units).
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.caps.len() + 1
            && (x.iter().sum::<f64>() - self.budget).abs() <= tol
            && x[0] >= -tol
            && x[1..].iter().zip(&self.caps).all(|(x, c)| *x >= -tol && *x <= c * self.budget + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    /// Allocation in money units; entry 0 is the risk-free asset.
    pub allocation: Vec<f64>,
    /// Sample-average expected utility evaluated at the allocation.
    pub objective: f64,
    /// Optimal value reported by the linear program.
    pub lp_objective: f64,
    /// Cuts in the final linear program.
    pub cuts: usize,
}

/// Maximises the sample-average expected utility.
///
/// With a concave utility `u(h) = min_j (alpha_j + beta_j (h - y_j))`, the
/// program is linear in the allocation and one epigraph variable per
/// scenario. Cuts are added lazily: only segments that are active at some
/// intermediate solution enter the program.
pub fn optimize_portfolio(problem: &PortfolioProblem) -> Result<PortfolioSolution> {
    problem.validate()?;
    let s = problem.assets();
    let t = problem.horizon();
    let w0 = problem.budget;
    let u = &problem.utility;
    let pts = u.grid().points();
    let alpha = u.alpha();
    let beta = u.beta();
    let upper = u.grid().upper();
    let n_seg = beta.len();

    // Variables: shares v_1..v_S of the budget in risky assets, then zeta_1..zeta_T.
    let n = s + t;
    let mut c = vec![0.0; n];
    c[s..].iter_mut().for_each(|v| *v = 1.0 / t as f64);
    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for (i, cap) in problem.caps.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        a.push(row);
        b.push(*cap);
    }
    let mut row = vec![0.0; n];
    row[..s].iter_mut().for_each(|v| *v = 1.0);
    a.push(row);
    b.push(1.0);

    // zeta_t - beta_j w0 sum_s v_s (xi_ts - xi_t0) <= alpha_j + beta_j (w0 (1 + xi_t0) - y_j)
    let mut cut_set: Vec<Vec<bool>> = vec![vec![false; n_seg]; t];
    let add_cut = |a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>, tt: usize, j: usize| {
        let r = &problem.scenarios[tt];
        let mut row = vec![0.0; n];
        for k in 0..s {
            row[k] = -beta[j] * w0 * (r[k + 1] - r[0]);
        }
        row[s + tt] = 1.0;
        a.push(row);
        b.push((alpha[j] + beta[j] * (w0 * (1.0 + r[0]) - pts[j])).max(0.0));
    };
    let segment = |h: f64| -> usize { pts.partition_point(|p| *p <= h).clamp(1, n_seg) - 1 };
    for (tt, r) in problem.scenarios.iter().enumerate() {
        let j = segment((w0 * (1.0 + r[0])).clamp(0.0, upper));
        cut_set[tt][j] = true;
        add_cut(&mut a, &mut b, tt, j);
    }

    let value_tol = 1e-12;
    for _ in 0..(t * n_seg + 1) {
        let sol = lp::maximize(&c, &a, &b)?;
        let x = allocation(&sol.x[..s], w0);
        let mut added = false;
        for (tt, r) in problem.scenarios.iter().enumerate() {
            let h = wealth(&x, r).clamp(0.0, upper);
            let uh = u.value(h)?;
            if sol.x[s + tt] > uh + value_tol {
                let j = segment(h);
                // The segment at h attains u(h); its neighbours cover breakpoint ties.
                for jj in [j, j.saturating_sub(1), (j + 1).min(n_seg - 1)] {
                    if !cut_set[tt][jj] {
                        cut_set[tt][jj] = true;
                        add_cut(&mut a, &mut b, tt, jj);
                        added = true;
                    }
                }
            }
        }
        if !added {
            let objective = problem.expected_utility(&x)?;
            return Ok(PortfolioSolution { allocation: x, objective, lp_objective: sol.objective, cuts: a.len() - s - 1 });
        }
    }
    Err(Error::Solver { status: "cut-limit".to_string(), detail: "cutting-plane loop did not terminate".to_string() })
}

fn allocation(shares: &[f64], w0: f64) -> Vec<f64> {
    let risky: f64 = shares.iter().sum();
    let mut x = Vec::with_capacity(shares.len() + 1);
    x.push(w0 * (1.0 - risky).max(0.0));
    x.extend(shares.iter().map(|v| v * w0));
    x
}

/// Optimal values of the three portfolio criteria at a common maximiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub delta: f64,
    pub sigma: f64,
    /// `F_eps^{-1}(delta)`: the constant separating the criteria.
    pub offset: f64,
    pub expected_utility: f64,
    pub par: f64,
    pub prar: f64,
    /// Largest deviation of `par - eu` and `prar - eu` from the offset.
    pub max_deviation: f64,
    pub allocation_feasible: bool,
}

impl EquivalenceReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.allocation_feasible && self.max_deviation <= tol
    }
}

/// Evaluates expected utility, PaR and PRaR at the expected-utility
/// maximiser. PaR and PRaR equal expected utility plus a constant, so the
/// same allocation maximises all three.
pub fn equivalence_check(
    problem: &PortfolioProblem,
    solution: &PortfolioSolution,
    family: &UtilityFamily,
    delta: f64,
    sigma: f64,
) -> Result<EquivalenceReport> {
    let offset = gumbel_quantile(delta, sigma)?;
    let x = &solution.allocation;
    let lottery = problem.wealth_lottery(x)?;
    let eu = problem.utility.expected(&lottery)?;
    let p = par(&problem.utility, &lottery, delta, sigma)?;
    let r = prar(family, &lottery, delta, sigma)?;
    let max_deviation = ((p - eu) - offset).abs().max(((r - eu) - offset).abs());
    Ok(EquivalenceReport {
        delta,
        sigma,
        offset,
        expected_utility: eu,
        par: p,
        prar: r,
        max_deviation,
        allocation_feasible: problem.is_feasible(x, 1e-9 * problem.budget),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BreakpointGrid;
    use crate::utility::Shape;

    fn concave_u() -> PiecewiseUtility {
        let g = BreakpointGrid::new(vec![0.0, 50.0, 100.0, 200.0], 1e-6).unwrap();
        PiecewiseUtility::interpolate(g, vec![0.0, 0.5, 0.8, 1.0]).unwrap()
    }

    #[test]
    fn par_closed_form_values() {
        let u = PiecewiseUtility::linear(100.0).unwrap();
        let x = Lottery::dirac(100.0).unwrap();
        let v = par(&u, &x, (-1.0_f64).exp(), 10.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let v = par(&u, &x, 0.5, 10.0).unwrap();
        assert!((v - (1.0 - 10.0 * libm::log(core::f64::consts::LN_2))).abs() < 1e-12);
        assert!((v - 4.665).abs() < 1e-3);
        assert!(par(&u, &x, 1.0, 10.0).is_err());
    }

    #[test]
    fn prar_of_optimal_set_is_par_of_estimate() {
        let u = concave_u();
        let band = UtilityBand { lower: u.clone(), shape: Shape::Full, lipschitz: 1.0 };
        let x = Lottery::from_pairs(&[(20.0, 0.3), (150.0, 0.7)]).unwrap();
        let a = prar(&UtilityFamily::OptimalSet(band), &x, 0.05, 2.0).unwrap();
        assert_eq!(a, par(&u, &x, 0.05, 2.0).unwrap());
        let b = prar(&UtilityFamily::Finite(vec![u.clone()]), &x, 0.05, 2.0).unwrap();
        assert_eq!(a, b);
        assert!(prar(&UtilityFamily::Finite(vec![]), &x, 0.05, 2.0).is_err());
    }

    #[test]
    fn risk_free_only() {
        let p = PortfolioProblem::new(vec![vec![0.0]; 3], 100.0, vec![], concave_u()).unwrap();
        let s = optimize_portfolio(&p).unwrap();
        assert_eq!(s.allocation, [100.0]);
        assert!((s.objective - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dominating_asset_takes_the_budget() {
        let scen = vec![vec![0.0, 0.2], vec![0.0, 0.5], vec![0.0, 0.05]];
        let p = PortfolioProblem::new(scen, 100.0, vec![1.0], concave_u()).unwrap();
        let s = optimize_portfolio(&p).unwrap();
        assert!((s.allocation[1] - 100.0).abs() < 1e-9);
        assert!((s.objective - s.lp_objective).abs() < 1e-10);
    }

    #[test]
    fn diversification_against_brute_force() {
        let scen = vec![vec![0.0, 0.9], vec![0.0, -0.6], vec![0.0, 0.3], vec![0.0, -0.2]];
        let p = PortfolioProblem::new(scen, 100.0, vec![1.0], concave_u()).unwrap();
        let s = optimize_portfolio(&p).unwrap();
        let best = (0..=1000)
            .map(|i| {
                let v = i as f64 / 10.0;
                p.expected_utility(&[100.0 - v, v]).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(s.objective >= best - 1e-12);
        assert!((s.objective - s.lp_objective).abs() < 1e-10);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let u = concave_u();
        assert!(PortfolioProblem::new(vec![vec![0.0, 2.0]], 100.0, vec![1.0], u.clone()).is_err());
        assert!(PortfolioProblem::new(vec![vec![0.0, 0.1]], 100.0, vec![1.5], u.clone()).is_err());
        assert!(PortfolioProblem::new(vec![], 100.0, vec![], u.clone()).is_err());
        let g = BreakpointGrid::new(vec![0.0, 100.0, 200.0], 1e-6).unwrap();
        let convex = PiecewiseUtility::interpolate(g, vec![0.0, 0.2, 1.0]).unwrap();
        assert!(PortfolioProblem::new(vec![vec![0.0]], 100.0, vec![], convex).is_err());
    }

    #[test]
    fn equivalence_offset() {
        let scen = vec![vec![0.0, 0.9, 0.1], vec![0.0, -0.6, 0.0], vec![0.0, 0.3, -0.1]];
        let p = PortfolioProblem::new(scen, 100.0, vec![0.5, 0.5], concave_u()).unwrap();
        let s = optimize_portfolio(&p).unwrap();
        let band = UtilityBand { lower: p.utility.clone(), shape: Shape::Full, lipschitz: 1.0 };
        let r = equivalence_check(&p, &s, &UtilityFamily::OptimalSet(band), (-1.0_f64).exp(), 10.0).unwrap();
        assert_eq!(r.offset, 0.0);
        assert!(r.holds(1e-12));
        assert!((r.expected_utility - s.objective).abs() < 1e-12);
    }
}
