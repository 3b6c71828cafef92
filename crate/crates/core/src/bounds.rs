//! Empirical information matrix and finite-sample error bounds.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{mass_diff, BreakpointGrid};
use crate::lottery::ComparisonRecord;
use crate::num::softplus;
use crate::utility::{PiecewiseUtility, Utility};

/// `Sigma_D = P^T P / K` for the reduced mass-difference rows `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrix {
    pub k: usize,
    pub dim: usize,
    /// Row-major `dim x dim` entries.
    pub sigma_d: Vec<f64>,
    pub rank: usize,
    /// Eigenvalues of `Sigma_D`, ascending; those below the rank cutoff are 0.
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
}

/// Eigen-summary of an information matrix: all the bounds depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub k: usize,
    pub dim: usize,
    pub rank: usize,
    /// Ascending eigenvalues of `Sigma_D`.
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
}

impl Spectrum {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }
}

impl InfoMatrix {
    pub fn spectrum(&self) -> Spectrum {
        Spectrum {
            k: self.k,
            dim: self.dim,
            rank: self.rank,
            eigenvalues: self.eigenvalues.clone(),
            lambda_min: self.lambda_min,
        }
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// `v^T Sigma_D v`.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: v.len() });
        }
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += v[i] * self.sigma_d[i * self.dim + j] * v[j];
            }
        }
        Ok(acc)
    }
}

/// Information matrix of reduced rows of length `dim`.
pub fn info_matrix_from_rows(rows: &[Vec<f64>], dim: usize) -> Result<InfoMatrix> {
    let k = rows.len();
    if k == 0 {
        return Err(domain("information matrix needs at least one record"));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: r.len() });
    }
    let mut gram = vec![0.0; dim * dim];
    for r in rows {
        let nz: Vec<(usize, f64)> = r.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        for &(i, vi) in &nz {
            for &(j, vj) in &nz {
                gram[i * dim + j] += vi * vj;
            }
        }
    }
    let sigma_d: Vec<f64> = gram.iter().map(|g| g / k as f64).collect();

    let p = DMatrix::from_fn(k, dim, |i, j| rows[i][j]);
    let singular = if k > dim {
        let r = p.qr().r();
        r.singular_values()
    } else {
        p.singular_values()
    };
    let smax = singular.iter().fold(0.0_f64, |m, s| m.max(*s));
    let cutoff = (k.max(dim) as f64) * f64::EPSILON * smax;
    let rank = singular.iter().filter(|s| **s > cutoff).count();
    let mut eigenvalues: Vec<f64> = singular
        .iter()
        .map(|s| if *s > cutoff { s * s / k as f64 } else { 0.0 })
        .collect();
    eigenvalues.resize(dim, 0.0);
    eigenvalues.sort_by(f64::total_cmp);
    let lambda_min = if rank == dim { eigenvalues[0] } else { 0.0 };
    Ok(InfoMatrix { k, dim, sigma_d, rank, eigenvalues, lambda_min })
}

/// Reduced mass-difference rows of a dataset on `grid`.
pub fn reduced_rows(dataset: &[ComparisonRecord], grid: &BreakpointGrid) -> Result<Vec<Vec<f64>>> {
    dataset
        .iter()
        .map(|r| mass_diff(&r.w, &r.y, grid).map(|p| p.reduced().to_vec()))
        .collect()
}

pub fn info_matrix(dataset: &[ComparisonRecord], grid: &BreakpointGrid) -> Result<InfoMatrix> {
    info_matrix_from_rows(&reduced_rows(dataset, grid)?, grid.len() - 1)
}

/// Ridge parameter for the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda {
    /// 0 when `Sigma_D` has full rank, `1 / K` otherwise.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FullRank,
    RankDeficient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub delta: f64,
    pub lambda: Lambda,
    pub cbar: f64,
    pub lipschitz: f64,
    pub mesh: f64,
}

/// Evaluated finite-sample bounds. Each bound is given both directly and
/// as a natural logarithm, since the direct value overflows for large `cbar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub lambda: f64,
    pub lambda_auto: bool,
    pub regime: Regime,
    pub rank: usize,
    pub log_omega: f64,
    pub weighted_norm_bound: f64,
    pub log_weighted_norm_bound: f64,
    pub l2_bound: f64,
    pub log_l2_bound: f64,
    pub linf_bound: f64,
    pub kolmogorov_bound: f64,
    /// True when the l2 bound exceeds 1 and so carries no information
    /// about normalised utilities.
    pub vacuous: bool,
}

/// `ln(e^a + e^b)`.
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Natural log of the curvature constant `1 / (2 + 2 e^{2 cbar})`.
pub fn log_omega(cbar: f64) -> f64 {
    -(core::f64::consts::LN_2 + softplus(2.0 * cbar))
}

pub fn theoretical_bounds(info: &Spectrum, params: &BoundParams) -> Result<BoundReport> {
    let BoundParams { delta, lambda, cbar, lipschitz, mesh } = *params;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain("confidence level delta must lie in (0, 1)"));
    }
    if !(cbar > 0.0) || !(lipschitz > 0.0) || !(mesh >= 0.0) {
        return Err(domain("cbar and L must be positive and the mesh non-negative"));
    }
    let full = info.is_full_rank();
    let (lam, auto) = match lambda {
        Lambda::Auto => (if full { 0.0 } else { 1.0 / info.k as f64 }, true),
        Lambda::Value(v) if v >= 0.0 && v.is_finite() => (v, false),
        Lambda::Value(v) => return Err(domain(alloc::format!("ridge parameter must be non-negative, got {v}"))),
    };
    if lam == 0.0 && !full {
        return Err(domain(
            "ridge parameter 0 requires a positive minimum eigenvalue of the information matrix; pass lambda > 0 for rank-deficient data",
        ));
    }
    let r = info.rank as f64;
    let ld = libm::log(delta);
    let numerator = r + 2.0 * libm::sqrt(-r * ld) - 2.0 * ld;
    let lw = log_omega(cbar);
    let log_a = libm::log(numerator) - 2.0 * lw - libm::log(info.k as f64);
    let spread = lam * cbar * cbar * (info.dim as f64);
    let log_b = if spread > 0.0 {
        log_add(0.5 * log_a, 0.5 * log_add(log_a, libm::log(spread)))
    } else {
        core::f64::consts::LN_2 + 0.5 * log_a
    };
    let log_l2 = log_b - 0.5 * libm::log(info.lambda_min + lam);
    let l2 = libm::exp(log_l2);
    Ok(BoundReport {
        delta,
        lambda: lam,
        lambda_auto: auto,
        regime: if full { Regime::FullRank } else { Regime::RankDeficient },
        rank: info.rank,
        log_omega: lw,
        weighted_norm_bound: libm::exp(log_b),
        log_weighted_norm_bound: log_b,
        l2_bound: l2,
        log_l2_bound: log_l2,
        linf_bound: l2,
        kolmogorov_bound: lipschitz * cbar * mesh + l2,
        vacuous: log_l2 > 0.0,
    })
}

/// Euclidean and max-abs norms of `theta_hat - theta_star`.
pub fn empirical_errors(theta_hat: &[f64], theta_star: &[f64]) -> Result<(f64, f64)> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::Dimension { expected: theta_star.len(), got: theta_hat.len() });
    }
    let (sq, mx) = theta_hat
        .iter()
        .zip(theta_star)
        .fold((0.0, 0.0_f64), |(sq, mx), (a, b)| (sq + (a - b) * (a - b), mx.max((a - b).abs())));
    Ok((libm::sqrt(sq), mx))
}

/// Sup-distance between two piecewise-linear utilities on the same domain.
pub fn kolmogorov_distance(u1: &PiecewiseUtility, u2: &PiecewiseUtility) -> Result<f64> {
    if (u1.upper() - u2.upper()).abs() > 1e-9 * u1.upper().abs().max(1.0) {
        return Err(domain("utilities live on different domains"));
    }
    let upper = u1.upper().min(u2.upper());
    let mut d = 0.0_f64;
    for &y in u1.grid().points().iter().chain(u2.grid().points()) {
        let y = y.min(upper);
        d = d.max((u1.value(y)? - u2.value(y)?).abs());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_is_rank_one() {
        let info = info_matrix_from_rows(&[vec![0.5, -0.5, 0.0]], 3).unwrap();
        assert_eq!(info.rank, 1);
        assert_eq!(info.lambda_min, 0.0);
        assert!((info.lambda_max() - 0.5).abs() < 1e-15);
        assert_eq!(info.sigma_d[0], 0.25);
        assert_eq!(info.sigma_d[1], -0.25);
    }

    #[test]
    fn orthonormal_rows_give_scaled_identity() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let info = info_matrix_from_rows(&rows, 3).unwrap();
        assert_eq!(info.rank, 3);
        assert!((info.lambda_min - 1.0 / 3.0).abs() < 1e-15);
        assert!(info.eigenvalues.iter().all(|e| (e - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(info_matrix_from_rows(&[], 2).is_err());
    }

    #[test]
    fn full_rank_bound_matches_corollary_form() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.2, -0.3]];
        let info = info_matrix_from_rows(&rows, 2).unwrap();
        let params = BoundParams { delta: 0.05, lambda: Lambda::Value(0.0), cbar: 2.0, lipschitz: 10.0, mesh: 0.25 };
        let rep = theoretical_bounds(&info.spectrum(), &params).unwrap();
        let n1 = 2.0_f64;
        let ld = libm::log(0.05);
        let omega = 1.0 / (2.0 + 2.0 * libm::exp(4.0));
        let expect = 2.0 * libm::sqrt((n1 + 2.0 * libm::sqrt(-n1 * ld) - 2.0 * ld) / (omega * omega * 4.0))
            / libm::sqrt(info.lambda_min);
        assert!((rep.l2_bound - expect).abs() < 1e-9 * expect);
        assert_eq!(rep.linf_bound, rep.l2_bound);
        assert!((rep.kolmogorov_bound - (10.0 * 2.0 * 0.25 + expect)).abs() < 1e-9 * expect);
        assert_eq!(rep.regime, Regime::FullRank);
    }

    #[test]
    fn bound_shrinks_with_k_and_is_vacuous_at_large_cbar() {
        let base = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let params = BoundParams { delta: 0.05, lambda: Lambda::Auto, cbar: 100.0, lipschitz: 10.0, mesh: 1.0 };
        let small = theoretical_bounds(&info_matrix_from_rows(&base, 2).unwrap().spectrum(), &params).unwrap();
        let many: Vec<Vec<f64>> = base.iter().cycle().take(2000).cloned().collect();
        let large = theoretical_bounds(&info_matrix_from_rows(&many, 2).unwrap().spectrum(), &params).unwrap();
        assert!(large.l2_bound < small.l2_bound);
        assert!(small.vacuous && large.vacuous);
        assert!((small.log_omega + (200.0 + core::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn zero_ridge_needs_full_rank() {
        let info = info_matrix_from_rows(&[vec![1.0, 1.0]], 2).unwrap();
        let mut params = BoundParams { delta: 0.1, lambda: Lambda::Value(0.0), cbar: 1.0, lipschitz: 1.0, mesh: 1.0 };
        assert!(theoretical_bounds(&info.spectrum(), &params).is_err());
        params.lambda = Lambda::Auto;
        let rep = theoretical_bounds(&info.spectrum(), &params).unwrap();
        assert_eq!(rep.lambda, 1.0);
        assert_eq!(rep.regime, Regime::RankDeficient);
    }

    #[test]
    fn empirical_error_examples() {
        assert_eq!(empirical_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(empirical_errors(&[0.0, -3.0, 0.0], &[0.0; 3]).unwrap(), (3.0, 3.0));
        assert!(empirical_errors(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn kolmogorov_examples() {
        let g = BreakpointGrid::new(vec![0.0, 0.5, 1.0], 1e-6).unwrap();
        let u = PiecewiseUtility::interpolate(g, vec![0.0, 0.8, 1.0]).unwrap();
        assert_eq!(kolmogorov_distance(&u, &u).unwrap(), 0.0);
        let lin = PiecewiseUtility::linear(1.0).unwrap();
        assert_eq!(kolmogorov_distance(&lin, &lin.clone()).unwrap(), 0.0);
        assert!((kolmogorov_distance(&u, &lin).unwrap() - 0.3).abs() < 1e-15);
    }
}
