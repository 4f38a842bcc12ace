//! Language-agnostic numerical kernels.
//!
//! - symmetric tridiagonal eigensolver (Sturm bisection + inverse iteration),
//! - sparse symmetric eigensolver for the smallest eigenvalues, with an
//!   optional positive diagonal mass matrix (generalized problem),
//! - dense fallback solver used as an independent oracle,
//! - log-log least-squares rate fitting for convergence studies.
//!
//! All operations are pure given their inputs and deterministic for a fixed
//! input; concurrent invocation on distinct inputs is safe.

mod sparse;
mod tridiag;

pub use sparse::{default_iter_cap, dense_smallest, sparse_smallest, SparseBuilder, SparseSymmetric};
pub use tridiag::{sturm_count_below, tridiag_smallest, TridiagonalMatrix};

#[allow(unused_imports)] // test-only consumer in sibling modules
pub(crate) use tridiag::DeterministicRng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance on eigenpair residuals.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-9;

/// One converged eigenpair of a (generalized) symmetric problem
/// `A x = lambda B x`.
///
/// `residual` is `||A x - lambda B x|| / ||x||_B`; the vector is
/// B-normalized to 1.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

/// Least-squares line through `(log eps, log err)` points.
///
/// `slope` is the empirical convergence order of `err ~ C * eps^slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit `err = C * eps^p` by least squares in log-log coordinates.
///
/// Requires at least 3 points with distinct `eps` and strictly positive
/// errors.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs >= 3 points, got {}",
            points.len()
        )));
    }
    for &(eps, err) in points {
        if !(eps > 0.0) || !(err > 0.0) {
            return Err(Error::invalid(format!(
                "rate fit needs positive (eps, err), got ({eps}, {err})"
            )));
        }
    }
    for (i, &(ei, _)) in points.iter().enumerate() {
        for &(ej, _) in points.iter().skip(i + 1) {
            if ei == ej {
                return Err(Error::invalid(format!("duplicate eps value {ei}")));
            }
        }
    }

    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(e, r)| (e.ln(), r.ln())).collect();
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();

    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;

    let mean_y = sy / n;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };

    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Richardson-extrapolate the last value of a sequence `v(eps)` sampled on a
/// decreasing `eps` list, with the convergence order fitted from the last
/// three entries. Returns `(limit, fitted_order)`.
///
/// Falls back to first-order extrapolation when the consecutive differences
/// do not expose a usable order (sign change, already converged, ...).
pub fn richardson_limit(eps: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if eps.len() != values.len() || eps.len() < 3 {
        return Err(Error::invalid(
            "richardson_limit needs >= 3 matching (eps, value) entries",
        ));
    }
    let n = eps.len();
    let r = eps[n - 2] / eps[n - 1];
    if !(r > 1.0) {
        return Err(Error::invalid("eps list must be strictly decreasing"));
    }
    let d1 = values[n - 2] - values[n - 3];
    let d2 = values[n - 1] - values[n - 2];
    let order = if d1 * d2 > 0.0 && d2.abs() < d1.abs() {
        (d1 / d2).ln() / r.ln()
    } else {
        1.0
    };
    if d2 == 0.0 {
        return Ok((values[n - 1], order));
    }
    let factor = r.powf(order) - 1.0;
    let limit = values[n - 1] + d2 / factor;
    Ok((limit, order))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_rate_exact_second_order() {
        let pts = [(0.1, 0.01), (0.05, 0.0025), (0.025, 0.000625)];
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12, "slope {}", fit.slope);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_exact_three_halves() {
        let c = 0.7;
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e| (e, c * f64::powf(e, 1.5)))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!((fit.intercept.exp() - c).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_with_multiplicative_noise() {
        // 1% multiplicative noise from a fixed pattern; slope must stay
        // within 0.1 of the true exponent.
        let p = 1.8;
        let noise = [1.01, 0.99, 1.008, 0.994, 1.003];
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025, 0.0125]
            .iter()
            .zip(noise.iter())
            .map(|(&e, &w)| (e, 0.3 * f64::powf(e, p) * w))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - p).abs() < 0.1, "slope {}", fit.slope);
    }

    #[test]
    fn fit_rate_rejects_bad_input() {
        assert!(fit_rate(&[(0.1, 0.1), (0.05, 0.01)]).is_err());
        assert!(fit_rate(&[(0.1, 0.1), (0.05, 0.01), (0.05, 0.001)]).is_err());
        assert!(fit_rate(&[(0.1, 0.1), (0.05, 0.0), (0.025, 0.01)]).is_err());
    }

    #[test]
    fn richardson_limit_recovers_power_law() {
        let eps = [0.2f64, 0.1, 0.05, 0.025];
        let vals: Vec<f64> = eps.iter().map(|&e| 3.0 + 0.4 * e.powf(1.5)).collect();
        let (limit, order) = richardson_limit(&eps, &vals).unwrap();
        assert!((limit - 3.0).abs() < 1e-10, "limit {limit}");
        assert!((order - 1.5).abs() < 1e-6, "order {order}");
    }
}
