//! Weighted Bernoulli regression via iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::wls::{solve_weighted_least_squares, validate_weights};
use super::{bernoulli_logpmf, sigmoid, GlmFit, IRLS_MAX_ITERATIONS, IRLS_TOLERANCE, SEPARATION_BOUND};
use crate::error::{Error, Result};

const WORKING_WEIGHT_FLOOR: f64 = 1e-10;

/// Fits a weighted logistic regression.
///
/// Divergence of any coefficient beyond [`SEPARATION_BOUND`] is treated as
/// complete separation: the coefficient is clipped and the fit is flagged, so
/// callers with degenerate E-step weights keep running.
pub fn fit_weighted_logistic(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
) -> Result<GlmFit> {
    validate_weights(weights)?;
    for &y in response {
        if y != 0.0 && y != 1.0 {
            return Err(Error::OutsideSupport {
                family: "bernoulli",
                value: y,
            });
        }
    }

    let n = design.nrows();
    let p = design.ncols();
    let mut beta = DVector::<f64>::zeros(p);
    let mut separation = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut work_weights = vec![0.0; n];
    let mut working = DVector::<f64>::zeros(n);
    let mut covariance_diag = vec![0.0; p];

    for iter in 0..IRLS_MAX_ITERATIONS {
        iterations = iter + 1;
        for i in 0..n {
            let lp: f64 = (0..p).map(|k| design[(i, k)] * beta[k]).sum();
            let mu = sigmoid(lp);
            let v = mu * (1.0 - mu);
            // The working response uses the exact variance so diverging fits
            // keep walking toward the clip bound; only the solve weight is
            // floored for numerical stability.
            work_weights[i] = weights[i] * v.max(WORKING_WEIGHT_FLOOR);
            working[i] = if v > 1e-300 {
                lp + (response[i] - mu) / v
            } else {
                lp
            };
        }
        let sol = solve_weighted_least_squares(design, &working, &work_weights)?;
        let mut next = sol.coefficients;
        for k in 0..p {
            if next[k].abs() > SEPARATION_BOUND {
                next[k] = next[k].signum() * SEPARATION_BOUND;
                separation = true;
            }
        }
        let delta = (0..p)
            .map(|k| (next[k] - beta[k]).abs() / (1.0 + beta[k].abs()))
            .fold(0.0_f64, f64::max);
        covariance_diag = sol.covariance_diag;
        beta = next;
        if delta < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }

    let mut ll = 0.0;
    for i in 0..n {
        if weights[i] == 0.0 {
            continue;
        }
        let lp: f64 = (0..p).map(|k| design[(i, k)] * beta[k]).sum();
        ll += weights[i] * bernoulli_logpmf(response[i], lp)?;
    }

    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        cutpoints: Vec::new(),
        dispersion: 1.0,
        weighted_log_likelihood: ll,
        converged,
        iterations,
        separation,
        coef_variances: covariance_diag,
        cutpoint_variances: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn balanced_intercept_is_zero() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = fit_weighted_logistic(&x, &[0.0, 1.0, 0.0, 1.0], &[1.0; 4]).unwrap();
        assert_relative_eq!(fit.coefficients[0], 0.0, epsilon = 1e-8);
        assert!(fit.converged);
        assert!(!fit.separation);
    }

    #[test]
    fn all_zero_response_hits_clip_bound() {
        let x = DMatrix::from_element(6, 1, 1.0);
        let fit = fit_weighted_logistic(&x, &[0.0; 6], &[1.0; 6]).unwrap();
        assert!(fit.separation);
        assert_relative_eq!(fit.coefficients[0], -SEPARATION_BOUND, epsilon = 1e-12);
    }

    #[test]
    fn weights_shift_the_intercept() {
        // intercept-only with weights 3:1 in favor of ones: logit(0.75)
        let x = DMatrix::from_element(2, 1, 1.0);
        let fit = fit_weighted_logistic(&x, &[1.0, 0.0], &[3.0, 1.0]).unwrap();
        assert_relative_eq!(fit.coefficients[0], (3.0_f64).ln(), epsilon = 1e-7);
    }

    #[test]
    fn invalid_response_rejected() {
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(fit_weighted_logistic(&x, &[0.0, 2.0], &[1.0, 1.0]).is_err());
    }
}
