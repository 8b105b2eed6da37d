//! Weighted proportional-odds regression for ordinal responses.
//!
//! The model is `P(Y ≤ k | x) = σ(θ_k − x·b)` with ascending cutpoints θ and a
//! single slope vector shared across levels. Intercepts are absorbed into the
//! cutpoints, so the design must not carry a constant column.

use nalgebra::{DMatrix, DVector};

use super::multinomial::{solve_spd, spd_inverse_diag};
use super::wls::{check_full_rank, validate_weights};
use super::{as_category, ordinal_logpmf, sigmoid, GlmFit, IRLS_MAX_ITERATIONS, IRLS_TOLERANCE, SEPARATION_BOUND};
use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 40;
const MIN_CUTPOINT_GAP: f64 = 1e-8;

/// Fits a weighted proportional-odds model with `levels ≥ 2` ordered levels
/// coded `0..levels-1`.
pub fn fit_weighted_ordinal(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    levels: usize,
) -> Result<GlmFit> {
    validate_weights(weights)?;
    if levels < 2 {
        return Err(Error::InvalidConfig("ordinal fit needs at least 2 levels".into()));
    }
    let n = design.nrows();
    let p = design.ncols();
    let obs: Vec<usize> = response
        .iter()
        .map(|&y| as_category(y, levels, "ordinal"))
        .collect::<Result<_>>()?;
    let mut seen = vec![false; levels];
    for i in 0..n {
        if weights[i] > 0.0 {
            seen[obs[i]] = true;
        }
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateResponse);
    }
    if p > 0 {
        check_full_rank(design, weights)?;
    }

    let n_cuts = levels - 1;
    let dim = n_cuts + p;
    let mut theta = initial_cutpoints(&obs, weights, levels);
    let mut slope = vec![0.0; p];
    let mut separation = false;
    let mut converged = false;
    let mut iterations = 0;

    let eval_ll = |theta: &[f64], slope: &[f64]| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let eta: f64 = (0..p).map(|k| design[(i, k)] * slope[k]).sum();
            ll += weights[i]
                * ordinal_logpmf(obs[i] as f64, eta, theta, levels).unwrap_or(f64::NEG_INFINITY);
        }
        ll
    };

    let mut ll = eval_ll(&theta, &slope);
    let mut info_diag = vec![0.0; dim];

    for iter in 0..IRLS_MAX_ITERATIONS {
        iterations = iter + 1;
        let mut score = DVector::<f64>::zeros(dim);
        let mut info = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let k = obs[i];
            let eta: f64 = (0..p).map(|c| design[(i, c)] * slope[c]).sum();
            // cumulative pieces at the bracketing cutpoints
            let (f_up, fp_up) = if k == levels - 1 {
                (0.0, 0.0)
            } else {
                let big_f = sigmoid(theta[k] - eta);
                let f = big_f * (1.0 - big_f);
                (f, f * (1.0 - 2.0 * big_f))
            };
            let (f_lo, fp_lo) = if k == 0 {
                (0.0, 0.0)
            } else {
                let big_f = sigmoid(theta[k - 1] - eta);
                let f = big_f * (1.0 - big_f);
                (f, f * (1.0 - 2.0 * big_f))
            };
            let prob = ordinal_logpmf(k as f64, eta, &theta, levels)?.exp().max(1e-300);

            // gradient
            if k < levels - 1 {
                score[k] += w * f_up / prob;
            }
            if k > 0 {
                score[k - 1] -= w * f_lo / prob;
            }
            let g_eta = w * (f_lo - f_up) / prob;
            for c in 0..p {
                score[n_cuts + c] += g_eta * design[(i, c)];
            }

            // Hessian contributions; info accumulates −H
            let p2 = prob * prob;
            if k < levels - 1 {
                info[(k, k)] -= w * (fp_up / prob - f_up * f_up / p2);
            }
            if k > 0 {
                info[(k - 1, k - 1)] -= w * (-fp_lo / prob - f_lo * f_lo / p2);
            }
            if k > 0 && k < levels - 1 {
                let v = -w * (-f_up * (-f_lo)) / p2;
                info[(k, k - 1)] -= v;
                info[(k - 1, k)] -= v;
            }
            let b = f_lo - f_up;
            let h_eta_eta = w * ((fp_up - fp_lo) / prob - b * b / p2);
            if k < levels - 1 {
                let h = w * (-fp_up / prob - f_up * b / p2);
                for c in 0..p {
                    info[(k, n_cuts + c)] -= h * design[(i, c)];
                    info[(n_cuts + c, k)] -= h * design[(i, c)];
                }
            }
            if k > 0 {
                let h = w * (fp_lo / prob + f_lo * b / p2);
                for c in 0..p {
                    info[(k - 1, n_cuts + c)] -= h * design[(i, c)];
                    info[(n_cuts + c, k - 1)] -= h * design[(i, c)];
                }
            }
            for c in 0..p {
                for d in 0..p {
                    info[(n_cuts + c, n_cuts + d)] -= h_eta_eta * design[(i, c)] * design[(i, d)];
                }
            }
        }

        let direction = solve_spd(&info, &score)?;
        let mut step = 1.0;
        let mut new_theta = theta.clone();
        let mut new_slope = slope.clone();
        let mut new_ll = ll;
        for _ in 0..=MAX_HALVINGS {
            let mut cand_theta: Vec<f64> = (0..n_cuts).map(|m| theta[m] + step * direction[m]).collect();
            let mut cand_slope: Vec<f64> =
                (0..p).map(|c| slope[c] + step * direction[n_cuts + c]).collect();
            let mut clipped = false;
            for v in cand_theta.iter_mut().chain(cand_slope.iter_mut()) {
                if v.abs() > SEPARATION_BOUND {
                    *v = v.signum() * SEPARATION_BOUND;
                    clipped = true;
                }
            }
            let ascending = cand_theta.windows(2).all(|wd| wd[1] - wd[0] > MIN_CUTPOINT_GAP);
            if ascending {
                let cand_ll = eval_ll(&cand_theta, &cand_slope);
                if cand_ll >= ll || step < 1e-12 {
                    new_theta = cand_theta;
                    new_slope = cand_slope;
                    new_ll = cand_ll;
                    separation |= clipped;
                    break;
                }
            }
            step *= 0.5;
        }

        let delta = new_theta
            .iter()
            .zip(&theta)
            .chain(new_slope.iter().zip(&slope))
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0_f64, f64::max);
        theta = new_theta;
        slope = new_slope;
        ll = new_ll;
        if let Ok(d) = spd_inverse_diag(&info) {
            info_diag = d;
        }
        if delta < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }

    Ok(GlmFit {
        coefficients: slope,
        cutpoints: theta,
        dispersion: 1.0,
        weighted_log_likelihood: ll,
        converged,
        iterations,
        separation,
        coef_variances: info_diag[n_cuts..].to_vec(),
        cutpoint_variances: info_diag[..n_cuts].to_vec(),
    })
}

/// Cutpoint start values from weighted cumulative level frequencies.
fn initial_cutpoints(obs: &[usize], weights: &[f64], levels: usize) -> Vec<f64> {
    let mut mass = vec![0.0; levels];
    let mut total = 0.0;
    for (i, &k) in obs.iter().enumerate() {
        mass[k] += weights[i];
        total += weights[i];
    }
    let mut cum = 0.0;
    let mut theta = Vec::with_capacity(levels - 1);
    for item in mass.iter().take(levels - 1) {
        cum += item / total;
        let q = cum.clamp(1e-6, 1.0 - 1e-6);
        let mut t = (q / (1.0 - q)).ln();
        if let Some(&prev) = theta.last() {
            if t <= prev + 1e-6 {
                t = prev + 1e-6;
            }
        }
        theta.push(t);
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn saturated_cutpoints_match_cumulative_logits() {
        // 4 levels, cumulative frequencies 0.25 / 0.5 / 0.75, no design columns
        let x = DMatrix::<f64>::zeros(8, 0);
        let y = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let fit = fit_weighted_ordinal(&x, &y, &[1.0; 8], 4).unwrap();
        let expect = [(0.25_f64 / 0.75).ln(), 0.0, (0.75_f64 / 0.25).ln()];
        for (got, want) in fit.cutpoints.iter().zip(expect) {
            assert_relative_eq!(*got, want, epsilon = 1e-6);
        }
        assert!(fit.converged);
    }

    #[test]
    fn two_levels_match_logistic_with_negated_intercept() {
        // With K=2 the cutpoint equals the negated logistic intercept and the
        // slope matches directly.
        let x_slope = DMatrix::from_column_slice(8, 1, &[-1.0, -0.4, 0.2, 0.9, -1.3, 0.5, 1.4, 0.1]);
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        let w = [1.0, 0.8, 1.2, 1.0, 0.6, 1.0, 0.9, 1.1];
        let ord = fit_weighted_ordinal(&x_slope, &y, &w, 2).unwrap();

        let mut with_icept = DMatrix::<f64>::from_element(8, 2, 1.0);
        for i in 0..8 {
            with_icept[(i, 1)] = x_slope[(i, 0)];
        }
        let logit = super::super::fit_weighted_logistic(&with_icept, &y, &w).unwrap();
        assert_relative_eq!(ord.cutpoints[0], -logit.coefficients[0], epsilon = 1e-5);
        assert_relative_eq!(ord.coefficients[0], logit.coefficients[1], epsilon = 1e-5);
    }

    #[test]
    fn single_observed_level_is_degenerate() {
        let x = DMatrix::<f64>::zeros(4, 0);
        let y = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            fit_weighted_ordinal(&x, &y, &[1.0; 4], 3),
            Err(Error::DegenerateResponse)
        ));
    }

    #[test]
    fn cutpoints_stay_ascending() {
        let x = DMatrix::from_column_slice(9, 1, &[0.1, -0.2, 0.5, 1.1, -0.7, 0.3, -1.4, 0.8, 0.0]);
        let y = [0.0, 1.0, 2.0, 3.0, 0.0, 2.0, 1.0, 3.0, 2.0];
        let fit = fit_weighted_ordinal(&x, &y, &[1.0; 9], 4).unwrap();
        assert!(fit.cutpoints.windows(2).all(|w| w[0] < w[1]));
    }
}
