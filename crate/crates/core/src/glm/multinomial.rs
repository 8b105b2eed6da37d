//! Weighted multinomial logistic regression with a reference category.
//!
//! Coefficients are identified for categories `1..J` against category 0; a
//! damped Newton iteration maximizes the weighted log-likelihood.

use nalgebra::{DMatrix, DVector};

use super::wls::{check_full_rank, validate_weights};
use super::{as_category, GlmFit, IRLS_MAX_ITERATIONS, IRLS_TOLERANCE, SEPARATION_BOUND};
use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 30;

/// Fits a weighted multinomial logit model with `categories ≥ 2` categories.
///
/// Every category must appear among the positively weighted rows; with two
/// categories the model coincides with weighted logistic regression.
pub fn fit_weighted_multinomial(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    categories: usize,
) -> Result<GlmFit> {
    validate_weights(weights)?;
    if categories < 2 {
        return Err(Error::InvalidConfig(
            "multinomial fit needs at least 2 categories".into(),
        ));
    }
    let n = design.nrows();
    let p = design.ncols();
    let cats: Vec<usize> = response
        .iter()
        .map(|&y| as_category(y, categories, "multinomial"))
        .collect::<Result<_>>()?;
    let mut seen = vec![false; categories];
    for i in 0..n {
        if weights[i] > 0.0 {
            seen[cats[i]] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::MissingCategory { category: missing });
    }
    check_full_rank(design, weights)?;

    let dim = p * (categories - 1);
    let mut beta = DVector::<f64>::zeros(dim);
    let mut probs = DMatrix::<f64>::zeros(n, categories);
    let mut separation = false;
    let mut converged = false;
    let mut iterations = 0;

    let log_likelihood = |beta: &DVector<f64>, probs: &mut DMatrix<f64>| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            // logits with reference 0; stabilized softmax
            let mut max = 0.0_f64;
            let mut logits = vec![0.0; categories];
            for c in 1..categories {
                let mut lp = 0.0;
                for k in 0..p {
                    lp += design[(i, k)] * beta[(c - 1) * p + k];
                }
                logits[c] = lp;
                max = max.max(lp);
            }
            let mut z = 0.0;
            for c in 0..categories {
                let e = (logits[c] - max).exp();
                probs[(i, c)] = e;
                z += e;
            }
            for c in 0..categories {
                probs[(i, c)] /= z;
            }
            if weights[i] > 0.0 {
                ll += weights[i] * (logits[cats[i]] - max - z.ln());
            }
        }
        ll
    };

    let mut ll = log_likelihood(&beta, &mut probs);
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
            for c in 1..categories {
                let resid = (cats[i] == c) as usize as f64 - probs[(i, c)];
                for k in 0..p {
                    score[(c - 1) * p + k] += w * design[(i, k)] * resid;
                }
                for d in 1..categories {
                    let v = w * probs[(i, c)] * (((c == d) as usize as f64) - probs[(i, d)]);
                    if v == 0.0 {
                        continue;
                    }
                    for k in 0..p {
                        let xik = design[(i, k)];
                        for l in 0..p {
                            info[((c - 1) * p + k, (d - 1) * p + l)] += v * xik * design[(i, l)];
                        }
                    }
                }
            }
        }

        let direction = solve_spd(&info, &score)?;
        // damped update with step halving on likelihood decrease
        let mut step = 1.0;
        let mut accepted = beta.clone();
        let mut accepted_ll = ll;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = &beta + step * &direction;
            for v in cand.iter_mut() {
                if v.abs() > SEPARATION_BOUND {
                    *v = v.signum() * SEPARATION_BOUND;
                    separation = true;
                }
            }
            let cand_ll = log_likelihood(&cand, &mut probs);
            if cand_ll >= ll || step < 1e-12 {
                accepted = cand;
                accepted_ll = cand_ll;
                break;
            }
            step *= 0.5;
        }
        let delta = (0..dim)
            .map(|k| (accepted[k] - beta[k]).abs() / (1.0 + beta[k].abs()))
            .fold(0.0_f64, f64::max);
        beta = accepted;
        ll = accepted_ll;
        // variance from the information at the accepted point
        if let Ok(inv_diag) = spd_inverse_diag(&info) {
            info_diag = inv_diag;
        }
        if delta < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }
    // refresh probabilities at the final coefficients
    let ll = log_likelihood(&beta, &mut probs);

    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        cutpoints: Vec::new(),
        dispersion: 1.0,
        weighted_log_likelihood: ll,
        converged,
        iterations,
        separation,
        coef_variances: info_diag,
        cutpoint_variances: Vec::new(),
    })
}

/// Solves `A x = b` for symmetric positive definite `A`, retrying with an
/// escalating ridge when the factorization fails (near-degenerate weights).
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = a.nrows();
    let max_diag = (0..dim).map(|k| a[(k, k)].abs()).fold(0.0_f64, f64::max);
    let mut ridge = 0.0;
    for _ in 0..6 {
        let mut m = a.clone();
        for k in 0..dim {
            m[(k, k)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            return Ok(chol.solve(b));
        }
        ridge = if ridge == 0.0 {
            1e-8 * max_diag.max(1e-12)
        } else {
            ridge * 100.0
        };
    }
    Err(Error::SingularDesign { columns: vec![] })
}

pub(crate) fn spd_inverse_diag(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::SingularDesign { columns: vec![] })?;
    let inv = chol.inverse();
    Ok((0..a.nrows()).map(|k| inv[(k, k)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn saturated_intercept_model_matches_frequencies() {
        // frequencies 0.2 / 0.3 / 0.5 over ten rows
        let n = 10;
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = [0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let fit = fit_weighted_multinomial(&x, &y, &vec![1.0; n], 3).unwrap();
        // fitted probabilities via softmax of intercepts
        let e1 = fit.coefficients[0].exp();
        let e2 = fit.coefficients[1].exp();
        let z = 1.0 + e1 + e2;
        assert_relative_eq!(1.0 / z, 0.2, epsilon = 1e-6);
        assert_relative_eq!(e1 / z, 0.3, epsilon = 1e-6);
        assert_relative_eq!(e2 / z, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn missing_category_is_reported() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = [0.0, 0.0, 2.0, 2.0];
        let err = fit_weighted_multinomial(&x, &y, &[1.0; 4], 3).unwrap_err();
        assert!(matches!(err, Error::MissingCategory { category: 1 }));
    }

    #[test]
    fn two_categories_match_logistic() {
        let x = DMatrix::from_row_slice(8, 2, &[
            1.0, -1.2, 1.0, 0.4, 1.0, 0.9, 1.0, -0.3, //
            1.0, 1.7, 1.0, -0.8, 1.0, 0.1, 1.0, 0.6,
        ]);
        let y = [0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let w = [1.0, 0.5, 2.0, 1.0, 0.7, 1.3, 1.0, 0.4];
        let multi = fit_weighted_multinomial(&x, &y, &w, 2).unwrap();
        let logit = super::super::fit_weighted_logistic(&x, &y, &w).unwrap();
        for k in 0..2 {
            assert_relative_eq!(multi.coefficients[k], logit.coefficients[k], epsilon = 1e-6);
        }
    }
}
