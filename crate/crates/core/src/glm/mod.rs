//! Weighted generalized linear models.
//!
//! The M-step of the EM estimator fits weighted regressions with smoothed
//! state probabilities as weights, and emission probabilities are evaluated
//! through the same family definitions. Four response families are supported:
//! Gaussian with identity link, Bernoulli with logit link, multinomial logit
//! with a reference category, and ordinal proportional odds.
//!
//! All fits are deterministic pure functions of their inputs.

mod logistic;
mod multinomial;
mod ordinal;
mod wls;

pub use logistic::fit_weighted_logistic;
pub use multinomial::fit_weighted_multinomial;
pub use ordinal::fit_weighted_ordinal;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients larger than this in absolute value are treated as diverging
/// (complete or quasi-complete separation) and clipped.
pub const SEPARATION_BOUND: f64 = 30.0;

/// Relative coefficient-change tolerance for iterative fits.
pub const IRLS_TOLERANCE: f64 = 1e-8;

/// Iteration cap for iterative fits.
pub const IRLS_MAX_ITERATIONS: usize = 100;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Response family with its link fixed by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GlmFamily {
    /// Gaussian errors, identity link.
    Gaussian,
    /// Bernoulli response, logit link.
    Bernoulli,
    /// Unordered categorical response, multinomial logit with category 0 as
    /// reference.
    Multinomial { categories: usize },
    /// Ordered categorical response, proportional odds.
    Ordinal { categories: usize },
}

impl GlmFamily {
    /// Number of categories for discrete families; 0 for Gaussian.
    pub fn categories(&self) -> usize {
        match self {
            GlmFamily::Gaussian => 0,
            GlmFamily::Bernoulli => 2,
            GlmFamily::Multinomial { categories } | GlmFamily::Ordinal { categories } => {
                *categories
            }
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, GlmFamily::Gaussian)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GlmFamily::Multinomial { categories } | GlmFamily::Ordinal { categories }
                if *categories < 2 =>
            {
                Err(Error::InvalidConfig(format!(
                    "discrete family needs at least 2 categories, got {categories}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GlmFamily::Gaussian => "gaussian",
            GlmFamily::Bernoulli => "bernoulli",
            GlmFamily::Multinomial { .. } => "multinomial",
            GlmFamily::Ordinal { .. } => "ordinal",
        }
    }
}

/// Result of a weighted GLM fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmFit {
    /// Fitted coefficients. For the multinomial family the vector stacks one
    /// block of `p` coefficients per non-reference category (1..J).
    pub coefficients: Vec<f64>,
    /// Ascending cutpoints (ordinal family only; empty otherwise).
    pub cutpoints: Vec<f64>,
    /// Residual variance for the Gaussian family (weight-sum denominator);
    /// 1.0 for the discrete families.
    pub dispersion: f64,
    /// Weighted log-likelihood at the fitted parameters.
    pub weighted_log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when coefficient divergence was detected and clipped.
    pub separation: bool,
    /// Asymptotic variance of each coefficient (diagonal of the inverse
    /// information), aligned with `coefficients`.
    pub coef_variances: Vec<f64>,
    /// Asymptotic variance of each cutpoint (ordinal family only).
    pub cutpoint_variances: Vec<f64>,
}

/// Weighted least squares for a Gaussian response with identity link.
///
/// The dispersion is the weighted mean squared residual with the weight sum
/// (not the row count) as denominator, so fractional EM weights pool
/// correctly.
pub fn fit_weighted_gaussian(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
) -> Result<GlmFit> {
    wls::validate_weights(weights)?;
    let y = DVector::from_row_slice(response);
    let sol = wls::solve_weighted_least_squares(design, &y, weights)?;

    let mut rss = 0.0;
    let mut wsum = 0.0;
    for i in 0..design.nrows() {
        if weights[i] == 0.0 {
            continue;
        }
        let mut mu = 0.0;
        for k in 0..design.ncols() {
            mu += design[(i, k)] * sol.coefficients[k];
        }
        let r = response[i] - mu;
        rss += weights[i] * r * r;
        wsum += weights[i];
    }
    let dispersion = if wsum > 0.0 { rss / wsum } else { 0.0 };
    let weighted_log_likelihood = if dispersion > 0.0 {
        -0.5 * wsum * (LN_2PI + dispersion.ln() + 1.0)
    } else {
        f64::INFINITY
    };
    let coef_variances = sol
        .covariance_diag
        .iter()
        .map(|v| v * dispersion)
        .collect();
    Ok(GlmFit {
        coefficients: sol.coefficients.iter().copied().collect(),
        cutpoints: Vec::new(),
        dispersion,
        weighted_log_likelihood,
        converged: true,
        iterations: 1,
        separation: false,
        coef_variances,
        cutpoint_variances: Vec::new(),
    })
}

/// Log density (Gaussian) or log probability mass (discrete families) at an
/// observed value, given a fitted model and a design row.
pub fn log_density(
    family: &GlmFamily,
    fit: &GlmFit,
    design_row: &[f64],
    observed: f64,
) -> Result<f64> {
    let p = design_row.len();
    match family {
        GlmFamily::Gaussian => {
            let mu = dot(&fit.coefficients[..p], design_row);
            Ok(gaussian_logpdf(observed, mu, fit.dispersion))
        }
        GlmFamily::Bernoulli => {
            let lp = dot(&fit.coefficients[..p], design_row);
            bernoulli_logpmf(observed, lp)
        }
        GlmFamily::Multinomial { categories } => {
            let mut logits = Vec::with_capacity(categories - 1);
            for c in 0..categories - 1 {
                logits.push(dot(&fit.coefficients[c * p..(c + 1) * p], design_row));
            }
            multinomial_logpmf(observed, &logits)
        }
        GlmFamily::Ordinal { categories } => {
            let lp = dot(&fit.coefficients[..p], design_row);
            ordinal_logpmf(observed, lp, &fit.cutpoints, *categories)
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Density primitives (shared with the emission evaluators)
// ---------------------------------------------------------------------------

/// `ln(1 + e^x)` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 34.0 {
        x
    } else if x < -37.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, numerically stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -log1p_exp(-x)
}

pub fn gaussian_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return if x == mean { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let z = x - mean;
    -0.5 * (LN_2PI + variance.ln()) - 0.5 * z * z / variance
}

/// Bernoulli log mass with a logit-scale predictor; `observed` must be 0 or 1.
pub fn bernoulli_logpmf(observed: f64, logit: f64) -> Result<f64> {
    if observed == 1.0 {
        Ok(log_sigmoid(logit))
    } else if observed == 0.0 {
        Ok(log_sigmoid(-logit))
    } else {
        Err(Error::OutsideSupport {
            family: "bernoulli",
            value: observed,
        })
    }
}

/// Multinomial log mass. `logits` holds the predictors of categories `1..J`
/// against reference category 0 (whose logit is 0).
pub fn multinomial_logpmf(observed: f64, logits: &[f64]) -> Result<f64> {
    let categories = logits.len() + 1;
    let cat = as_category(observed, categories, "multinomial")?;
    let max = logits.iter().fold(0.0_f64, |m, &v| m.max(v));
    let lse = max + ((-max).exp() + logits.iter().map(|&v| (v - max).exp()).sum::<f64>()).ln();
    let lp = if cat == 0 { 0.0 } else { logits[cat - 1] };
    Ok(lp - lse)
}

/// Proportional-odds log mass: `P(Y = k) = σ(θ_k − η) − σ(θ_{k−1} − η)`.
pub fn ordinal_logpmf(observed: f64, predictor: f64, cutpoints: &[f64], categories: usize) -> Result<f64> {
    debug_assert_eq!(cutpoints.len() + 1, categories);
    let level = as_category(observed, categories, "ordinal")?;
    // log cumulative probabilities at the bracketing cutpoints
    let upper = if level == categories - 1 {
        0.0
    } else {
        log_sigmoid(cutpoints[level] - predictor)
    };
    if level == 0 {
        return Ok(upper);
    }
    let lower = log_sigmoid(cutpoints[level - 1] - predictor);
    // upper ≥ lower because cutpoints ascend; ln(e^upper − e^lower)
    let diff = (lower - upper).exp();
    if diff >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(upper + (-diff).ln_1p())
}

/// Validates that a float encodes an integer category in `0..categories`.
pub(crate) fn as_category(value: f64, categories: usize, family: &'static str) -> Result<usize> {
    let rounded = value.round();
    if (value - rounded).abs() > 1e-9 || rounded < 0.0 || rounded as usize >= categories {
        return Err(Error::OutsideSupport { family, value });
    }
    Ok(rounded as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ones_column(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn constant_response_gives_zero_dispersion() {
        let fit = fit_weighted_gaussian(&ones_column(3), &[2.0, 2.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(fit.coefficients[0], 2.0, epsilon = 1e-12);
        assert_eq!(fit.dispersion, 0.0);
    }

    #[test]
    fn exact_linear_fit() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let fit = fit_weighted_gaussian(&x, &[2.0, 4.0, 6.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(fit.coefficients[0], 0.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coefficients[1], 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.dispersion, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn standard_normal_mode_density() {
        assert_relative_eq!(
            gaussian_logpdf(0.0, 0.0, 1.0),
            -0.5 * LN_2PI,
            epsilon = 1e-15
        );
    }

    #[test]
    fn bernoulli_even_odds() {
        assert_relative_eq!(bernoulli_logpmf(1.0, 0.0).unwrap(), 0.5_f64.ln(), epsilon = 1e-15);
        assert!(bernoulli_logpmf(0.5, 0.0).is_err());
    }

    #[test]
    fn multinomial_matches_hand_softmax() {
        // three categories, logits (0, 0.4, -0.3)
        let logits = [0.4, -0.3];
        let z = 1.0 + 0.4_f64.exp() + (-0.3_f64).exp();
        for (cat, lp) in [(0.0, 1.0), (1.0, 0.4_f64.exp()), (2.0, (-0.3_f64).exp())] {
            assert_relative_eq!(
                multinomial_logpmf(cat, &logits).unwrap(),
                (lp / z).ln(),
                epsilon = 1e-12
            );
        }
        assert!(multinomial_logpmf(3.0, &logits).is_err());
    }

    #[test]
    fn discrete_masses_sum_to_one() {
        let logits = [0.7, -1.2, 0.1];
        let total: f64 = (0..4)
            .map(|c| multinomial_logpmf(c as f64, &logits).unwrap().exp())
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);

        let cutpoints = [-1.0, 0.2, 1.4];
        let total: f64 = (0..4)
            .map(|k| ordinal_logpmf(k as f64, 0.3, &cutpoints, 4).unwrap().exp())
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ordinal_tail_probabilities() {
        // far-left predictor pushes all mass to the lowest level
        let cutpoints = [0.0, 1.0];
        let lp = ordinal_logpmf(0.0, -40.0, &cutpoints, 3).unwrap();
        assert!(lp.abs() < 1e-12);
    }
}
