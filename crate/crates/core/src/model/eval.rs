//! Transition-matrix and emission-density evaluators.

use super::{ModelSpec, ParameterSet, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::glm::{
    bernoulli_logpmf, gaussian_logpdf, ordinal_logpmf, sigmoid, GlmFamily,
};

/// Regressors of the outcome model at one time point.
#[derive(Debug, Clone, Copy)]
pub struct OutcomeRegressors<'a> {
    pub y_lag: f64,
    pub exposure: f64,
    pub c: &'a [f64],
    pub w: &'a [f64],
    pub exposure_lag: f64,
}

/// Regressors of the exposure model at one time point.
#[derive(Debug, Clone, Copy)]
pub struct ExposureRegressors<'a> {
    pub a_lag: f64,
    pub w: &'a [f64],
    pub c_lag: &'a [f64],
    pub y_lag: f64,
}

/// Regressors of one internal-covariate model at one time point.
#[derive(Debug, Clone, Copy)]
pub struct CovariateRegressors<'a> {
    pub c_lag: &'a [f64],
    pub w: &'a [f64],
    pub a_lag: f64,
    pub y_lag: f64,
}

/// Covariates entering the transition into time `t` (all taken at `t − 1`).
#[derive(Debug, Clone)]
pub struct TransitionRegressors {
    pub c: Vec<f64>,
    pub w: Vec<f64>,
    pub y: f64,
    pub a: f64,
}

impl TransitionRegressors {
    pub fn at(dataset: &TimeSeriesDataset, t: usize, y_imputed: &[f64]) -> Result<Self> {
        if t == 0 {
            return Err(Error::UseInitialProbabilities);
        }
        Ok(TransitionRegressors {
            c: dataset.c_at(t - 1),
            w: dataset.w_at(t - 1),
            y: y_imputed[t - 1],
            a: dataset.a[t - 1],
        })
    }

    fn predictor(&self, coef: &[f64]) -> f64 {
        let mut lp = coef[0];
        let mut k = 1;
        for &c in &self.c {
            lp += coef[k] * c;
            k += 1;
        }
        for &w in &self.w {
            lp += coef[k] * w;
            k += 1;
        }
        lp += coef[k] * self.y;
        lp + coef[k + 1] * self.a
    }
}

/// One row of the transition matrix: softmax over target states with state 0
/// as the reference category.
pub fn transition_row(params: &ParameterSet, from: usize, regr: &TransitionRegressors) -> Vec<f64> {
    let n_states = params.n_states();
    let mut logits = Vec::with_capacity(n_states);
    logits.push(0.0);
    for coef in &params.transition.rows[from] {
        logits.push(regr.predictor(coef));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut row: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= z;
    }
    row
}

/// The `J × J` stochastic matrix governing the transition into time `t ≥ 1`.
///
/// Row `i` is the (multinomial-)logit transform of the linear predictors for
/// moving out of state `i`; every row sums to one. Lagged outcome values come
/// from the imputation-completed series.
pub fn transition_matrix_at(
    _spec: &ModelSpec,
    params: &ParameterSet,
    dataset: &TimeSeriesDataset,
    t: usize,
    y_imputed: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let regr = TransitionRegressors::at(dataset, t, y_imputed)?;
    Ok((0..params.n_states())
        .map(|i| transition_row(params, i, &regr))
        .collect())
}

/// Linear predictor of the outcome model in state `j`.
pub fn outcome_linear_predictor(params: &ParameterSet, j: usize, r: &OutcomeRegressors) -> f64 {
    let o = &params.outcome;
    let mut lp = o.intercept.at(j) + o.y_lag.at(j) * r.y_lag + o.exposure.at(j) * r.exposure;
    for (coef, &x) in o.c.iter().zip(r.c) {
        lp += coef.at(j) * x;
    }
    for (coef, &x) in o.w.iter().zip(r.w) {
        lp += coef.at(j) * x;
    }
    lp + o.exposure_lag.at(j) * r.exposure_lag
}

/// Linear predictor of the exposure model in state `j`.
pub fn exposure_linear_predictor(params: &ParameterSet, j: usize, r: &ExposureRegressors) -> f64 {
    let e = &params.exposure;
    let mut lp = e.intercept.at(j) + e.a_lag.at(j) * r.a_lag;
    for (coef, &x) in e.w.iter().zip(r.w) {
        lp += coef.at(j) * x;
    }
    for (coef, &x) in e.c_lag.iter().zip(r.c_lag) {
        lp += coef.at(j) * x;
    }
    lp + e.y_lag.at(j) * r.y_lag
}

/// Linear predictor of internal covariate `k` in state `j`.
pub fn covariate_linear_predictor(
    params: &ParameterSet,
    k: usize,
    j: usize,
    r: &CovariateRegressors,
) -> f64 {
    let cc = &params.covariates[k];
    let mut lp = cc.intercept.at(j);
    for (coef, &x) in cc.c_lag.iter().zip(r.c_lag) {
        lp += coef.at(j) * x;
    }
    for (coef, &x) in cc.w.iter().zip(r.w) {
        lp += coef.at(j) * x;
    }
    lp + cc.a_lag.at(j) * r.a_lag + cc.y_lag.at(j) * r.y_lag
}

/// Conditional mean of the outcome given state `j` and its regressors
/// (inverse link applied).
pub fn conditional_mean_y(
    spec: &ModelSpec,
    params: &ParameterSet,
    j: usize,
    r: &OutcomeRegressors,
) -> f64 {
    let lp = outcome_linear_predictor(params, j, r);
    match spec.family_y {
        GlmFamily::Gaussian => lp,
        GlmFamily::Bernoulli => sigmoid(lp),
        _ => lp,
    }
}

/// Joint emission log-density of `(Y_t, A_t, C_t)` given state `j` at time
/// `t ≥ 1`.
///
/// The joint factorizes over the three blocks; a missing outcome contributes
/// exactly zero (marginalization), while missing exposure or covariates are
/// outside the model's scope and rejected upstream.
pub fn emission_logdensity(
    spec: &ModelSpec,
    params: &ParameterSet,
    dataset: &TimeSeriesDataset,
    t: usize,
    j: usize,
    y_imputed: &[f64],
) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidConfig(
            "emissions are defined from the second time point on".into(),
        ));
    }
    let c_now = dataset.c_at(t);
    let c_prev = dataset.c_at(t - 1);
    let w_now = dataset.w_at(t);
    let mut total = 0.0;

    if !dataset.y_missing[t] {
        let r = OutcomeRegressors {
            y_lag: y_imputed[t - 1],
            exposure: dataset.a[t],
            c: &c_now,
            w: &w_now,
            exposure_lag: dataset.a[t - 1],
        };
        let lp = outcome_linear_predictor(params, j, &r);
        total += match spec.family_y {
            GlmFamily::Gaussian => gaussian_logpdf(dataset.y[t], lp, params.outcome.dispersion),
            GlmFamily::Bernoulli => bernoulli_logpmf(dataset.y[t], lp)?,
            _ => unreachable!("outcome family validated"),
        };
    }

    let r = ExposureRegressors {
        a_lag: dataset.a[t - 1],
        w: &w_now,
        c_lag: &c_prev,
        y_lag: y_imputed[t - 1],
    };
    let lp = exposure_linear_predictor(params, j, &r);
    total += match spec.family_a {
        GlmFamily::Gaussian => gaussian_logpdf(dataset.a[t], lp, params.exposure.dispersion),
        GlmFamily::Bernoulli => bernoulli_logpmf(dataset.a[t], lp)?,
        GlmFamily::Ordinal { categories } => {
            ordinal_logpmf(dataset.a[t], lp, &params.exposure.cutpoints, categories)?
        }
        _ => unreachable!("exposure family validated"),
    };

    for k in 0..dataset.n_internal() {
        let r = CovariateRegressors {
            c_lag: &c_prev,
            w: &w_now,
            a_lag: dataset.a[t - 1],
            y_lag: y_imputed[t - 1],
        };
        let lp = covariate_linear_predictor(params, k, j, &r);
        total += match spec.family_c[k] {
            GlmFamily::Gaussian => {
                gaussian_logpdf(c_now[k], lp, params.covariates[k].dispersion)
            }
            GlmFamily::Bernoulli => bernoulli_logpmf(c_now[k], lp)?,
            _ => unreachable!("covariate family validated"),
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovariateCoefs, ExposureCoefs, OutcomeCoefs, StateCoef, TransitionCoefs};
    use approx::assert_relative_eq;

    fn dataset() -> TimeSeriesDataset {
        TimeSeriesDataset {
            y: vec![0.5, 1.0, -0.2, 0.8],
            y_missing: vec![false, false, true, false],
            a: vec![1.0, 0.0, 1.0, 2.0],
            c: vec![vec![0.1, 0.2, -0.1, 0.3]],
            w: vec![vec![1.0, -1.0, 0.5, 0.0]],
            latent_truth: None,
        }
    }

    fn zero_params(n_states: usize) -> ParameterSet {
        ParameterSet {
            initial: vec![1.0 / n_states as f64; n_states],
            transition: TransitionCoefs::zeros(n_states, 1, 1),
            outcome: OutcomeCoefs {
                intercept: StateCoef::per_state(vec![0.0; n_states]),
                y_lag: StateCoef::shared(0.0),
                exposure: StateCoef::per_state(vec![0.0; n_states]),
                c: vec![StateCoef::shared(0.0)],
                w: vec![StateCoef::shared(0.0)],
                exposure_lag: StateCoef::per_state(vec![0.0; n_states]),
                dispersion: 1.0,
            },
            exposure: ExposureCoefs {
                intercept: StateCoef::per_state(vec![0.0; n_states]),
                a_lag: StateCoef::shared(0.0),
                w: vec![StateCoef::shared(0.0)],
                c_lag: vec![StateCoef::shared(0.0)],
                y_lag: StateCoef::shared(0.0),
                dispersion: 1.0,
                cutpoints: vec![],
            },
            covariates: vec![CovariateCoefs {
                intercept: StateCoef::per_state(vec![0.0; n_states]),
                c_lag: vec![StateCoef::shared(0.0)],
                w: vec![StateCoef::shared(0.0)],
                a_lag: StateCoef::shared(0.0),
                y_lag: StateCoef::shared(0.0),
                dispersion: 1.0,
            }],
        }
    }

    #[test]
    fn zero_coefficients_give_uniform_rows() {
        let spec = ModelSpec::gaussian(3, 1);
        let mut params = zero_params(3);
        params.transition = TransitionCoefs::zeros(3, 1, 1);
        let ds = dataset();
        let y = ds.y.clone();
        let m = transition_matrix_at(&spec, &params, &ds, 2, &y).unwrap();
        for row in &m {
            for &p in row {
                assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-14);
            }
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn first_time_point_has_no_transition() {
        let spec = ModelSpec::gaussian(2, 1);
        let params = zero_params(2);
        let ds = dataset();
        let y = ds.y.clone();
        assert!(matches!(
            transition_matrix_at(&spec, &params, &ds, 0, &y),
            Err(Error::UseInitialProbabilities)
        ));
    }

    #[test]
    fn three_state_rows_match_hand_softmax() {
        let spec = ModelSpec::gaussian(3, 1);
        let mut params = zero_params(3);
        // from state 0: eta_1 = 0.5 + 0.2*C - 0.1*W + 0.3*Y - 0.2*A, eta_2 = -0.4 + 0.1*C
        params.transition.rows[0] = vec![
            vec![0.5, 0.2, -0.1, 0.3, -0.2],
            vec![-0.4, 0.1, 0.0, 0.0, 0.0],
        ];
        let ds = dataset();
        let y = ds.y.clone();
        let t = 2;
        let (c, w, yl, al) = (ds.c[0][1], ds.w[0][1], y[1], ds.a[1]);
        let eta1 = 0.5 + 0.2 * c - 0.1 * w + 0.3 * yl - 0.2 * al;
        let eta2 = -0.4 + 0.1 * c;
        let z = 1.0 + eta1.exp() + eta2.exp();
        let m = transition_matrix_at(&spec, &params, &ds, t, &y).unwrap();
        assert_relative_eq!(m[0][0], 1.0 / z, epsilon = 1e-12);
        assert_relative_eq!(m[0][1], eta1.exp() / z, epsilon = 1e-12);
        assert_relative_eq!(m[0][2], eta2.exp() / z, epsilon = 1e-12);
    }

    #[test]
    fn missing_outcome_marginalizes_the_y_factor() {
        let spec = ModelSpec::gaussian(2, 1);
        let params = zero_params(2);
        let ds = dataset();
        let y = vec![0.5, 1.0, 0.0, 0.8];
        // t=2 has missing y: only exposure and covariate factors remain
        let got = emission_logdensity(&spec, &params, &ds, 2, 0, &y).unwrap();
        let r_a = ExposureRegressors {
            a_lag: ds.a[1],
            w: &[0.5],
            c_lag: &[0.2],
            y_lag: y[1],
        };
        let lp_a = exposure_linear_predictor(&params, 0, &r_a);
        let want_a = crate::glm::gaussian_logpdf(ds.a[2], lp_a, 1.0);
        let want_c = crate::glm::gaussian_logpdf(ds.c[0][2], 0.0, 1.0);
        assert_relative_eq!(got, want_a + want_c, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_parameters_give_state_invariant_emissions() {
        let spec = ModelSpec::gaussian(2, 1);
        let params = zero_params(2);
        let ds = dataset();
        let y = ds.y.clone();
        let d0 = emission_logdensity(&spec, &params, &ds, 1, 0, &y).unwrap();
        let d1 = emission_logdensity(&spec, &params, &ds, 1, 1, &y).unwrap();
        assert_relative_eq!(d0, d1, epsilon = 1e-14);
    }

    #[test]
    fn conditional_mean_is_the_dot_product_under_identity_link() {
        let spec = ModelSpec::gaussian(2, 1);
        let mut params = zero_params(2);
        params.outcome.exposure = StateCoef::per_state(vec![0.0, 1.0]);
        let r = OutcomeRegressors {
            y_lag: 0.0,
            exposure: 2.0,
            c: &[0.0],
            w: &[0.0],
            exposure_lag: 0.0,
        };
        assert_relative_eq!(conditional_mean_y(&spec, &params, 0, &r), 0.0);
        assert_relative_eq!(conditional_mean_y(&spec, &params, 1, &r), 2.0);
    }
}
