//! Individual causal effects computed from a fitted model: contemporaneous
//! contrasts (conditional on a latent state or marginalized over it), lagged
//! total effects via a Monte Carlo g-formula, and the naive stationary
//! comparator.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_gaussian, sigmoid, GlmFamily};
use crate::model::{
    conditional_mean_y, covariate_linear_predictor, exposure_linear_predictor,
    outcome_linear_predictor, transition_row, CovariateRegressors, ExposureRegressors, ModelSpec,
    OutcomeRegressors, ParameterSet, TimeSeriesDataset, TransitionRegressors,
};
use crate::rng::{derive_seed, stream};

/// Fewer Monte Carlo draws than this attaches a warning to lagged effects.
pub const MIN_MC_DRAWS: usize = 100;

const Z_975: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectKind {
    Contemporaneous,
    Lagged { k: usize },
}

impl EffectKind {
    pub fn label(&self) -> String {
        match self {
            EffectKind::Contemporaneous => "contemporaneous".to_string(),
            EffectKind::Lagged { k } => format!("{k}-lag"),
        }
    }
}

/// A requested causal contrast of `exposure_high` versus `exposure_low`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectQuery {
    pub kind: EffectKind,
    pub exposure_high: f64,
    pub exposure_low: f64,
    /// Condition on this latent state (0-based); `None` marginalizes over the
    /// smoothed state distribution.
    pub condition_state: Option<usize>,
    /// Time points (0-based) to average over; `None` means every admissible
    /// day.
    pub reference_times: Option<Vec<usize>>,
    /// Monte Carlo draws per reference time (lagged effects only).
    pub mc_draws: usize,
}

impl EffectQuery {
    pub fn contemporaneous(a_low: f64, a_high: f64, state: Option<usize>) -> Self {
        EffectQuery {
            kind: EffectKind::Contemporaneous,
            exposure_high: a_high,
            exposure_low: a_low,
            condition_state: state,
            reference_times: None,
            mc_draws: 0,
        }
    }

    pub fn lagged(k: usize, a_low: f64, a_high: f64, state: Option<usize>, mc_draws: usize) -> Self {
        EffectQuery {
            kind: EffectKind::Lagged { k },
            exposure_high: a_high,
            exposure_low: a_low,
            condition_state: state,
            reference_times: None,
            mc_draws,
        }
    }
}

/// A point estimate with an optional percentile interval attached by the
/// bootstrap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub point: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub query: EffectQuery,
    /// Per-reference-time contrasts (identity-link contemporaneous effects
    /// are constant over time).
    pub per_time: Option<Vec<f64>>,
    /// Monte Carlo standard error of the point estimate (lagged effects).
    pub mc_standard_error: Option<f64>,
    pub low_draw_warning: bool,
}

fn admissible_contemporaneous(dataset: &TimeSeriesDataset) -> Vec<usize> {
    (1..dataset.len()).collect()
}

fn reference_times(query: &EffectQuery, default: Vec<usize>) -> Result<Vec<usize>> {
    match &query.reference_times {
        None => Ok(default),
        Some(ts) => {
            if ts.is_empty() {
                return Err(Error::InvalidConfig("empty reference-time set".into()));
            }
            for &t in ts {
                if !default.contains(&t) {
                    return Err(Error::InvalidConfig(format!(
                        "reference time {t} is not admissible for this query"
                    )));
                }
            }
            Ok(ts.clone())
        }
    }
}

/// Contrast of the conditional outcome mean at one time under the two
/// exposure arms, holding everything else at its observed/imputed value.
fn contemporaneous_contrast_at(
    spec: &ModelSpec,
    params: &ParameterSet,
    dataset: &TimeSeriesDataset,
    y_imputed: &[f64],
    t: usize,
    j: usize,
    query: &EffectQuery,
) -> f64 {
    let c_now = dataset.c_at(t);
    let w_now = dataset.w_at(t);
    let base = OutcomeRegressors {
        y_lag: y_imputed[t - 1],
        exposure: query.exposure_high,
        c: &c_now,
        w: &w_now,
        exposure_lag: dataset.a[t - 1],
    };
    let high = conditional_mean_y(spec, params, j, &base);
    let low = conditional_mean_y(
        spec,
        params,
        j,
        &OutcomeRegressors { exposure: query.exposure_low, ..base },
    );
    high - low
}

/// Contemporaneous effect conditional on a latent state.
///
/// Under the identity link this is exactly the state's exposure coefficient
/// times the contrast; other links average the g-computation contrast over
/// the reference times.
pub fn contemporaneous_effect(
    spec: &ModelSpec,
    fit: &FitResult,
    dataset: &TimeSeriesDataset,
    query: &EffectQuery,
) -> Result<EffectEstimate> {
    let j = query
        .condition_state
        .ok_or_else(|| Error::InvalidConfig("conditional effect needs a state".into()))?;
    if j >= spec.n_states {
        return Err(Error::InvalidConfig(format!(
            "condition state {} out of range 1..{}",
            j + 1,
            spec.n_states
        )));
    }
    let delta = query.exposure_high - query.exposure_low;
    if matches!(spec.family_y, GlmFamily::Gaussian) {
        let point = fit.params.outcome.exposure.at(j) * delta;
        return Ok(EffectEstimate {
            point,
            ci_low: None,
            ci_high: None,
            query: query.clone(),
            per_time: None,
            mc_standard_error: None,
            low_draw_warning: false,
        });
    }
    let times = reference_times(query, admissible_contemporaneous(dataset))?;
    let per_time: Vec<f64> = times
        .iter()
        .map(|&t| contemporaneous_contrast_at(spec, &fit.params, dataset, &fit.y_imputed, t, j, query))
        .collect();
    let point = per_time.iter().sum::<f64>() / per_time.len() as f64;
    Ok(EffectEstimate {
        point,
        ci_low: None,
        ci_high: None,
        query: query.clone(),
        per_time: Some(per_time),
        mc_standard_error: None,
        low_draw_warning: false,
    })
}

/// Contemporaneous effect marginalized over the smoothed state distribution:
/// state-conditional contrasts weighted by γ at each reference time, then
/// averaged over time.
pub fn contemporaneous_marginal_effect(
    spec: &ModelSpec,
    fit: &FitResult,
    dataset: &TimeSeriesDataset,
    query: &EffectQuery,
) -> Result<EffectEstimate> {
    let times = reference_times(query, admissible_contemporaneous(dataset))?;
    let per_time: Vec<f64> = times
        .iter()
        .map(|&t| {
            (0..spec.n_states)
                .map(|j| {
                    fit.weights.gamma[t][j]
                        * contemporaneous_contrast_at(
                            spec, &fit.params, dataset, &fit.y_imputed, t, j, query,
                        )
                })
                .sum()
        })
        .collect();
    let point = per_time.iter().sum::<f64>() / per_time.len() as f64;
    Ok(EffectEstimate {
        point,
        ci_low: None,
        ci_high: None,
        query: query.clone(),
        per_time: Some(per_time),
        mc_standard_error: None,
        low_draw_warning: false,
    })
}

/// Simulated state of the system while rolling the model forward.
struct SimState {
    state: usize,
    y: f64,
    a: f64,
    c: Vec<f64>,
}

/// Total effect of an exposure `k` days back via the Monte Carlo g-formula.
///
/// For each reference time `t` and each arm, the exposure at `t − k` is fixed
/// at the arm value, the pre-period history is held at its observed/imputed
/// values, and the chain `(L, C, A, Y)` is simulated forward `k` steps from
/// the fitted model — intermediate exposures are drawn, not fixed, so the
/// contrast captures the total effect. Both arms replay identical random
/// streams (common random numbers).
pub fn k_lagged_effect(
    spec: &ModelSpec,
    fit: &FitResult,
    dataset: &TimeSeriesDataset,
    query: &EffectQuery,
    seed: u64,
) -> Result<EffectEstimate> {
    let k = match query.kind {
        EffectKind::Lagged { k } if k >= 1 => k,
        _ => return Err(Error::InvalidConfig("lagged query needs k >= 1".into())),
    };
    let t_len = dataset.len();
    if k >= t_len.saturating_sub(2) {
        return Err(Error::LagTooLarge { k, len: t_len });
    }
    if let Some(j) = query.condition_state {
        if j >= spec.n_states {
            return Err(Error::InvalidConfig(format!(
                "condition state {} out of range 1..{}",
                j + 1,
                spec.n_states
            )));
        }
    }
    let draws = query.mc_draws.max(1);
    let low_draw_warning = draws < MIN_MC_DRAWS;
    let default: Vec<usize> = (1 + k..t_len).collect();
    let times = reference_times(query, default)?;

    let mut per_time_sum = vec![0.0; times.len()];
    let mut draw_means = Vec::with_capacity(draws);
    for d in 0..draws {
        let mut mean = 0.0;
        for (ti, &t) in times.iter().enumerate() {
            let arm_seed = derive_seed(seed, &[d as u64, t as u64]);
            let y_high = simulate_arm(spec, fit, dataset, t, k, query.exposure_high, query, arm_seed)?;
            let y_low = simulate_arm(spec, fit, dataset, t, k, query.exposure_low, query, arm_seed)?;
            let diff = y_high - y_low;
            per_time_sum[ti] += diff;
            mean += diff;
        }
        draw_means.push(mean / times.len() as f64);
    }
    let point = draw_means.iter().sum::<f64>() / draws as f64;
    let mc_standard_error = if draws > 1 {
        let var = draw_means.iter().map(|m| (m - point).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
        Some((var / draws as f64).sqrt())
    } else {
        None
    };
    Ok(EffectEstimate {
        point,
        ci_low: None,
        ci_high: None,
        query: query.clone(),
        per_time: Some(per_time_sum.iter().map(|s| s / draws as f64).collect()),
        mc_standard_error,
        low_draw_warning,
    })
}

/// Rolls one arm forward from `t − k` to `t` and returns the simulated
/// outcome at `t`. The random stream is fully determined by `arm_seed`, so
/// calling this with the two arm values realizes common random numbers.
#[allow(clippy::too_many_arguments)]
fn simulate_arm(
    spec: &ModelSpec,
    fit: &FitResult,
    dataset: &TimeSeriesDataset,
    t: usize,
    k: usize,
    arm: f64,
    query: &EffectQuery,
    arm_seed: u64,
) -> Result<f64> {
    let s = t - k;
    let mut rng = stream(arm_seed, &[]);
    let y_imp = &fit.y_imputed;

    // state at the intervention time: conditioned or drawn from γ
    let state = match query.condition_state {
        Some(j) => j,
        None => sample_categorical(&mut rng, &fit.weights.gamma[s]),
    };

    // outcome at the intervention time under the fixed arm
    let c_s = dataset.c_at(s);
    let w_s = dataset.w_at(s);
    let regr = OutcomeRegressors {
        y_lag: y_imp[s - 1],
        exposure: arm,
        c: &c_s,
        w: &w_s,
        exposure_lag: dataset.a[s - 1],
    };
    let y_s = draw_outcome(spec, &fit.params, state, &regr, &mut rng);

    let mut sim = SimState { state, y: y_s, a: arm, c: c_s };
    let mut prev_c;
    for u in s + 1..=t {
        let w_u = dataset.w_at(u);
        let w_prev = dataset.w_at(u - 1);
        // latent state from the covariate-dependent transition
        let regr = TransitionRegressors {
            c: sim.c.clone(),
            w: w_prev,
            y: sim.y,
            a: sim.a,
        };
        let row = transition_row(&fit.params, sim.state, &regr);
        let next_state = sample_categorical(&mut rng, &row);

        // internal covariates given the simulated history
        prev_c = sim.c.clone();
        let mut c_u = Vec::with_capacity(prev_c.len());
        for col in 0..prev_c.len() {
            let regr = CovariateRegressors {
                c_lag: &prev_c,
                w: &w_u,
                a_lag: sim.a,
                y_lag: sim.y,
            };
            let lp = covariate_linear_predictor(&fit.params, col, next_state, &regr);
            c_u.push(draw_family(
                spec.family_c[col],
                lp,
                fit.params.covariates[col].dispersion,
                &[],
                &mut rng,
            ));
        }

        // intermediate exposure is drawn from its model
        let regr = ExposureRegressors {
            a_lag: sim.a,
            w: &w_u,
            c_lag: &prev_c,
            y_lag: sim.y,
        };
        let lp = exposure_linear_predictor(&fit.params, next_state, &regr);
        let a_u = draw_family(
            spec.family_a,
            lp,
            fit.params.exposure.dispersion,
            &fit.params.exposure.cutpoints,
            &mut rng,
        );

        let regr = OutcomeRegressors {
            y_lag: sim.y,
            exposure: a_u,
            c: &c_u,
            w: &w_u,
            exposure_lag: sim.a,
        };
        let y_u = draw_outcome(spec, &fit.params, next_state, &regr, &mut rng);

        sim = SimState { state: next_state, y: y_u, a: a_u, c: c_u };
    }
    Ok(sim.y)
}

fn draw_outcome(
    spec: &ModelSpec,
    params: &ParameterSet,
    state: usize,
    regr: &OutcomeRegressors,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let lp = outcome_linear_predictor(params, state, regr);
    match spec.family_y {
        GlmFamily::Gaussian => draw_gaussian(lp, params.outcome.dispersion, rng),
        GlmFamily::Bernoulli => (rng.random::<f64>() < sigmoid(lp)) as usize as f64,
        _ => unreachable!("outcome family validated"),
    }
}

fn draw_family(
    family: GlmFamily,
    lp: f64,
    dispersion: f64,
    cutpoints: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    match family {
        GlmFamily::Gaussian => draw_gaussian(lp, dispersion, rng),
        GlmFamily::Bernoulli => (rng.random::<f64>() < sigmoid(lp)) as usize as f64,
        GlmFamily::Ordinal { categories } => {
            let u: f64 = rng.random();
            let mut level = categories - 1;
            for (kk, &cut) in cutpoints.iter().enumerate() {
                if u < sigmoid(cut - lp) {
                    level = kk;
                    break;
                }
            }
            level as f64
        }
        GlmFamily::Multinomial { .. } => unreachable!("multinomial emissions unsupported"),
    }
}

fn draw_gaussian(mean: f64, variance: f64, rng: &mut ChaCha8Rng) -> f64 {
    if variance > 0.0 {
        Normal::new(mean, variance.sqrt()).expect("finite sd").sample(rng)
    } else {
        mean
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    probs.len() - 1
}

/// The naive stationary comparator and its asymptotic intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaiveFit {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub residual_variance: f64,
    pub n_used: usize,
    /// Position of the contemporaneous-exposure coefficient.
    pub exposure_index: usize,
}

impl NaiveFit {
    pub fn exposure_coefficient(&self) -> f64 {
        self.coefficients[self.exposure_index]
    }

    pub fn exposure_ci(&self) -> (f64, f64) {
        (self.ci_low[self.exposure_index], self.ci_high[self.exposure_index])
    }
}

/// Single linear regression of the outcome on its regressors, ignoring the
/// latent state; rows with a missing outcome (as response or lag) are
/// dropped. Intervals use the normal approximation.
pub fn fit_naive(dataset: &TimeSeriesDataset) -> Result<NaiveFit> {
    let t_len = dataset.len();
    let rows: Vec<usize> = (1..t_len)
        .filter(|&t| !dataset.y_missing[t] && !dataset.y_missing[t - 1])
        .collect();
    let q_c = dataset.n_internal();
    let q_w = dataset.n_external();
    let p = 3 + q_c + q_w;
    if rows.len() <= p {
        return Err(Error::DegenerateWeights(format!(
            "{} usable rows for {} naive coefficients",
            rows.len(),
            p
        )));
    }
    let mut design = DMatrix::<f64>::zeros(rows.len(), p);
    let mut response = Vec::with_capacity(rows.len());
    for (r, &t) in rows.iter().enumerate() {
        design[(r, 0)] = 1.0;
        design[(r, 1)] = dataset.y[t - 1];
        design[(r, 2)] = dataset.a[t];
        for k in 0..q_c {
            design[(r, 3 + k)] = dataset.c[k][t];
        }
        for k in 0..q_w {
            design[(r, 3 + q_c + k)] = dataset.w[k][t];
        }
        response.push(dataset.y[t]);
    }
    let ones = vec![1.0; rows.len()];
    let mut design_full = DMatrix::<f64>::zeros(rows.len(), p + 1);
    design_full.columns_mut(0, p).copy_from(&design);
    for (r, &t) in rows.iter().enumerate() {
        design_full[(r, p)] = dataset.a[t - 1];
    }
    let fit = fit_weighted_gaussian(&design_full, &response, &ones)?;

    let n = rows.len() as f64;
    let p_full = (p + 1) as f64;
    // unbiased residual variance for the intervals
    let sigma2 = fit.dispersion * n / (n - p_full);
    let mut labels = vec!["intercept".to_string(), "y_lag".to_string(), "exposure".to_string()];
    for k in 0..q_c {
        labels.push(format!("c{}", k + 1));
    }
    for k in 0..q_w {
        labels.push(format!("w{}", k + 1));
    }
    labels.push("exposure_lag".to_string());
    let scale = if fit.dispersion > 0.0 { sigma2 / fit.dispersion } else { 0.0 };
    let se: Vec<f64> = fit.coef_variances.iter().map(|v| (v * scale).sqrt()).collect();
    let ci_low: Vec<f64> = fit.coefficients.iter().zip(&se).map(|(b, s)| b - Z_975 * s).collect();
    let ci_high: Vec<f64> = fit.coefficients.iter().zip(&se).map(|(b, s)| b + Z_975 * s).collect();
    Ok(NaiveFit {
        labels,
        coefficients: fit.coefficients,
        ci_low,
        ci_high,
        residual_variance: sigma2,
        n_used: rows.len(),
        exposure_index: 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_contrast_is_zero_effect() {
        let q = EffectQuery::contemporaneous(1.0, 1.0, Some(0));
        assert_eq!(q.exposure_high - q.exposure_low, 0.0);
    }

    #[test]
    fn naive_rejects_constant_exposure() {
        let t_len = 30;
        let ds = TimeSeriesDataset {
            y: (0..t_len).map(|t| (t as f64 * 0.37).sin()).collect(),
            y_missing: vec![false; t_len],
            a: vec![1.0; t_len],
            c: vec![(0..t_len).map(|t| (t as f64 * 0.53).cos()).collect()],
            w: vec![(0..t_len).map(|t| ((t % 3) as f64) - 1.0).collect()],
            latent_truth: None,
        };
        let err = fit_naive(&ds).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { .. }), "{err:?}");
    }
}
