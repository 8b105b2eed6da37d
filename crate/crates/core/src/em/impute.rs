//! Outcome and latent-state imputation, and Rubin pooling.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::forward_backward::PosteriorWeights;
use crate::error::{Error, Result};
use crate::glm::GlmFamily;
use crate::model::{
    conditional_mean_y, ModelSpec, OutcomeRegressors, ParameterSet,
    TimeSeriesDataset,
};
use crate::rng::stream;

/// Posterior-mixture conditional mean of the outcome at time `t ≥ 1`, with
/// the lagged outcome taken from `y_current`.
fn mixture_mean(
    spec: &ModelSpec,
    params: &ParameterSet,
    weights: &PosteriorWeights,
    dataset: &TimeSeriesDataset,
    t: usize,
    y_current: &[f64],
) -> f64 {
    let c_now = dataset.c_at(t);
    let w_now = dataset.w_at(t);
    let regr = OutcomeRegressors {
        y_lag: y_current[t - 1],
        exposure: dataset.a[t],
        c: &c_now,
        w: &w_now,
        exposure_lag: dataset.a[t - 1],
    };
    (0..spec.n_states)
        .map(|j| weights.gamma[t][j] * conditional_mean_y(spec, params, j, &regr))
        .sum()
}

/// Deterministic single imputation: each missing outcome is replaced, in
/// increasing time order, by its smoothed-mixture conditional mean; lagged
/// outcome regressors use the already-imputed values. Observed entries and a
/// missing first day (which has no lagged regressors) pass through from
/// `y_current`.
pub fn impute_y_single(
    spec: &ModelSpec,
    params: &ParameterSet,
    weights: &PosteriorWeights,
    dataset: &TimeSeriesDataset,
    y_current: &[f64],
) -> Vec<f64> {
    let mut out: Vec<f64> = dataset
        .y
        .iter()
        .zip(&dataset.y_missing)
        .zip(y_current)
        .map(|((&y, &miss), &cur)| if miss { cur } else { y })
        .collect();
    for t in 1..dataset.len() {
        if dataset.y_missing[t] {
            out[t] = mixture_mean(spec, params, weights, dataset, t, &out);
        }
    }
    out
}

/// Stochastic imputation: missing outcomes are drawn from the outcome family
/// around the smoothed-mixture mean, recursively in time.
pub fn impute_y_sample(
    spec: &ModelSpec,
    params: &ParameterSet,
    weights: &PosteriorWeights,
    dataset: &TimeSeriesDataset,
    y_current: &[f64],
    seed: u64,
) -> Vec<f64> {
    let mut rng = stream(seed, &[]);
    let mut out: Vec<f64> = dataset
        .y
        .iter()
        .zip(&dataset.y_missing)
        .zip(y_current)
        .map(|((&y, &miss), &cur)| if miss { cur } else { y })
        .collect();
    let sd = params.outcome.dispersion.max(0.0).sqrt();
    for t in 1..dataset.len() {
        if !dataset.y_missing[t] {
            continue;
        }
        let mean = mixture_mean(spec, params, weights, dataset, t, &out);
        out[t] = match spec.family_y {
            GlmFamily::Gaussian => {
                if sd > 0.0 {
                    Normal::new(mean, sd).expect("finite sd").sample(&mut rng)
                } else {
                    mean
                }
            }
            GlmFamily::Bernoulli => {
                let p = mean.clamp(0.0, 1.0);
                (rng.random::<f64>() < p) as usize as f64
            }
            _ => unreachable!("outcome family validated"),
        };
    }
    out
}

/// Draws a latent path from the smoothed posterior: the first day's state
/// from γ(0), then each state from `ξ_{i·}(t−1) / γ_i(t−1)` given the drawn
/// predecessor `i`. A vanished conditioning row falls back to the marginal γ
/// row for that day.
pub fn impute_l_sample(weights: &PosteriorWeights, seed: u64) -> Vec<usize> {
    let t_len = weights.len();
    let n_states = weights.n_states();
    let mut rng = stream(seed, &[]);
    let mut path = Vec::with_capacity(t_len);
    path.push(sample_categorical(&mut rng, &weights.gamma[0]));
    for t in 1..t_len {
        let prev = path[t - 1];
        let row = &weights.xi[t - 1][prev];
        let total: f64 = row.iter().sum();
        let state = if total > 0.0 {
            let probs: Vec<f64> = row.iter().map(|&v| v / total).collect();
            sample_categorical(&mut rng, &probs)
        } else {
            log::warn!("latent-state draw at t={t}: empty conditional row, using marginal");
            sample_categorical(&mut rng, &weights.gamma[t])
        };
        debug_assert!(state < n_states);
        path.push(state);
    }
    path
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
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

/// Rubin's rules: pooled point estimates and total variances across `M ≥ 2`
/// imputations.
///
/// Total variance is the mean within-imputation variance plus
/// `(1 + 1/M)` times the between-imputation variance.
pub fn pool_rubin(estimates: &[Vec<f64>], variances: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = estimates.len();
    if m < 2 || variances.len() != m {
        return Err(Error::InsufficientImputations { got: m });
    }
    let p = estimates[0].len();
    let mut pooled = vec![0.0; p];
    for est in estimates {
        for (s, &v) in pooled.iter_mut().zip(est) {
            *s += v;
        }
    }
    for s in pooled.iter_mut() {
        *s /= m as f64;
    }
    let mut total = vec![0.0; p];
    for k in 0..p {
        let within: f64 = variances.iter().map(|v| v[k]).sum::<f64>() / m as f64;
        let between: f64 = estimates
            .iter()
            .map(|e| (e[k] - pooled[k]).powi(2))
            .sum::<f64>()
            / (m as f64 - 1.0);
        total[k] = within + (1.0 + 1.0 / m as f64) * between;
    }
    Ok((pooled, total))
}

/// Pooled-imputation summary attached to multiple-imputation fits.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RubinSummary {
    pub labels: Vec<String>,
    pub pooled: Vec<f64>,
    pub within_variance: Vec<f64>,
    pub between_variance: Vec<f64>,
    pub total_variance: Vec<f64>,
}

impl RubinSummary {
    pub fn from_imputations(
        labels: Vec<String>,
        estimates: &[Vec<f64>],
        variances: &[Vec<f64>],
    ) -> Result<Self> {
        let (pooled, total) = pool_rubin(estimates, variances)?;
        let m = estimates.len() as f64;
        let p = pooled.len();
        let within: Vec<f64> = (0..p)
            .map(|k| variances.iter().map(|v| v[k]).sum::<f64>() / m)
            .collect();
        let between: Vec<f64> = (0..p)
            .map(|k| {
                estimates.iter().map(|e| (e[k] - pooled[k]).powi(2)).sum::<f64>() / (m - 1.0)
            })
            .collect();
        Ok(RubinSummary {
            labels,
            pooled,
            within_variance: within,
            between_variance: between,
            total_variance: total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rubin_hand_example() {
        let est = vec![vec![1.0], vec![2.0], vec![3.0]];
        let var = vec![vec![1.0], vec![1.0], vec![1.0]];
        let (pooled, total) = pool_rubin(&est, &var).unwrap();
        assert_relative_eq!(pooled[0], 2.0);
        assert_relative_eq!(total[0], 1.0 + (1.0 + 1.0 / 3.0) * 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rubin_identical_estimates_have_zero_between() {
        let est = vec![vec![1.5, -2.0]; 4];
        let var = vec![vec![0.2, 0.3]; 4];
        let (pooled, total) = pool_rubin(&est, &var).unwrap();
        assert_eq!(pooled, vec![1.5, -2.0]);
        assert_relative_eq!(total[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(total[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn rubin_is_permutation_invariant() {
        let est = vec![vec![1.0], vec![2.5], vec![0.5]];
        let var = vec![vec![0.5], vec![0.7], vec![0.2]];
        let (p1, t1) = pool_rubin(&est, &var).unwrap();
        let est2 = vec![est[2].clone(), est[0].clone(), est[1].clone()];
        let var2 = vec![var[2].clone(), var[0].clone(), var[1].clone()];
        let (p2, t2) = pool_rubin(&est2, &var2).unwrap();
        assert_relative_eq!(p1[0], p2[0]);
        assert_relative_eq!(t1[0], t2[0], epsilon = 1e-12);
    }

    #[test]
    fn rubin_rejects_single_imputation() {
        assert!(matches!(
            pool_rubin(&[vec![1.0]], &[vec![1.0]]),
            Err(Error::InsufficientImputations { got: 1 })
        ));
    }
}
