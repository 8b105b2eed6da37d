//! Local-level state-space smoothing for missing-value imputation.
//!
//! Fits `y_t = μ_t + ε_t`, `μ_{t+1} = μ_t + η_t` by maximum likelihood on the
//! observed entries (profiling the observation variance out and searching the
//! signal-to-noise ratio), then fills missing entries with the smoothed level.

use crate::error::Result;

const DIFFUSE_PRIOR: f64 = 1e7;
const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Fitted local-level model and its smoothed path.
#[derive(Debug, Clone)]
pub struct LocalLevelFit {
    /// Level-noise to observation-noise variance ratio.
    pub ratio: f64,
    /// Maximum-likelihood observation variance.
    pub obs_variance: f64,
    /// Smoothed level at every time point.
    pub smoothed: Vec<f64>,
    /// Set when fewer than three observations forced a mean fill.
    pub mean_fallback: bool,
}

/// Completes a series by Kalman smoothing; observed entries pass through.
///
/// With fewer than three observed points the series is filled with the
/// observed mean instead.
pub fn kalman_smooth_impute(series: &[f64], missing: &[bool]) -> Result<Vec<f64>> {
    let fit = fit_local_level(series, missing)?;
    Ok(fill(series, missing, &fit.smoothed))
}

/// Maximum-likelihood local-level fit on the observed entries.
pub fn fit_local_level(series: &[f64], missing: &[bool]) -> Result<LocalLevelFit> {
    let observed: Vec<f64> = series
        .iter()
        .zip(missing)
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .collect();
    if observed.len() < 3 {
        log::warn!(
            "kalman imputation: only {} observed points; falling back to the observed mean",
            observed.len()
        );
        let mean = if observed.is_empty() {
            0.0
        } else {
            observed.iter().sum::<f64>() / observed.len() as f64
        };
        return Ok(LocalLevelFit {
            ratio: 0.0,
            obs_variance: 0.0,
            smoothed: vec![mean; series.len()],
            mean_fallback: true,
        });
    }

    let m0 = observed[0];
    // profile likelihood over the variance ratio on a log grid, then refine
    let grid: Vec<f64> = (0..46).map(|k| (-6.0 + 9.0 * k as f64 / 45.0).exp()).collect();
    let mut best_k = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for (k, &q) in grid.iter().enumerate() {
        let (ll, _) = profile_loglik(series, missing, q, m0);
        if ll > best_ll {
            best_ll = ll;
            best_k = k;
        }
    }
    let lo = grid[best_k.saturating_sub(1)].ln();
    let hi = grid[(best_k + 1).min(grid.len() - 1)].ln();
    let mut a = lo;
    let mut b = hi;
    let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = profile_loglik(series, missing, x1.exp(), m0).0;
    let mut f2 = profile_loglik(series, missing, x2.exp(), m0).0;
    for _ in 0..60 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = profile_loglik(series, missing, x2.exp(), m0).0;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = profile_loglik(series, missing, x1.exp(), m0).0;
        }
    }
    let ratio = (0.5 * (a + b)).exp();
    let (_, obs_variance) = profile_loglik(series, missing, ratio, m0);
    let smoothed = smooth_with_params(series, missing, ratio, m0, DIFFUSE_PRIOR);
    Ok(LocalLevelFit {
        ratio,
        obs_variance,
        smoothed,
        mean_fallback: false,
    })
}

fn fill(series: &[f64], missing: &[bool], smoothed: &[f64]) -> Vec<f64> {
    series
        .iter()
        .zip(missing)
        .zip(smoothed)
        .map(|((&y, &m), &s)| if m { s } else { y })
        .collect()
}

/// Concentrated log-likelihood of the ratio `q` (observation variance
/// profiled out) and the implied variance estimate.
fn profile_loglik(series: &[f64], missing: &[bool], q: f64, m0: f64) -> (f64, f64) {
    let mut m = m0;
    let mut p = DIFFUSE_PRIOR;
    let mut n = 0usize;
    let mut sum_ln_f = 0.0;
    let mut sum_v2_f = 0.0;
    for (t, (&y, &miss)) in series.iter().zip(missing).enumerate() {
        if t > 0 {
            p += q;
        }
        if miss {
            continue;
        }
        let f = p + 1.0;
        let v = y - m;
        sum_ln_f += f.ln();
        sum_v2_f += v * v / f;
        let gain = p / f;
        m += gain * v;
        p *= 1.0 - gain;
        n += 1;
    }
    let sigma2 = (sum_v2_f / n as f64).max(1e-300);
    let ll = -0.5 * (n as f64 * (LN_2PI + sigma2.ln() + 1.0) + sum_ln_f);
    (ll, sigma2)
}

/// Filter plus fixed-interval smoother at fixed variance ratio and prior.
///
/// Works in relative units (observation variance 1); the smoothed mean is
/// invariant to the overall variance scale.
pub fn smooth_with_params(
    series: &[f64],
    missing: &[bool],
    ratio: f64,
    prior_mean: f64,
    prior_variance: f64,
) -> Vec<f64> {
    let t_len = series.len();
    let mut m_pred = vec![0.0; t_len];
    let mut p_pred = vec![0.0; t_len];
    let mut m_filt = vec![0.0; t_len];
    let mut p_filt = vec![0.0; t_len];
    let mut m = prior_mean;
    let mut p = prior_variance;
    for t in 0..t_len {
        if t > 0 {
            p += ratio;
        }
        m_pred[t] = m;
        p_pred[t] = p;
        if !missing[t] {
            let f = p + 1.0;
            let gain = p / f;
            m += gain * (series[t] - m);
            p *= 1.0 - gain;
        }
        m_filt[t] = m;
        p_filt[t] = p;
    }
    let mut smoothed = vec![0.0; t_len];
    smoothed[t_len - 1] = m_filt[t_len - 1];
    for t in (0..t_len - 1).rev() {
        if p_pred[t + 1] > 0.0 {
            let j = p_filt[t] / p_pred[t + 1];
            smoothed[t] = m_filt[t] + j * (smoothed[t + 1] - m_pred[t + 1]);
        } else {
            smoothed[t] = m_filt[t];
        }
    }
    smoothed
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn no_missing_passes_through() {
        let y = vec![1.0, 2.0, 1.5, 3.0];
        let out = kalman_smooth_impute(&y, &[false; 4]).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn constant_series_fills_gap_with_constant() {
        let y = vec![2.0, 2.0, 0.0, 0.0, 2.0, 2.0];
        let miss = [false, false, true, true, false, false];
        let out = kalman_smooth_impute(&y, &miss).unwrap();
        for t in 2..4 {
            assert_relative_eq!(out[t], 2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn too_few_observations_fall_back_to_mean() {
        let y = vec![1.0, 0.0, 0.0, 3.0];
        let miss = [false, true, true, false];
        let fit = fit_local_level(&y, &miss).unwrap();
        assert!(fit.mean_fallback);
        assert_relative_eq!(fit.smoothed[1], 2.0);
    }

    #[test]
    fn trend_gap_interpolates_between_neighbors() {
        // linear trend with an interior gap: smoothed fill must land between
        // the neighboring observed values
        let y: Vec<f64> = (0..20).map(|t| t as f64 * 0.5).collect();
        let mut miss = vec![false; 20];
        miss[10] = true;
        let out = kalman_smooth_impute(&y, &miss).unwrap();
        assert!(out[10] > y[9] && out[10] < y[11], "fill {} outside ({}, {})", out[10], y[9], y[11]);
    }
}
