//! Scaled forward-backward recursions.
//!
//! Forward values are normalized at every step (Rabiner scaling) so the
//! smoothed and pairwise probabilities come straight from the scaled
//! quantities; the log-likelihood is recovered from the stored log scaling
//! constants. Emission densities are additionally shifted by their per-step
//! maximum before exponentiation, which keeps the recursion alive when all
//! states are simultaneously unlikely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    emission_logdensity, transition_row, ModelSpec, ParameterSet, TimeSeriesDataset,
    TransitionRegressors,
};

/// Posterior quantities of one E-step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorWeights {
    /// Scaled forward values, `T × J`; each row sums to one.
    pub fwd: Vec<Vec<f64>>,
    /// Scaled backward values, `T × J`.
    pub bwd: Vec<Vec<f64>>,
    /// Smoothed state probabilities γ, `T × J`.
    pub gamma: Vec<Vec<f64>>,
    /// Pairwise probabilities ξ for the transition `t → t+1`, `(T−1) × J × J`.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// Log scaling constants; their sum is the log-likelihood.
    pub log_scaling: Vec<f64>,
    pub log_likelihood: f64,
}

impl PosteriorWeights {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.gamma.first().map_or(0, Vec::len)
    }

    /// Total smoothed mass per state over the whole series.
    pub fn state_occupancy(&self) -> Vec<f64> {
        let j = self.n_states();
        let mut occ = vec![0.0; j];
        for row in &self.gamma {
            for (o, g) in occ.iter_mut().zip(row) {
                *o += g;
            }
        }
        occ
    }
}

/// Runs the scaled forward-backward pass.
///
/// The latent chain covers all `T` days: the initial distribution governs day
/// 0 (which emits nothing, since it has no lagged regressors) and emissions
/// are evaluated from day 1 on with lagged outcome values taken from
/// `y_imputed`.
pub fn forward_backward(
    spec: &ModelSpec,
    params: &ParameterSet,
    dataset: &TimeSeriesDataset,
    y_imputed: &[f64],
) -> Result<PosteriorWeights> {
    let t_len = dataset.len();
    let n_states = spec.n_states;

    // emission log-densities (t >= 1) shifted by their per-step maximum
    let mut emis = vec![vec![0.0_f64; n_states]; t_len];
    let mut shift = vec![0.0_f64; t_len];
    for t in 1..t_len {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n_states {
            let d = emission_logdensity(spec, params, dataset, t, j, y_imputed)?;
            emis[t][j] = d;
            max = max.max(d);
        }
        if !max.is_finite() {
            return Err(Error::DegenerateEmission { t });
        }
        shift[t] = max;
        for j in 0..n_states {
            emis[t][j] = (emis[t][j] - max).exp();
        }
    }

    // transition matrices into each t >= 1
    let mut trans = Vec::with_capacity(t_len);
    trans.push(Vec::new());
    for t in 1..t_len {
        let regr = TransitionRegressors::at(dataset, t, y_imputed)?;
        let m: Vec<Vec<f64>> = (0..n_states)
            .map(|i| transition_row(params, i, &regr))
            .collect();
        trans.push(m);
    }

    // forward pass with per-step normalization
    let mut fwd = vec![vec![0.0_f64; n_states]; t_len];
    let mut log_scaling = vec![0.0_f64; t_len];
    let init_sum: f64 = params.initial.iter().sum();
    for j in 0..n_states {
        fwd[0][j] = params.initial[j] / init_sum;
    }
    log_scaling[0] = init_sum.ln();
    for t in 1..t_len {
        let mut norm = 0.0;
        for j in 0..n_states {
            let mut acc = 0.0;
            for i in 0..n_states {
                acc += fwd[t - 1][i] * trans[t][i][j];
            }
            let v = acc * emis[t][j];
            fwd[t][j] = v;
            norm += v;
        }
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmission { t });
        }
        for j in 0..n_states {
            fwd[t][j] /= norm;
        }
        log_scaling[t] = norm.ln() + shift[t];
    }
    let log_likelihood: f64 = log_scaling.iter().sum();

    // backward pass using the same scaling constants
    let mut bwd = vec![vec![0.0_f64; n_states]; t_len];
    bwd[t_len - 1].fill(1.0);
    for t in (0..t_len - 1).rev() {
        let scale = (log_scaling[t + 1] - shift[t + 1]).exp();
        for i in 0..n_states {
            let mut acc = 0.0;
            for j in 0..n_states {
                acc += trans[t + 1][i][j] * emis[t + 1][j] * bwd[t + 1][j];
            }
            bwd[t][i] = acc / scale;
        }
    }

    // smoothed and pairwise probabilities
    let mut gamma = vec![vec![0.0_f64; n_states]; t_len];
    for t in 0..t_len {
        let mut norm = 0.0;
        for j in 0..n_states {
            let g = fwd[t][j] * bwd[t][j];
            gamma[t][j] = g;
            norm += g;
        }
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmission { t });
        }
        for j in 0..n_states {
            gamma[t][j] /= norm;
        }
    }
    let mut xi = vec![vec![vec![0.0_f64; n_states]; n_states]; t_len - 1];
    for t in 0..t_len - 1 {
        let scale = (log_scaling[t + 1] - shift[t + 1]).exp();
        let mut norm = 0.0;
        for i in 0..n_states {
            for j in 0..n_states {
                let v = fwd[t][i] * trans[t + 1][i][j] * emis[t + 1][j] * bwd[t + 1][j] / scale;
                xi[t][i][j] = v;
                norm += v;
            }
        }
        // renormalize to absorb floating-point drift
        if norm > 0.0 {
            for i in 0..n_states {
                for j in 0..n_states {
                    xi[t][i][j] /= norm;
                }
            }
        }
    }

    Ok(PosteriorWeights {
        fwd,
        bwd,
        gamma,
        xi,
        log_scaling,
        log_likelihood,
    })
}
