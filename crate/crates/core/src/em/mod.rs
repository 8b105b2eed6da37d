//! Expectation-maximization estimation with missing-outcome handling.
//!
//! Three imputation variants share one EM loop:
//!
//! * `single` — the missing outcomes are replaced by their smoothed-mixture
//!   conditional means after every M-step;
//! * `multiple-y` — the outcomes are stochastically completed `M` times per
//!   iteration, one weighted M-step runs per completion, and the parameter
//!   estimates are pooled by Rubin's rules;
//! * `multiple-y-and-l` — both the outcomes and the latent path are drawn per
//!   completion and the regressions run unweighted on the labeled data.
//!
//! Initialization splits the Kalman-completed outcome into state quantile
//! bins; seeded random restarts perturb that assignment and the best final
//! pseudo-log-likelihood wins.

mod forward_backward;
mod impute;
mod kalman;
mod mstep;

pub use forward_backward::{forward_backward, PosteriorWeights};
pub use impute::{impute_l_sample, impute_y_sample, impute_y_single, pool_rubin, RubinSummary};
pub use kalman::{fit_local_level, kalman_smooth_impute, smooth_with_params, LocalLevelFit};
pub use mstep::{m_step, m_step_hard, MStepOutput, EMPTY_STATE_FRACTION};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParameterSet, TimeSeriesDataset};
use crate::rng::{derive_seed, stream};

/// How missing outcomes (and optionally latent states) are imputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationMode {
    Single,
    MultipleY,
    MultipleYAndL,
}

impl ImputationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImputationMode::Single => "single",
            ImputationMode::MultipleY => "multiple-y",
            ImputationMode::MultipleYAndL => "multiple-y-and-l",
        }
    }
}

impl std::str::FromStr for ImputationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(ImputationMode::Single),
            "multiple-y" => Ok(ImputationMode::MultipleY),
            "multiple-y-and-l" => Ok(ImputationMode::MultipleYAndL),
            other => Err(Error::InvalidConfig(format!("unknown imputation mode `{other}`"))),
        }
    }
}

/// Parameter initialization strategy.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// Quantile-split of the Kalman-completed outcome, with seeded perturbed
    /// restarts.
    QuantileSplit,
    /// Start from the given parameters (bootstrap refits); restarts are
    /// skipped.
    Warm(Box<ParameterSet>),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub mode: ImputationMode,
    /// Imputation count `M` for the multiple-imputation modes.
    pub imputations: usize,
    pub max_iterations: usize,
    /// Relative pseudo-log-likelihood change declaring convergence.
    pub loglik_tolerance: f64,
    /// Relative parameter change declaring convergence (secondary criterion;
    /// the imputation modes are not monotone in the pseudo-log-likelihood).
    pub param_tolerance: f64,
    /// Number of initializations tried (first is the plain quantile split).
    pub restarts: usize,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: ImputationMode::Single,
            imputations: 10,
            max_iterations: 500,
            loglik_tolerance: 1e-6,
            param_tolerance: 1e-5,
            restarts: 3,
            seed: 0,
            init: InitStrategy::QuantileSplit,
        }
    }
}

impl FitConfig {
    pub fn with_mode(mode: ImputationMode, seed: u64) -> Self {
        FitConfig { mode, seed, ..FitConfig::default() }
    }
}

/// A converged (or capped) fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ParameterSet,
    pub weights: PosteriorWeights,
    /// Imputation-completed outcome series (equals the observed outcome
    /// wherever it was observed).
    pub y_imputed: Vec<f64>,
    pub mode: ImputationMode,
    pub imputations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Pseudo-log-likelihood at the start of each iteration plus the final
    /// value.
    pub loglik_trace: Vec<f64>,
    /// Rubin pooling summary of the outcome coefficients (multiple modes).
    pub rubin: Option<RubinSummary>,
    /// Any sub-model hit the separation guard at some iteration.
    pub separation: bool,
    /// Which restart produced this fit.
    pub restart: usize,
}

/// Fits the model by EM.
///
/// Collapse of a latent state (vanishing posterior mass) aborts the current
/// run and triggers a perturbed restart; if every restart fails the fit
/// fails. Non-convergence within the iteration cap is not an error: the
/// result is returned with `converged = false`.
pub fn fit(spec: &ModelSpec, dataset: &TimeSeriesDataset, config: &FitConfig) -> Result<FitResult> {
    spec.validate()?;
    dataset.validate()?;
    if spec.n_states < 2 {
        return Err(Error::InvalidConfig("fitting needs at least two latent states".into()));
    }
    if config.mode != ImputationMode::Single && config.imputations < 2 {
        return Err(Error::InsufficientImputations { got: config.imputations });
    }

    let y0 = kalman_smooth_impute(&dataset.y, &dataset.y_missing)?;

    if let InitStrategy::Warm(params) = &config.init {
        params.validate(spec, dataset.n_internal(), dataset.n_external())?;
        return run_em(spec, dataset, config, (**params).clone(), &y0, 0);
    }

    let mut best: Option<FitResult> = None;
    let mut last_err: Option<Error> = None;
    for restart in 0..config.restarts.max(1) {
        let attempt = quantile_init(spec, dataset, &y0, config.seed, restart)
            .and_then(|init| run_em(spec, dataset, config, init, &y0, restart));
        match attempt {
            Ok(run) => {
                let ll = run.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY);
                let is_better = best
                    .as_ref()
                    .map_or(true, |b| ll > b.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY));
                if is_better {
                    best = Some(run);
                }
            }
            Err(e) => {
                log::warn!("restart {restart} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| {
        Error::FitFailure(format!(
            "all {} restarts failed; last error: {}",
            config.restarts.max(1),
            last_err.map_or_else(|| "none".into(), |e| e.to_string())
        ))
    })
}

/// Initial parameters from a quantile split of the completed outcome.
///
/// Restart 0 uses the plain split; later restarts flip a seeded random subset
/// of the assignments.
fn quantile_init(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    y0: &[f64],
    seed: u64,
    restart: usize,
) -> Result<ParameterSet> {
    let t_len = dataset.len();
    let n_states = spec.n_states;
    let mut order: Vec<usize> = (0..t_len).collect();
    order.sort_by(|&a, &b| y0[a].partial_cmp(&y0[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut labels = vec![0usize; t_len];
    for (rank, &t) in order.iter().enumerate() {
        labels[t] = (rank * n_states / t_len).min(n_states - 1);
    }
    if restart > 0 {
        let mut rng = stream(seed, &[restart as u64, 17]);
        for l in labels.iter_mut() {
            if rng.random::<f64>() < 0.2 {
                *l = rng.random_range(0..n_states);
            }
        }
    }
    let out = m_step_hard(spec, dataset, &labels, y0, None)?;
    let mut params = out.params;
    // a one-hot start distribution would pin the first day's state
    params.initial = vec![1.0 / n_states as f64; n_states];
    Ok(params)
}

fn check_collapse(weights: &PosteriorWeights, t_len: usize) -> Result<()> {
    let thr = EMPTY_STATE_FRACTION * t_len as f64;
    for (j, occ) in weights.state_occupancy().iter().enumerate() {
        if *occ < thr {
            return Err(Error::FitFailure(format!(
                "latent state {} collapsed (posterior mass {occ:.3e})",
                j + 1
            )));
        }
    }
    Ok(())
}

fn run_em(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    config: &FitConfig,
    init: ParameterSet,
    y0: &[f64],
    restart: usize,
) -> Result<FitResult> {
    let t_len = dataset.len();
    let has_missing = dataset.n_missing() > 0;
    let run_seed = derive_seed(config.seed, &[restart as u64, 1]);

    let mut params = init;
    let mut y_imp = y0.to_vec();
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut prev_flat = params.flatten();
    let mut converged = false;
    let mut iterations = 0;
    let mut rubin = None;
    let mut separation = false;

    for iter in 0..config.max_iterations {
        iterations = iter + 1;
        let weights = forward_backward(spec, &params, dataset, &y_imp)?;
        check_collapse(&weights, t_len)?;
        let ll = weights.log_likelihood;
        trace.push(ll);

        let new_params = match config.mode {
            ImputationMode::Single => {
                let out = m_step(spec, dataset, &weights, &y_imp, Some(&params))?;
                separation |= out.separation;
                out.params
            }
            ImputationMode::MultipleY | ImputationMode::MultipleYAndL => {
                let draw_latent = config.mode == ImputationMode::MultipleYAndL;
                let outputs: Vec<MStepOutput> = (0..config.imputations)
                    .into_par_iter()
                    .map(|m| -> Result<MStepOutput> {
                        let seed_y = derive_seed(run_seed, &[iter as u64, m as u64, 2]);
                        let y_m = impute_y_sample(spec, &params, &weights, dataset, &y_imp, seed_y);
                        let w_m = forward_backward(spec, &params, dataset, &y_m)?;
                        if draw_latent {
                            let seed_l = derive_seed(run_seed, &[iter as u64, m as u64, 3]);
                            let l_m = impute_l_sample(&w_m, seed_l);
                            m_step_hard(spec, dataset, &l_m, &y_m, Some(&params))
                        } else {
                            m_step(spec, dataset, &w_m, &y_m, Some(&params))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                separation |= outputs.iter().any(|o| o.separation);
                let sets: Vec<ParameterSet> = outputs.iter().map(|o| o.params.clone()).collect();
                let pooled = ParameterSet::pool_mean(&sets);
                // pooling summary only when every completion saw the same design
                let labels = &outputs[0].outcome_labels;
                if outputs.iter().all(|o| &o.outcome_labels == labels) {
                    let est: Vec<Vec<f64>> =
                        outputs.iter().map(|o| o.outcome_estimates.clone()).collect();
                    let var: Vec<Vec<f64>> =
                        outputs.iter().map(|o| o.outcome_variances.clone()).collect();
                    rubin = RubinSummary::from_imputations(labels.clone(), &est, &var).ok();
                }
                pooled
            }
        };

        let new_flat = new_params.flatten();
        let rel_param = new_flat
            .iter()
            .zip(&prev_flat)
            .map(|(n, o)| (n - o).abs() / (1.0 + o.abs()))
            .fold(0.0_f64, f64::max);
        let rel_ll = if prev_ll.is_finite() {
            (ll - prev_ll).abs() / prev_ll.abs().max(1.0)
        } else {
            f64::INFINITY
        };

        params = new_params;
        prev_flat = new_flat;
        prev_ll = ll;
        if has_missing {
            y_imp = impute_y_single(spec, &params, &weights, dataset, &y_imp);
        }
        if iter > 0 && (rel_ll < config.loglik_tolerance || rel_param < config.param_tolerance) {
            converged = true;
            break;
        }
    }

    // make the returned triple (params, y_imputed, weights) self-consistent:
    // final imputation under the final parameters, then one E-step on it
    let weights = forward_backward(spec, &params, dataset, &y_imp)?;
    if has_missing {
        y_imp = impute_y_single(spec, &params, &weights, dataset, &y_imp);
    }
    let weights = forward_backward(spec, &params, dataset, &y_imp)?;
    check_collapse(&weights, t_len)?;
    trace.push(weights.log_likelihood);

    Ok(FitResult {
        params,
        weights,
        y_imputed: y_imp,
        mode: config.mode,
        imputations: if config.mode == ImputationMode::Single { 1 } else { config.imputations },
        iterations,
        converged,
        loglik_trace: trace,
        rubin,
        separation,
        restart,
    })
}
