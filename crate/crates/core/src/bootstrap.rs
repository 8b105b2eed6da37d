//! Inference by resampling: a latent-state-aware block bootstrap and a
//! parametric bootstrap, both producing percentile intervals for parameters
//! and requested effects.
//!
//! The block bootstrap splits the series wherever the decoded latent path
//! returns to its modal state, samples those blocks with length-proportional
//! weights until the resampled series reaches the original length, and refits
//! the model on each replicate. Labels are aligned back to the original fit
//! before recording, so state-specific quantities are comparable across
//! replicates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{align_labels, viterbi};
use crate::effects::{
    contemporaneous_effect, contemporaneous_marginal_effect, k_lagged_effect, EffectKind,
    EffectQuery,
};
use crate::em::{fit, forward_backward, FitConfig, FitResult, InitStrategy};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TimeSeriesDataset};
use crate::rng::{derive_seed, stream};
use rand::Rng;

/// Replicate-failure fraction beyond which intervals are flagged unreliable.
pub const UNRELIABLE_FAILURE_FRACTION: f64 = 0.2;

/// Contiguous blocks of a series with length-proportional sampling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSet {
    /// Inclusive `(start, end)` index ranges partitioning `0..T`.
    pub blocks: Vec<(usize, usize)>,
    /// Sampling probabilities, proportional to block length.
    pub weights: Vec<f64>,
}

/// Splits a decoded path at every return to its modal state.
///
/// The modal state is the most frequent one (ties break toward the lower
/// index); a cut falls immediately before each `t ≥ 1` where the path enters
/// the modal state from a different state.
pub fn split_blocks(path: &[usize]) -> BlockSet {
    assert!(!path.is_empty(), "empty path");
    let n_states = path.iter().max().map_or(1, |m| m + 1);
    let mut counts = vec![0usize; n_states];
    for &s in path {
        counts[s] += 1;
    }
    let modal = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(s, _)| s)
        .unwrap_or(0);

    let mut blocks = Vec::new();
    let mut start = 0usize;
    for t in 1..path.len() {
        if path[t] == modal && path[t - 1] != modal {
            blocks.push((start, t - 1));
            start = t;
        }
    }
    blocks.push((start, path.len() - 1));
    let total = path.len() as f64;
    let weights = blocks
        .iter()
        .map(|(s, e)| (e - s + 1) as f64 / total)
        .collect();
    BlockSet { blocks, weights }
}

/// Fixed-length fallback blocks of length `⌈√T⌉` (used when the split rule
/// produces fewer than two blocks).
fn fixed_blocks(t_len: usize) -> BlockSet {
    let len = (t_len as f64).sqrt().ceil() as usize;
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < t_len {
        let end = (start + len - 1).min(t_len - 1);
        blocks.push((start, end));
        start = end + 1;
    }
    let total = t_len as f64;
    let weights = blocks
        .iter()
        .map(|(s, e)| (e - s + 1) as f64 / total)
        .collect();
    BlockSet { blocks, weights }
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Iteration cap for the warm-started replicate refits.
    pub max_iterations: usize,
    pub loglik_tolerance: f64,
    pub param_tolerance: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            seed: 0,
            max_iterations: 200,
            loglik_tolerance: 1e-6,
            param_tolerance: 1e-5,
        }
    }
}

/// Percentile intervals over aligned replicate estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Quantity labels: every flattened parameter, then the requested effects.
    pub labels: Vec<String>,
    /// One row per converged replicate, aligned with `labels`.
    pub estimates: Vec<Vec<f64>>,
    /// 2.5% / 97.5% percentile bounds (order statistics) per quantity.
    pub ci: Vec<(f64, f64)>,
    pub replicates: usize,
    pub failures: usize,
    /// The split rule degenerated and fixed-length blocks were used.
    pub block_fallback: bool,
    /// More than 20% of replicates failed.
    pub unreliable: bool,
}

impl BootstrapResult {
    fn from_rows(
        labels: Vec<String>,
        rows: Vec<Option<Vec<f64>>>,
        block_fallback: bool,
    ) -> Result<Self> {
        let replicates = rows.len();
        let estimates: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
        let failures = replicates - estimates.len();
        if estimates.is_empty() {
            return Err(Error::FitFailure(format!(
                "all {replicates} bootstrap replicates failed"
            )));
        }
        let n_q = labels.len();
        let mut ci = Vec::with_capacity(n_q);
        for q in 0..n_q {
            let mut col: Vec<f64> = estimates.iter().map(|r| r[q]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            ci.push((percentile(&col, 0.025), percentile(&col, 0.975)));
        }
        let unreliable = (failures as f64) > UNRELIABLE_FAILURE_FRACTION * replicates as f64;
        if unreliable {
            log::warn!("{failures}/{replicates} bootstrap replicates failed; intervals unreliable");
        }
        Ok(BootstrapResult {
            labels,
            estimates,
            ci,
            replicates,
            failures,
            block_fallback,
            unreliable,
        })
    }

    pub fn ci_for(&self, label: &str) -> Option<(f64, f64)> {
        self.labels.iter().position(|l| l == label).map(|i| self.ci[i])
    }

    /// Interval of the state-conditional exposure effect coefficient.
    pub fn exposure_ci(&self, state: usize) -> Option<(f64, f64)> {
        self.ci_for(&format!("outcome.exposure[state {}]", state + 1))
            .or_else(|| self.ci_for("outcome.exposure"))
    }
}

/// Nearest-rank order statistic of a sorted sample.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

fn effect_label(q: &EffectQuery) -> String {
    let scope = match q.condition_state {
        Some(j) => format!("state {}", j + 1),
        None => "marginal".to_string(),
    };
    format!("effect:{}[{}]", q.kind.label(), scope)
}

/// Evaluates a parameter vector's requested effects on the original data.
fn evaluate_quantities(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    original: &FitResult,
    aligned: &crate::model::ParameterSet,
    queries: &[EffectQuery],
    seed: u64,
) -> Result<Vec<f64>> {
    let mut row = aligned.flatten();
    if !queries.is_empty() {
        let weights = forward_backward(spec, aligned, dataset, &original.y_imputed)?;
        let pseudo = FitResult {
            params: aligned.clone(),
            weights,
            y_imputed: original.y_imputed.clone(),
            ..original.clone()
        };
        for (qi, q) in queries.iter().enumerate() {
            let est = match (&q.kind, q.condition_state) {
                (EffectKind::Contemporaneous, Some(_)) => {
                    contemporaneous_effect(spec, &pseudo, dataset, q)?
                }
                (EffectKind::Contemporaneous, None) => {
                    contemporaneous_marginal_effect(spec, &pseudo, dataset, q)?
                }
                (EffectKind::Lagged { .. }, _) => {
                    k_lagged_effect(spec, &pseudo, dataset, q, derive_seed(seed, &[qi as u64]))?
                }
            };
            row.push(est.point);
        }
    }
    Ok(row)
}

fn quantity_labels(fit: &FitResult, queries: &[EffectQuery]) -> Vec<String> {
    let mut labels = fit.params.flat_labels();
    labels.extend(queries.iter().map(effect_label));
    labels
}

fn refit_config(fit: &FitResult, config: &BootstrapConfig, seed: u64) -> FitConfig {
    FitConfig {
        mode: fit.mode,
        imputations: fit.imputations.max(2),
        max_iterations: config.max_iterations,
        loglik_tolerance: config.loglik_tolerance,
        param_tolerance: config.param_tolerance,
        restarts: 1,
        seed,
        init: InitStrategy::Warm(Box::new(fit.params.clone())),
    }
}

/// Block bootstrap: resample latent-regime blocks, refit, align, score.
///
/// Replicate refits are warm-started from the original parameters, run in
/// parallel on derived seeds, and recorded in replicate order; non-converged
/// or failed replicates are dropped from the percentile computation and
/// counted.
pub fn block_bootstrap(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    original: &FitResult,
    config: &BootstrapConfig,
    queries: &[EffectQuery],
) -> Result<BootstrapResult> {
    if config.replicates == 0 {
        return Err(Error::InvalidConfig("need at least one bootstrap replicate".into()));
    }
    let path = viterbi(spec, &original.params, dataset, &original.y_imputed)?;
    let mut blocks = split_blocks(&path.states);
    let block_fallback = blocks.blocks.len() < 2;
    if block_fallback {
        log::warn!("latent path yields a single block; falling back to fixed-length blocks");
        blocks = fixed_blocks(dataset.len());
    }

    let labels = quantity_labels(original, queries);
    let t_len = dataset.len();
    let rows: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let rep_seed = derive_seed(config.seed, &[b as u64, 23]);
            let (resampled, reference) =
                resample_blocks(dataset, &path.states, &blocks, t_len, rep_seed);
            let rconfig = refit_config(original, config, derive_seed(rep_seed, &[1]));
            let refit = match fit(spec, &resampled, &rconfig) {
                Ok(r) if r.converged => r,
                _ => return None,
            };
            let rep_path = viterbi(spec, &refit.params, &resampled, &refit.y_imputed).ok()?;
            let alignment = align_labels(&rep_path.states, &reference, spec.n_states).ok()?;
            let aligned = refit.params.permute_states(&alignment.permutation);
            evaluate_quantities(spec, dataset, original, &aligned, queries, derive_seed(rep_seed, &[2]))
                .ok()
        })
        .collect();

    BootstrapResult::from_rows(labels, rows, block_fallback)
}

/// Samples blocks with replacement (probability proportional to length) until
/// the concatenation reaches the original length, then truncates. Blocks
/// carry their outcome masks; the original fit's decoded labels restricted to
/// the same blocks serve as the alignment reference.
fn resample_blocks(
    dataset: &TimeSeriesDataset,
    original_path: &[usize],
    blocks: &BlockSet,
    t_len: usize,
    seed: u64,
) -> (TimeSeriesDataset, Vec<usize>) {
    let mut rng = stream(seed, &[]);
    let mut indices = Vec::with_capacity(t_len);
    while indices.len() < t_len {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut chosen = blocks.blocks.len() - 1;
        for (k, &w) in blocks.weights.iter().enumerate() {
            cum += w;
            if u < cum {
                chosen = k;
                break;
            }
        }
        let (s, e) = blocks.blocks[chosen];
        indices.extend(s..=e);
    }
    indices.truncate(t_len);

    let gather = |col: &Vec<f64>| -> Vec<f64> { indices.iter().map(|&i| col[i]).collect() };
    let resampled = TimeSeriesDataset {
        y: gather(&dataset.y),
        y_missing: indices.iter().map(|&i| dataset.y_missing[i]).collect(),
        a: gather(&dataset.a),
        c: dataset.c.iter().map(gather).collect(),
        w: dataset.w.iter().map(gather).collect(),
        latent_truth: None,
    };
    let reference = indices.iter().map(|&i| original_path[i]).collect();
    (resampled, reference)
}

/// Parametric bootstrap: simulate a synthetic series of the observed length
/// from the fitted parameters (holding the external covariates and the first
/// day fixed, and reusing the original missingness pattern), refit, align to
/// the drawn latent truth, and score percentile intervals.
pub fn parametric_bootstrap(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    original: &FitResult,
    config: &BootstrapConfig,
    queries: &[EffectQuery],
) -> Result<BootstrapResult> {
    if config.replicates == 0 {
        return Err(Error::InvalidConfig("need at least one bootstrap replicate".into()));
    }
    let labels = quantity_labels(original, queries);
    let first = crate::simulate::FirstDay {
        y: original.y_imputed[0],
        a: dataset.a[0],
        c: dataset.c_at(0),
    };

    let rows: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let rep_seed = derive_seed(config.seed, &[b as u64, 29]);
            let mut synthetic =
                crate::simulate::simulate_chain(spec, &original.params, &dataset.w, Some(&first), rep_seed)
                    .ok()?;
            let truth = synthetic.latent_truth.take()?;
            synthetic.latent_truth = None;
            for t in 0..synthetic.len() {
                if dataset.y_missing[t] {
                    synthetic.y_missing[t] = true;
                    synthetic.y[t] = 0.0;
                }
            }
            let rconfig = refit_config(original, config, derive_seed(rep_seed, &[1]));
            let refit = match fit(spec, &synthetic, &rconfig) {
                Ok(r) if r.converged => r,
                _ => return None,
            };
            let rep_path = viterbi(spec, &refit.params, &synthetic, &refit.y_imputed).ok()?;
            let alignment = align_labels(&rep_path.states, &truth, spec.n_states).ok()?;
            let aligned = refit.params.permute_states(&alignment.permutation);
            evaluate_quantities(spec, dataset, original, &aligned, queries, derive_seed(rep_seed, &[2]))
                .ok()
        })
        .collect();

    BootstrapResult::from_rows(labels, rows, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_follows_the_return_rule() {
        // modal state 0; returns to it at t=4 and t=7 (0-based)
        let path = vec![0, 0, 1, 1, 0, 0, 1, 0];
        let b = split_blocks(&path);
        assert_eq!(b.blocks, vec![(0, 3), (4, 6), (7, 7)]);
        let expect: Vec<f64> = vec![4.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0];
        assert_eq!(b.weights, expect);
    }

    #[test]
    fn constant_path_is_one_block() {
        let b = split_blocks(&[1; 12]);
        assert_eq!(b.blocks, vec![(0, 11)]);
        assert_eq!(b.weights, vec![1.0]);
    }

    #[test]
    fn alternating_path_cuts_every_return() {
        // modal state 0 (ties break low); path 0,1,0,1,0,1 returns at t=2, 4
        let path = vec![0, 1, 0, 1, 0, 1];
        let b = split_blocks(&path);
        assert_eq!(b.blocks, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn blocks_partition_the_series() {
        let path = vec![2, 2, 0, 1, 0, 0, 2, 0, 1, 1, 0];
        let b = split_blocks(&path);
        let mut covered = Vec::new();
        for (s, e) in &b.blocks {
            covered.extend(*s..=*e);
        }
        assert_eq!(covered, (0..path.len()).collect::<Vec<_>>());
        let total: f64 = b.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_blocks_cover_everything() {
        let b = fixed_blocks(10);
        let mut covered = Vec::new();
        for (s, e) in &b.blocks {
            covered.extend(*s..=*e);
        }
        assert_eq!(covered, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn percentile_picks_order_statistics() {
        let v: Vec<f64> = (1..=200).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.025), 5.0);
        assert_eq!(percentile(&v, 0.975), 195.0);
        assert_eq!(percentile(&[1.0], 0.025), 1.0);
    }
}
