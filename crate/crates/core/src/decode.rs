//! Most-likely state sequence recovery and label alignment.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::model::{
    emission_logdensity, transition_row, ModelSpec, ParameterSet, TimeSeriesDataset,
    TransitionRegressors,
};

/// A decoded latent path (0-based states) with its joint log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub states: Vec<usize>,
    pub log_probability: f64,
}

/// Log-space Viterbi decoding under time-varying transitions and joint
/// emissions; ties break toward the lower state index.
///
/// The path covers all `T` days: day 0 contributes only its initial
/// probability (it emits nothing), matching the forward-backward convention.
pub fn viterbi(
    spec: &ModelSpec,
    params: &ParameterSet,
    dataset: &TimeSeriesDataset,
    y_imputed: &[f64],
) -> Result<StatePath> {
    let t_len = dataset.len();
    let n_states = spec.n_states;
    let mut delta: Vec<f64> = params.initial.iter().map(|p| p.ln()).collect();
    let mut back = vec![vec![0usize; n_states]; t_len];

    for t in 1..t_len {
        let regr = TransitionRegressors::at(dataset, t, y_imputed)?;
        let mut next = vec![f64::NEG_INFINITY; n_states];
        let log_trans: Vec<Vec<f64>> = (0..n_states)
            .map(|i| transition_row(params, i, &regr).iter().map(|p| p.ln()).collect())
            .collect();
        for j in 0..n_states {
            let emit = emission_logdensity(spec, params, dataset, t, j, y_imputed)?;
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..n_states {
                let v = delta[i] + log_trans[i][j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + emit;
            back[t][j] = arg;
        }
        delta = next;
        if delta.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::DegenerateEmission { t });
        }
    }

    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for (j, &v) in delta.iter().enumerate() {
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut states = vec![0usize; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t][states[t]];
    }
    Ok(StatePath {
        states,
        log_probability: best,
    })
}

/// Joint log-probability of an arbitrary path (used by tests and sampling
/// comparisons).
pub fn path_log_probability(
    spec: &ModelSpec,
    params: &ParameterSet,
    dataset: &TimeSeriesDataset,
    y_imputed: &[f64],
    states: &[usize],
) -> Result<f64> {
    let t_len = dataset.len();
    let mut lp = params.initial[states[0]].ln();
    for t in 1..t_len {
        let regr = TransitionRegressors::at(dataset, t, y_imputed)?;
        let row = transition_row(params, states[t - 1], &regr);
        lp += row[states[t]].ln();
        lp += emission_logdensity(spec, params, dataset, t, states[t], y_imputed)?;
    }
    Ok(lp)
}

/// Result of matching predicted labels to a reference sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAlignment {
    /// `permutation[new] = old`: relabeled state `new` was predicted as `old`.
    pub permutation: Vec<usize>,
    pub relabeled: Vec<usize>,
    /// Fraction of time points agreeing after relabeling.
    pub accuracy: f64,
}

/// Searches all `J!` label permutations for the one maximizing agreement
/// with the reference sequence.
///
/// Latent-state labels are arbitrary across fits, so accuracy must be scored
/// after the best relabeling. Refuses `J > 8`.
pub fn align_labels(predicted: &[usize], reference: &[usize], n_states: usize) -> Result<LabelAlignment> {
    if n_states > 8 {
        return Err(Error::TooManyStates(n_states));
    }
    if predicted.len() != reference.len() {
        return Err(Error::InvalidConfig(
            "predicted and reference sequences differ in length".into(),
        ));
    }
    // agreement counts per (predicted, reference) pair
    let mut counts = vec![vec![0usize; n_states]; n_states];
    for (&p, &r) in predicted.iter().zip(reference) {
        counts[p][r] += 1;
    }
    let mut best_perm: Vec<usize> = (0..n_states).collect();
    let mut best_hits = 0usize;
    for perm in (0..n_states).permutations(n_states) {
        // perm maps old label -> new label; hits when new label == reference
        let hits: usize = (0..n_states).map(|old| counts[old][perm[old]]).sum();
        if hits > best_hits {
            best_hits = hits;
            best_perm = perm;
        }
    }
    let relabeled: Vec<usize> = predicted.iter().map(|&p| best_perm[p]).collect();
    let accuracy = best_hits as f64 / predicted.len().max(1) as f64;
    // report as new -> old for applying to parameter sets
    let mut inverse = vec![0usize; n_states];
    for (old, &new) in best_perm.iter().enumerate() {
        inverse[new] = old;
    }
    Ok(LabelAlignment {
        permutation: inverse,
        relabeled,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_align_with_identity() {
        let s = vec![0, 1, 1, 0, 2, 2];
        let a = align_labels(&s, &s, 3).unwrap();
        assert_eq!(a.permutation, vec![0, 1, 2]);
        assert_eq!(a.accuracy, 1.0);
        assert_eq!(a.relabeled, s);
    }

    #[test]
    fn flipped_labels_align_with_swap() {
        let pred = vec![0, 0, 1, 1, 0];
        let reference = vec![1, 1, 0, 0, 1];
        let a = align_labels(&pred, &reference, 2).unwrap();
        assert_eq!(a.accuracy, 1.0);
        assert_eq!(a.relabeled, reference);
        assert_eq!(a.permutation, vec![1, 0]);
    }

    #[test]
    fn alignment_is_invariant_to_prior_relabeling() {
        let pred = vec![0, 1, 2, 2, 1, 0, 0, 2, 1, 1];
        let reference = vec![1, 1, 2, 0, 1, 0, 0, 2, 2, 1];
        let base = align_labels(&pred, &reference, 3).unwrap();
        // relabel predictions by an arbitrary permutation first
        let relabel = [2usize, 0, 1];
        let shuffled: Vec<usize> = pred.iter().map(|&p| relabel[p]).collect();
        let again = align_labels(&shuffled, &reference, 3).unwrap();
        assert_eq!(base.accuracy, again.accuracy);
    }

    #[test]
    fn too_many_states_refused() {
        assert!(matches!(align_labels(&[0], &[0], 9), Err(Error::TooManyStates(9))));
    }
}
