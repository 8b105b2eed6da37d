//! Maximization step: weighted GLM updates of every sub-model.
//!
//! State-varying coefficients enter the stacked regressions through
//! state-indicator interactions: each time point contributes one row per
//! state, weighted by the smoothed probability of that state. Transition
//! coefficients come from per-origin multinomial regressions weighted by the
//! pairwise probabilities, and the initial distribution is the smoothed
//! probability of the first day.

use nalgebra::DMatrix;

use super::forward_backward::PosteriorWeights;
use crate::error::{Error, Result};
use crate::glm::{
    fit_weighted_gaussian, fit_weighted_logistic, fit_weighted_multinomial, fit_weighted_ordinal,
    GlmFamily, GlmFit,
};
use crate::model::{
    CovariateCoefs, ExposureCoefs, ModelSpec, OutcomeCoefs, ParameterSet, StateCoef,
    TimeSeriesDataset, TransitionCoefs,
};

/// States whose total smoothed mass falls below `EMPTY_STATE_FRACTION × T`
/// are excluded from the regressions and keep their previous coefficients.
pub const EMPTY_STATE_FRACTION: f64 = 1e-6;

/// Updated parameters plus the raw outcome-regression fit used for pooling
/// diagnostics.
#[derive(Debug, Clone)]
pub struct MStepOutput {
    pub params: ParameterSet,
    /// Flattened outcome coefficients (stable order) and their asymptotic
    /// variances, for Rubin pooling across imputations.
    pub outcome_estimates: Vec<f64>,
    pub outcome_variances: Vec<f64>,
    pub outcome_labels: Vec<String>,
    /// Set when any sub-model reported separation.
    pub separation: bool,
}

// ---------------------------------------------------------------------------
// Design layout
// ---------------------------------------------------------------------------

struct SlotDef {
    name: String,
    varying: bool,
}

/// Maps regression slots onto design columns for the active states.
struct DesignLayout {
    slots: Vec<SlotDef>,
    active: Vec<usize>,
    n_states: usize,
    /// Drop the first active state's indicator column (ordinal responses,
    /// whose base level lives in the cutpoints).
    reference_fixed: bool,
    offsets: Vec<usize>,
    n_columns: usize,
}

impl DesignLayout {
    fn new(slots: Vec<SlotDef>, active: Vec<usize>, n_states: usize, reference_fixed: bool) -> Self {
        let mut offsets = Vec::with_capacity(slots.len());
        let mut col = 0;
        for (idx, slot) in slots.iter().enumerate() {
            offsets.push(col);
            col += Self::slot_width(slot, idx, &active, reference_fixed);
        }
        DesignLayout {
            slots,
            active,
            n_states,
            reference_fixed,
            offsets,
            n_columns: col,
        }
    }

    fn slot_width(slot: &SlotDef, idx: usize, active: &[usize], reference_fixed: bool) -> usize {
        if slot.varying {
            if idx == 0 && reference_fixed {
                active.len() - 1
            } else {
                active.len()
            }
        } else {
            1
        }
    }

    /// Writes one stacked row: `values[s]` is the input of slot `s` (1 for the
    /// intercept), `active_idx` the position of the row's state in `active`.
    fn fill_row(&self, row: &mut [f64], active_idx: usize, values: &[f64]) {
        row.fill(0.0);
        for (idx, slot) in self.slots.iter().enumerate() {
            let off = self.offsets[idx];
            if slot.varying {
                if idx == 0 && self.reference_fixed {
                    if active_idx > 0 {
                        row[off + active_idx - 1] = values[idx];
                    }
                } else {
                    row[off + active_idx] = values[idx];
                }
            } else {
                row[off] = values[idx];
            }
        }
    }

    /// Expands fitted coefficients back into per-slot [`StateCoef`]s; inactive
    /// states take their values from `fallback` (zero when absent).
    fn unpack(&self, coefs: &[f64], fallback: Option<&[StateCoef]>) -> Vec<StateCoef> {
        self.slots
            .iter()
            .enumerate()
            .map(|(idx, slot)| {
                let off = self.offsets[idx];
                if !slot.varying {
                    return StateCoef::shared(coefs[off]);
                }
                let fb = fallback.map(|f| &f[idx]);
                let mut values: Vec<f64> = (0..self.n_states)
                    .map(|j| fb.map_or(0.0, |c| c.at(j)))
                    .collect();
                for (pos, &state) in self.active.iter().enumerate() {
                    values[state] = if idx == 0 && self.reference_fixed {
                        if pos == 0 {
                            0.0
                        } else {
                            coefs[off + pos - 1]
                        }
                    } else {
                        coefs[off + pos]
                    };
                }
                StateCoef::per_state(values)
            })
            .collect()
    }

    fn column_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_columns);
        for (idx, slot) in self.slots.iter().enumerate() {
            if slot.varying {
                for (pos, &state) in self.active.iter().enumerate() {
                    if idx == 0 && self.reference_fixed && pos == 0 {
                        continue;
                    }
                    out.push(format!("{}[state {}]", slot.name, state + 1));
                }
            } else {
                out.push(slot.name.clone());
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// M-step
// ---------------------------------------------------------------------------

/// Runs one maximization step.
///
/// `fallback` supplies coefficients for states that carry essentially no
/// posterior mass (so the step stays total under degenerate weights); the
/// fitting driver separately restarts on such collapse.
pub fn m_step(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    weights: &PosteriorWeights,
    y_imputed: &[f64],
    fallback: Option<&ParameterSet>,
) -> Result<MStepOutput> {
    let t_len = dataset.len();
    let occupancy = weights.state_occupancy();
    let threshold = EMPTY_STATE_FRACTION * t_len as f64;
    let active: Vec<usize> = (0..spec.n_states)
        .filter(|&j| occupancy[j] >= threshold)
        .collect();
    if active.is_empty() {
        return Err(Error::DegenerateWeights("no state carries posterior mass".into()));
    }

    let mut separation = false;

    let (outcome, outcome_fit, outcome_layout) =
        update_outcome(spec, dataset, weights, y_imputed, &active, fallback)
            .map_err(|e| e.in_submodel("outcome regression"))?;
    separation |= outcome_fit.separation;

    let (exposure, exposure_fit) =
        update_exposure(spec, dataset, weights, y_imputed, &active, fallback)
            .map_err(|e| e.in_submodel("exposure regression"))?;
    separation |= exposure_fit.separation;

    let mut covariates = Vec::with_capacity(dataset.n_internal());
    for k in 0..dataset.n_internal() {
        let (cc, fit) = update_covariate(spec, dataset, weights, y_imputed, &active, fallback, k)
            .map_err(|e| e.in_submodel(format!("covariate {} regression", k + 1)))?;
        separation |= fit.separation;
        covariates.push(cc);
    }

    let transition = update_transitions(spec, dataset, weights, y_imputed, &active, fallback)
        .map_err(|e| e.in_submodel("transition regression"))?;

    let params = ParameterSet {
        initial: weights.gamma[0].clone(),
        transition,
        outcome,
        exposure,
        covariates,
    };

    Ok(MStepOutput {
        params,
        outcome_estimates: outcome_fit.coefficients.clone(),
        outcome_variances: outcome_fit.coef_variances.clone(),
        outcome_labels: outcome_layout,
        separation,
    })
}

/// Hard-label variant: smoothed weights are replaced by the indicator of a
/// drawn state sequence, so every regression is an unweighted fit on the
/// labeled data.
pub fn m_step_hard(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    labels: &[usize],
    y_imputed: &[f64],
    fallback: Option<&ParameterSet>,
) -> Result<MStepOutput> {
    let t_len = dataset.len();
    let n_states = spec.n_states;
    let mut gamma = vec![vec![0.0; n_states]; t_len];
    for (t, &l) in labels.iter().enumerate() {
        gamma[t][l] = 1.0;
    }
    let mut xi = vec![vec![vec![0.0; n_states]; n_states]; t_len - 1];
    for t in 0..t_len - 1 {
        xi[t][labels[t]][labels[t + 1]] = 1.0;
    }
    let weights = PosteriorWeights {
        fwd: gamma.clone(),
        bwd: vec![vec![1.0; n_states]; t_len],
        gamma,
        xi,
        log_scaling: vec![0.0; t_len],
        log_likelihood: 0.0,
    };
    m_step(spec, dataset, &weights, y_imputed, fallback)
}

fn outcome_slots(spec: &ModelSpec, dataset: &TimeSeriesDataset) -> Vec<SlotDef> {
    let sv = &spec.state_varying;
    let mut slots = vec![
        SlotDef { name: "intercept".into(), varying: sv.outcome_intercept },
        SlotDef { name: "y_lag".into(), varying: sv.outcome_y_lag },
        SlotDef { name: "exposure".into(), varying: sv.outcome_exposure },
    ];
    for k in 0..dataset.n_internal() {
        slots.push(SlotDef { name: format!("c{}", k + 1), varying: sv.outcome_c });
    }
    for k in 0..dataset.n_external() {
        slots.push(SlotDef { name: format!("w{}", k + 1), varying: sv.outcome_w });
    }
    slots.push(SlotDef { name: "exposure_lag".into(), varying: sv.outcome_exposure_lag });
    slots
}

fn update_outcome(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    weights: &PosteriorWeights,
    y_imputed: &[f64],
    active: &[usize],
    fallback: Option<&ParameterSet>,
) -> Result<(OutcomeCoefs, GlmFit, Vec<String>)> {
    let layout = DesignLayout::new(outcome_slots(spec, dataset), active.to_vec(), spec.n_states, false);
    let times: Vec<usize> = (1..dataset.len()).filter(|&t| !dataset.y_missing[t]).collect();
    let n_rows = times.len() * active.len();
    let mut design = DMatrix::<f64>::zeros(n_rows, layout.n_columns);
    let mut response = Vec::with_capacity(n_rows);
    let mut wts = Vec::with_capacity(n_rows);
    let mut row_buf = vec![0.0; layout.n_columns];
    let mut row = 0;
    for &t in &times {
        let mut values = vec![1.0, y_imputed[t - 1], dataset.a[t]];
        values.extend(dataset.c_at(t));
        values.extend(dataset.w_at(t));
        values.push(dataset.a[t - 1]);
        for (pos, &j) in active.iter().enumerate() {
            layout.fill_row(&mut row_buf, pos, &values);
            for (k, &v) in row_buf.iter().enumerate() {
                design[(row, k)] = v;
            }
            response.push(dataset.y[t]);
            wts.push(weights.gamma[t][j]);
            row += 1;
        }
    }

    let fit = match spec.family_y {
        GlmFamily::Gaussian => fit_weighted_gaussian(&design, &response, &wts)?,
        GlmFamily::Bernoulli => fit_weighted_logistic(&design, &response, &wts)?,
        _ => unreachable!("outcome family validated"),
    };

    let fb: Option<Vec<StateCoef>> = fallback.map(|p| {
        let mut v = vec![
            p.outcome.intercept.clone(),
            p.outcome.y_lag.clone(),
            p.outcome.exposure.clone(),
        ];
        v.extend(p.outcome.c.iter().cloned());
        v.extend(p.outcome.w.iter().cloned());
        v.push(p.outcome.exposure_lag.clone());
        v
    });
    let mut coefs = layout.unpack(&fit.coefficients, fb.as_deref());
    let labels = layout.column_labels();
    let q_c = dataset.n_internal();
    let q_w = dataset.n_external();
    let exposure_lag = coefs.pop().expect("layout slots");
    let w = coefs.split_off(3 + q_c);
    let c = coefs.split_off(3);
    debug_assert_eq!(w.len(), q_w);
    let out = OutcomeCoefs {
        intercept: coefs[0].clone(),
        y_lag: coefs[1].clone(),
        exposure: coefs[2].clone(),
        c,
        w,
        exposure_lag,
        dispersion: fit.dispersion,
    };
    Ok((out, fit, labels))
}

fn update_exposure(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    weights: &PosteriorWeights,
    y_imputed: &[f64],
    active: &[usize],
    fallback: Option<&ParameterSet>,
) -> Result<(ExposureCoefs, GlmFit)> {
    let sv = &spec.state_varying;
    let ordinal = matches!(spec.family_a, GlmFamily::Ordinal { .. });
    let mut slots = vec![
        SlotDef { name: "intercept".into(), varying: sv.exposure_intercept },
        SlotDef { name: "a_lag".into(), varying: sv.exposure_a_lag },
    ];
    for k in 0..dataset.n_external() {
        slots.push(SlotDef { name: format!("w{}", k + 1), varying: sv.exposure_w });
    }
    for k in 0..dataset.n_internal() {
        slots.push(SlotDef { name: format!("c_lag{}", k + 1), varying: sv.exposure_c_lag });
    }
    slots.push(SlotDef { name: "y_lag".into(), varying: sv.exposure_y_lag });
    let layout = DesignLayout::new(slots, active.to_vec(), spec.n_states, ordinal);

    let t_len = dataset.len();
    let n_rows = (t_len - 1) * active.len();
    let mut design = DMatrix::<f64>::zeros(n_rows, layout.n_columns);
    let mut response = Vec::with_capacity(n_rows);
    let mut wts = Vec::with_capacity(n_rows);
    let mut row_buf = vec![0.0; layout.n_columns];
    let mut row = 0;
    for t in 1..t_len {
        let mut values = vec![1.0, dataset.a[t - 1]];
        values.extend(dataset.w_at(t));
        values.extend(dataset.c_at(t - 1));
        values.push(y_imputed[t - 1]);
        for (pos, &j) in active.iter().enumerate() {
            layout.fill_row(&mut row_buf, pos, &values);
            for (k, &v) in row_buf.iter().enumerate() {
                design[(row, k)] = v;
            }
            response.push(dataset.a[t]);
            wts.push(weights.gamma[t][j]);
            row += 1;
        }
    }

    // Ordinal responses absorb the base intercept into the cutpoints: drop the
    // intercept column when it is not state-varying (its width is fixed at 1
    // in the layout, which only drops the reference column of varying slots).
    let fit = match spec.family_a {
        GlmFamily::Gaussian => fit_weighted_gaussian(&design, &response, &wts)?,
        GlmFamily::Bernoulli => fit_weighted_logistic(&design, &response, &wts)?,
        GlmFamily::Ordinal { categories } => {
            if !sv.exposure_intercept {
                let trimmed = design.columns(1, layout.n_columns - 1).into_owned();
                let mut fit = fit_weighted_ordinal(&trimmed, &response, &wts, categories)?;
                fit.coefficients.insert(0, 0.0);
                fit.coef_variances.insert(0, 0.0);
                fit
            } else {
                fit_weighted_ordinal(&design, &response, &wts, categories)?
            }
        }
        _ => unreachable!("exposure family validated"),
    };

    let fb: Option<Vec<StateCoef>> = fallback.map(|p| {
        let mut v = vec![p.exposure.intercept.clone(), p.exposure.a_lag.clone()];
        v.extend(p.exposure.w.iter().cloned());
        v.extend(p.exposure.c_lag.iter().cloned());
        v.push(p.exposure.y_lag.clone());
        v
    });
    let mut coefs = layout.unpack(&fit.coefficients, fb.as_deref());
    let q_c = dataset.n_internal();
    let q_w = dataset.n_external();
    let y_lag = coefs.pop().expect("layout slots");
    let c_lag = coefs.split_off(2 + q_w);
    let w = coefs.split_off(2);
    debug_assert_eq!(c_lag.len(), q_c);
    let out = ExposureCoefs {
        intercept: coefs[0].clone(),
        a_lag: coefs[1].clone(),
        w,
        c_lag,
        y_lag,
        dispersion: fit.dispersion,
        cutpoints: fit.cutpoints.clone(),
    };
    Ok((out, fit))
}

fn update_covariate(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    weights: &PosteriorWeights,
    y_imputed: &[f64],
    active: &[usize],
    fallback: Option<&ParameterSet>,
    target: usize,
) -> Result<(CovariateCoefs, GlmFit)> {
    let sv = &spec.state_varying;
    let mut slots = vec![SlotDef { name: "intercept".into(), varying: sv.covariate_intercept }];
    for k in 0..dataset.n_internal() {
        slots.push(SlotDef { name: format!("c_lag{}", k + 1), varying: sv.covariate_c_lag });
    }
    for k in 0..dataset.n_external() {
        slots.push(SlotDef { name: format!("w{}", k + 1), varying: sv.covariate_w });
    }
    slots.push(SlotDef { name: "a_lag".into(), varying: sv.covariate_a_lag });
    slots.push(SlotDef { name: "y_lag".into(), varying: sv.covariate_y_lag });
    let layout = DesignLayout::new(slots, active.to_vec(), spec.n_states, false);

    let t_len = dataset.len();
    let n_rows = (t_len - 1) * active.len();
    let mut design = DMatrix::<f64>::zeros(n_rows, layout.n_columns);
    let mut response = Vec::with_capacity(n_rows);
    let mut wts = Vec::with_capacity(n_rows);
    let mut row_buf = vec![0.0; layout.n_columns];
    let mut row = 0;
    for t in 1..t_len {
        let mut values = vec![1.0];
        values.extend(dataset.c_at(t - 1));
        values.extend(dataset.w_at(t));
        values.push(dataset.a[t - 1]);
        values.push(y_imputed[t - 1]);
        for (pos, &j) in active.iter().enumerate() {
            layout.fill_row(&mut row_buf, pos, &values);
            for (k, &v) in row_buf.iter().enumerate() {
                design[(row, k)] = v;
            }
            response.push(dataset.c[target][t]);
            wts.push(weights.gamma[t][j]);
            row += 1;
        }
    }

    let fit = match spec.family_c[target] {
        GlmFamily::Gaussian => fit_weighted_gaussian(&design, &response, &wts)?,
        GlmFamily::Bernoulli => fit_weighted_logistic(&design, &response, &wts)?,
        _ => unreachable!("covariate family validated"),
    };

    let fb: Option<Vec<StateCoef>> = fallback.map(|p| {
        let cc = &p.covariates[target];
        let mut v = vec![cc.intercept.clone()];
        v.extend(cc.c_lag.iter().cloned());
        v.extend(cc.w.iter().cloned());
        v.push(cc.a_lag.clone());
        v.push(cc.y_lag.clone());
        v
    });
    let mut coefs = layout.unpack(&fit.coefficients, fb.as_deref());
    let q_c = dataset.n_internal();
    let y_lag = coefs.pop().expect("layout slots");
    let a_lag = coefs.pop().expect("layout slots");
    let w = coefs.split_off(1 + q_c);
    let c_lag = coefs.split_off(1);
    let out = CovariateCoefs {
        intercept: coefs[0].clone(),
        c_lag,
        w,
        a_lag,
        y_lag,
        dispersion: fit.dispersion,
    };
    Ok((out, fit))
}

fn update_transitions(
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    weights: &PosteriorWeights,
    y_imputed: &[f64],
    active: &[usize],
    fallback: Option<&ParameterSet>,
) -> Result<TransitionCoefs> {
    let n_states = spec.n_states;
    let q_c = dataset.n_internal();
    let q_w = dataset.n_external();
    let plen = TransitionCoefs::predictor_len(q_c, q_w);
    let mut out = match fallback {
        Some(p) => p.transition.clone(),
        None => TransitionCoefs::zeros(n_states, q_c, q_w),
    };
    if n_states == 1 {
        return Ok(out);
    }
    // Re-expressing fitted predictors against global reference state 0 needs
    // state 0 active, and a multinomial fit needs at least two live targets;
    // under that much collapse the driver restarts anyway.
    if !active.contains(&0) || active.len() < 2 {
        log::warn!("transition update skipped: posterior mass too concentrated");
        return Ok(out);
    }
    let t_len = dataset.len();
    let n_rows = (t_len - 1) * active.len();

    for &from in active {
        let mut design = DMatrix::<f64>::zeros(n_rows, plen);
        let mut response = Vec::with_capacity(n_rows);
        let mut wts = Vec::with_capacity(n_rows);
        let mut row = 0;
        for t in 0..t_len - 1 {
            for (pos, &to) in active.iter().enumerate() {
                design[(row, 0)] = 1.0;
                let mut k = 1;
                for col in 0..q_c {
                    design[(row, k)] = dataset.c[col][t];
                    k += 1;
                }
                for col in 0..q_w {
                    design[(row, k)] = dataset.w[col][t];
                    k += 1;
                }
                design[(row, k)] = y_imputed[t];
                design[(row, k + 1)] = dataset.a[t];
                response.push(pos as f64);
                wts.push(weights.xi[t][from][to]);
                row += 1;
            }
        }
        let fit = fit_weighted_multinomial(&design, &response, &wts, active.len())?;
        // map fitted categories (positions in `active`) back to state labels
        for (pos, &to) in active.iter().enumerate().skip(1) {
            let block = &fit.coefficients[(pos - 1) * plen..pos * plen];
            out.rows[from][to - 1] = block.to_vec();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::forward_backward::forward_backward;
    use approx::assert_relative_eq;

    fn toy_dataset(t_len: usize) -> TimeSeriesDataset {
        // deterministic wiggle, no randomness needed for shape tests
        let y: Vec<f64> = (0..t_len).map(|t| ((t * 7 % 5) as f64) * 0.5 - 1.0).collect();
        let a: Vec<f64> = (0..t_len).map(|t| ((t * 3 % 4) as f64) * 0.4 - 0.6).collect();
        let c: Vec<f64> = (0..t_len).map(|t| ((t * 5 % 3) as f64) * 0.3 - 0.3).collect();
        let w: Vec<f64> = (0..t_len).map(|t| ((t % 2) as f64) - 0.5).collect();
        TimeSeriesDataset {
            y_missing: vec![false; t_len],
            y,
            a,
            c: vec![c],
            w: vec![w],
            latent_truth: None,
        }
    }

    fn uniform_weights(t_len: usize, n_states: usize) -> PosteriorWeights {
        let g = vec![vec![1.0 / n_states as f64; n_states]; t_len];
        let x = vec![
            vec![vec![1.0 / (n_states * n_states) as f64; n_states]; n_states];
            t_len - 1
        ];
        PosteriorWeights {
            fwd: g.clone(),
            bwd: vec![vec![1.0; n_states]; t_len],
            gamma: g,
            xi: x,
            log_scaling: vec![0.0; t_len],
            log_likelihood: 0.0,
        }
    }

    #[test]
    fn symmetric_weights_give_equal_state_coefficients() {
        let spec = ModelSpec::gaussian(2, 1);
        let ds = toy_dataset(40);
        let weights = uniform_weights(40, 2);
        let y = ds.y.clone();
        let out = m_step(&spec, &ds, &weights, &y, None).unwrap();
        let beta = &out.params.outcome;
        assert_relative_eq!(beta.intercept.at(0), beta.intercept.at(1), epsilon = 1e-6);
        assert_relative_eq!(beta.exposure.at(0), beta.exposure.at(1), epsilon = 1e-6);
        assert_relative_eq!(beta.exposure_lag.at(0), beta.exposure_lag.at(1), epsilon = 1e-6);
    }

    #[test]
    fn degenerate_weights_keep_fallback_for_empty_state() {
        let spec = ModelSpec::gaussian(2, 1);
        let ds = toy_dataset(40);
        let mut weights = uniform_weights(40, 2);
        for t in 0..40 {
            weights.gamma[t] = vec![1.0, 0.0];
        }
        for t in 0..39 {
            weights.xi[t] = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        }
        let y = ds.y.clone();
        let fallback = {
            let w = uniform_weights(40, 2);
            m_step(&spec, &ds, &w, &y, None).unwrap().params
        };
        let out = m_step(&spec, &ds, &weights, &y, Some(&fallback)).unwrap();
        // state 2 kept the fallback values
        assert_relative_eq!(
            out.params.outcome.exposure.at(1),
            fallback.outcome.exposure.at(1),
            epsilon = 1e-12
        );
        // state 1 equals the unweighted single-state fit
        let spec1 = ModelSpec::gaussian(1, 1);
        let w1 = uniform_weights(40, 1);
        let single = m_step(&spec1, &ds, &w1, &y, None).unwrap();
        assert_relative_eq!(
            out.params.outcome.exposure.at(0),
            single.params.outcome.exposure.at(0),
            epsilon = 1e-8
        );
    }

    #[test]
    fn mstep_round_trips_through_forward_backward() {
        let spec = ModelSpec::gaussian(2, 1);
        let ds = toy_dataset(30);
        let weights = uniform_weights(30, 2);
        let y = ds.y.clone();
        let out = m_step(&spec, &ds, &weights, &y, None).unwrap();
        out.params.validate(&spec, 1, 1).unwrap();
        let post = forward_backward(&spec, &out.params, &ds, &y).unwrap();
        assert!(post.log_likelihood.is_finite());
    }

    #[test]
    fn hard_labels_match_one_hot_weights() {
        let spec = ModelSpec::gaussian(2, 1);
        let ds = toy_dataset(30);
        let labels: Vec<usize> = (0..30).map(|t| (t / 3) % 2).collect();
        let y = ds.y.clone();
        let hard = m_step_hard(&spec, &ds, &labels, &y, None).unwrap();
        assert_eq!(hard.params.initial, vec![1.0, 0.0]);
        hard.params.validate(&spec, 1, 1).unwrap();
    }
}
