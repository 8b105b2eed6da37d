//! Parameter containers for the structural model.

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::glm::GlmFamily;

/// One emission coefficient: a single shared value or one value per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCoef(pub Vec<f64>);

impl StateCoef {
    pub fn shared(v: f64) -> Self {
        StateCoef(vec![v])
    }

    pub fn per_state(values: Vec<f64>) -> Self {
        StateCoef(values)
    }

    pub fn is_state_varying(&self) -> bool {
        self.0.len() > 1
    }

    /// Value for state `j` (shared coefficients ignore `j`).
    pub fn at(&self, j: usize) -> f64 {
        if self.0.len() == 1 {
            self.0[0]
        } else {
            self.0[j]
        }
    }

    fn check(&self, n_states: usize, varying: bool, name: &str) -> Result<()> {
        let want = if varying { n_states } else { 1 };
        if self.0.len() != want {
            return Err(Error::InvalidConfig(format!(
                "coefficient {name}: expected {want} entries, found {}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("coefficient {name} is non-finite")));
        }
        Ok(())
    }
}

/// Outcome regression: intercept, lagged outcome, exposure, internal and
/// external covariates, lagged exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCoefs {
    pub intercept: StateCoef,
    pub y_lag: StateCoef,
    pub exposure: StateCoef,
    pub c: Vec<StateCoef>,
    pub w: Vec<StateCoef>,
    pub exposure_lag: StateCoef,
    pub dispersion: f64,
}

/// Exposure regression: intercept, lagged exposure, external covariates,
/// lagged internal covariates, lagged outcome. For an ordinal exposure the
/// intercept holds per-state offsets with the reference state fixed at zero
/// and `cutpoints` carry the level thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureCoefs {
    pub intercept: StateCoef,
    pub a_lag: StateCoef,
    pub w: Vec<StateCoef>,
    pub c_lag: Vec<StateCoef>,
    pub y_lag: StateCoef,
    pub dispersion: f64,
    #[serde(default)]
    pub cutpoints: Vec<f64>,
}

/// One internal-covariate regression: intercept, all lagged internal
/// covariates, external covariates, lagged exposure, lagged outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateCoefs {
    pub intercept: StateCoef,
    pub c_lag: Vec<StateCoef>,
    pub w: Vec<StateCoef>,
    pub a_lag: StateCoef,
    pub y_lag: StateCoef,
    pub dispersion: f64,
}

/// Transition coefficients: `rows[i][j-1]` is the coefficient vector of the
/// multinomial-logit predictor for moving from state `i` to state `j ≥ 1`
/// (state 0 is the reference), ordered (intercept, lagged internal
/// covariates, lagged external covariates, lagged outcome, lagged exposure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCoefs {
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl TransitionCoefs {
    /// All-zero coefficients (uniform transitions).
    pub fn zeros(n_states: usize, n_internal: usize, n_external: usize) -> Self {
        let len = 1 + n_internal + n_external + 2;
        TransitionCoefs {
            rows: vec![vec![vec![0.0; len]; n_states.saturating_sub(1)]; n_states],
        }
    }

    pub fn predictor_len(n_internal: usize, n_external: usize) -> usize {
        1 + n_internal + n_external + 2
    }
}

/// Full parameter set: initial state probabilities, transition coefficients,
/// and the three emission regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub initial: Vec<f64>,
    pub transition: TransitionCoefs,
    pub outcome: OutcomeCoefs,
    pub exposure: ExposureCoefs,
    pub covariates: Vec<CovariateCoefs>,
}

impl ParameterSet {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn validate(&self, spec: &ModelSpec, n_internal: usize, n_external: usize) -> Result<()> {
        let j = spec.n_states;
        if self.initial.len() != j {
            return Err(Error::InvalidConfig("initial probabilities: wrong length".into()));
        }
        let total: f64 = self.initial.iter().sum();
        if (total - 1.0).abs() > 1e-8 || self.initial.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidConfig(
                "initial probabilities must be non-negative and sum to 1".into(),
            ));
        }
        if self.transition.rows.len() != j {
            return Err(Error::InvalidConfig("transition rows: wrong count".into()));
        }
        let plen = TransitionCoefs::predictor_len(n_internal, n_external);
        for row in &self.transition.rows {
            if row.len() != j - 1 {
                return Err(Error::InvalidConfig("transition targets: wrong count".into()));
            }
            for coef in row {
                if coef.len() != plen {
                    return Err(Error::InvalidConfig("transition coefficients: wrong length".into()));
                }
            }
        }
        let sv = &spec.state_varying;
        self.outcome.intercept.check(j, sv.outcome_intercept, "outcome intercept")?;
        self.outcome.y_lag.check(j, sv.outcome_y_lag, "outcome y-lag")?;
        self.outcome.exposure.check(j, sv.outcome_exposure, "outcome exposure")?;
        if self.outcome.c.len() != n_internal || self.outcome.w.len() != n_external {
            return Err(Error::InvalidConfig("outcome covariate coefficients: wrong count".into()));
        }
        for (k, coef) in self.outcome.c.iter().enumerate() {
            coef.check(j, sv.outcome_c, &format!("outcome c[{k}]"))?;
        }
        for (k, coef) in self.outcome.w.iter().enumerate() {
            coef.check(j, sv.outcome_w, &format!("outcome w[{k}]"))?;
        }
        self.outcome.exposure_lag.check(j, sv.outcome_exposure_lag, "outcome exposure-lag")?;
        if matches!(spec.family_y, GlmFamily::Gaussian) && self.outcome.dispersion < 0.0 {
            return Err(Error::InvalidConfig("outcome dispersion must be non-negative".into()));
        }

        self.exposure.intercept.check(j, sv.exposure_intercept, "exposure intercept")?;
        self.exposure.a_lag.check(j, sv.exposure_a_lag, "exposure a-lag")?;
        if self.exposure.w.len() != n_external || self.exposure.c_lag.len() != n_internal {
            return Err(Error::InvalidConfig("exposure covariate coefficients: wrong count".into()));
        }
        for (k, coef) in self.exposure.w.iter().enumerate() {
            coef.check(j, sv.exposure_w, &format!("exposure w[{k}]"))?;
        }
        for (k, coef) in self.exposure.c_lag.iter().enumerate() {
            coef.check(j, sv.exposure_c_lag, &format!("exposure c-lag[{k}]"))?;
        }
        self.exposure.y_lag.check(j, sv.exposure_y_lag, "exposure y-lag")?;
        if let GlmFamily::Ordinal { categories } = spec.family_a {
            if self.exposure.cutpoints.len() != categories - 1 {
                return Err(Error::InvalidConfig("exposure cutpoints: wrong count".into()));
            }
            if !self.exposure.cutpoints.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidConfig("exposure cutpoints must ascend".into()));
            }
        }

        if self.covariates.len() != n_internal {
            return Err(Error::InvalidConfig("covariate regressions: wrong count".into()));
        }
        for (k, cc) in self.covariates.iter().enumerate() {
            cc.intercept.check(j, sv.covariate_intercept, &format!("c[{k}] intercept"))?;
            if cc.c_lag.len() != n_internal || cc.w.len() != n_external {
                return Err(Error::InvalidConfig(format!("c[{k}] covariate coefficients: wrong count")));
            }
            for (l, coef) in cc.c_lag.iter().enumerate() {
                coef.check(j, sv.covariate_c_lag, &format!("c[{k}] c-lag[{l}]"))?;
            }
            for (l, coef) in cc.w.iter().enumerate() {
                coef.check(j, sv.covariate_w, &format!("c[{k}] w[{l}]"))?;
            }
            cc.a_lag.check(j, sv.covariate_a_lag, &format!("c[{k}] a-lag"))?;
            cc.y_lag.check(j, sv.covariate_y_lag, &format!("c[{k}] y-lag"))?;
        }
        Ok(())
    }

    /// Relabels the states by `perm`, where `perm[new] = old`.
    pub fn permute_states(&self, perm: &[usize]) -> ParameterSet {
        let j = self.n_states();
        assert_eq!(perm.len(), j);
        let pc = |c: &StateCoef| -> StateCoef {
            if c.is_state_varying() {
                StateCoef(perm.iter().map(|&old| c.0[old]).collect())
            } else {
                c.clone()
            }
        };
        // Transition coefficients are expressed against reference state 0, so
        // rebuild them from the implied per-target predictors.
        let plen = self.transition.rows[0].first().map_or(
            TransitionCoefs::predictor_len(0, 0),
            Vec::len,
        );
        let full = |i: usize, j_to: usize| -> Vec<f64> {
            if j_to == 0 {
                vec![0.0; plen]
            } else {
                self.transition.rows[i][j_to - 1].clone()
            }
        };
        let mut rows = Vec::with_capacity(j);
        for new_i in 0..j {
            let old_i = perm[new_i];
            let reference = full(old_i, perm[0]);
            let mut row = Vec::with_capacity(j - 1);
            for new_j in 1..j {
                let target = full(old_i, perm[new_j]);
                row.push(target.iter().zip(&reference).map(|(a, b)| a - b).collect());
            }
            rows.push(row);
        }
        ParameterSet {
            initial: perm.iter().map(|&old| self.initial[old]).collect(),
            transition: TransitionCoefs { rows },
            outcome: OutcomeCoefs {
                intercept: pc(&self.outcome.intercept),
                y_lag: pc(&self.outcome.y_lag),
                exposure: pc(&self.outcome.exposure),
                c: self.outcome.c.iter().map(&pc).collect(),
                w: self.outcome.w.iter().map(&pc).collect(),
                exposure_lag: pc(&self.outcome.exposure_lag),
                dispersion: self.outcome.dispersion,
            },
            exposure: {
                // Ordinal models pin the reference-state offset to zero; after
                // relabeling, re-reference the offsets and shift the cutpoints
                // by the same amount so every predictor is unchanged.
                let permuted = pc(&self.exposure.intercept);
                let (intercept, cutpoints) = if !self.exposure.cutpoints.is_empty()
                    && permuted.is_state_varying()
                {
                    let base = permuted.0[0];
                    (
                        StateCoef(permuted.0.iter().map(|v| v - base).collect()),
                        self.exposure.cutpoints.iter().map(|t| t - base).collect(),
                    )
                } else {
                    (permuted, self.exposure.cutpoints.clone())
                };
                ExposureCoefs {
                    intercept,
                    a_lag: pc(&self.exposure.a_lag),
                    w: self.exposure.w.iter().map(&pc).collect(),
                    c_lag: self.exposure.c_lag.iter().map(&pc).collect(),
                    y_lag: pc(&self.exposure.y_lag),
                    dispersion: self.exposure.dispersion,
                    cutpoints,
                }
            },
            covariates: self
                .covariates
                .iter()
                .map(|cc| CovariateCoefs {
                    intercept: pc(&cc.intercept),
                    c_lag: cc.c_lag.iter().map(&pc).collect(),
                    w: cc.w.iter().map(&pc).collect(),
                    a_lag: pc(&cc.a_lag),
                    y_lag: pc(&cc.y_lag),
                    dispersion: cc.dispersion,
                })
                .collect(),
        }
    }

    /// Element-wise mean of several parameter sets with identical shapes.
    pub fn pool_mean(sets: &[ParameterSet]) -> ParameterSet {
        assert!(!sets.is_empty());
        let mut flat: Vec<Vec<f64>> = sets.iter().map(|s| s.flatten()).collect();
        let n = flat.len() as f64;
        let mut mean = flat.remove(0);
        for other in &flat {
            for (m, v) in mean.iter_mut().zip(other) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut pooled = sets[0].clone();
        pooled.assign_flat(&mean);
        // initial probabilities must stay a simplex after averaging
        let total: f64 = pooled.initial.iter().sum();
        if total > 0.0 {
            for p in pooled.initial.iter_mut() {
                *p /= total;
            }
        }
        pooled
    }

    /// Flattens every parameter to a vector with a stable order matching
    /// [`ParameterSet::flat_labels`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.initial);
        for row in &self.transition.rows {
            for coef in row {
                out.extend_from_slice(coef);
            }
        }
        fn push(out: &mut Vec<f64>, c: &StateCoef) {
            out.extend_from_slice(&c.0);
        }
        push(&mut out, &self.outcome.intercept);
        push(&mut out, &self.outcome.y_lag);
        push(&mut out, &self.outcome.exposure);
        for c in &self.outcome.c {
            push(&mut out, c);
        }
        for c in &self.outcome.w {
            push(&mut out, c);
        }
        push(&mut out, &self.outcome.exposure_lag);
        out.push(self.outcome.dispersion);
        push(&mut out, &self.exposure.intercept);
        push(&mut out, &self.exposure.a_lag);
        for c in &self.exposure.w {
            push(&mut out, c);
        }
        for c in &self.exposure.c_lag {
            push(&mut out, c);
        }
        push(&mut out, &self.exposure.y_lag);
        out.push(self.exposure.dispersion);
        out.extend_from_slice(&self.exposure.cutpoints);
        for cc in &self.covariates {
            push(&mut out, &cc.intercept);
            for c in &cc.c_lag {
                push(&mut out, c);
            }
            for c in &cc.w {
                push(&mut out, c);
            }
            push(&mut out, &cc.a_lag);
            push(&mut out, &cc.y_lag);
            out.push(cc.dispersion);
        }
        out
    }

    /// Labels aligned with [`ParameterSet::flatten`].
    pub fn flat_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for j in 0..self.initial.len() {
            out.push(format!("initial[{}]", j + 1));
        }
        for (i, row) in self.transition.rows.iter().enumerate() {
            for (jm1, coef) in row.iter().enumerate() {
                for k in 0..coef.len() {
                    out.push(format!("transition[{}->{}][{}]", i + 1, jm1 + 2, k));
                }
            }
        }
        let label = |name: &str, c: &StateCoef, out: &mut Vec<String>| {
            if c.is_state_varying() {
                for j in 0..c.0.len() {
                    out.push(format!("{name}[state {}]", j + 1));
                }
            } else {
                out.push(name.to_string());
            }
        };
        label("outcome.intercept", &self.outcome.intercept, &mut out);
        label("outcome.y_lag", &self.outcome.y_lag, &mut out);
        label("outcome.exposure", &self.outcome.exposure, &mut out);
        for (k, c) in self.outcome.c.iter().enumerate() {
            label(&format!("outcome.c{}", k + 1), c, &mut out);
        }
        for (k, c) in self.outcome.w.iter().enumerate() {
            label(&format!("outcome.w{}", k + 1), c, &mut out);
        }
        label("outcome.exposure_lag", &self.outcome.exposure_lag, &mut out);
        out.push("outcome.dispersion".into());
        label("exposure.intercept", &self.exposure.intercept, &mut out);
        label("exposure.a_lag", &self.exposure.a_lag, &mut out);
        for (k, c) in self.exposure.w.iter().enumerate() {
            label(&format!("exposure.w{}", k + 1), c, &mut out);
        }
        for (k, c) in self.exposure.c_lag.iter().enumerate() {
            label(&format!("exposure.c_lag{}", k + 1), c, &mut out);
        }
        label("exposure.y_lag", &self.exposure.y_lag, &mut out);
        out.push("exposure.dispersion".into());
        for k in 0..self.exposure.cutpoints.len() {
            out.push(format!("exposure.cutpoint[{k}]"));
        }
        for (kc, cc) in self.covariates.iter().enumerate() {
            let prefix = format!("c{}", kc + 1);
            label(&format!("{prefix}.intercept"), &cc.intercept, &mut out);
            for (k, c) in cc.c_lag.iter().enumerate() {
                label(&format!("{prefix}.c_lag{}", k + 1), c, &mut out);
            }
            for (k, c) in cc.w.iter().enumerate() {
                label(&format!("{prefix}.w{}", k + 1), c, &mut out);
            }
            label(&format!("{prefix}.a_lag"), &cc.a_lag, &mut out);
            label(&format!("{prefix}.y_lag"), &cc.y_lag, &mut out);
            out.push(format!("{prefix}.dispersion"));
        }
        out
    }

    fn assign_flat(&mut self, values: &[f64]) {
        let mut idx = 0;
        let take = |n: usize, idx: &mut usize| -> Vec<f64> {
            let v = values[*idx..*idx + n].to_vec();
            *idx += n;
            v
        };
        let j = self.initial.len();
        self.initial = take(j, &mut idx);
        for row in self.transition.rows.iter_mut() {
            for coef in row.iter_mut() {
                *coef = take(coef.len(), &mut idx);
            }
        }
        let set = |c: &mut StateCoef, idx: &mut usize| {
            c.0 = values[*idx..*idx + c.0.len()].to_vec();
            *idx += c.0.len();
        };
        set(&mut self.outcome.intercept, &mut idx);
        set(&mut self.outcome.y_lag, &mut idx);
        set(&mut self.outcome.exposure, &mut idx);
        for c in self.outcome.c.iter_mut() {
            set(c, &mut idx);
        }
        for c in self.outcome.w.iter_mut() {
            set(c, &mut idx);
        }
        set(&mut self.outcome.exposure_lag, &mut idx);
        self.outcome.dispersion = values[idx];
        idx += 1;
        set(&mut self.exposure.intercept, &mut idx);
        set(&mut self.exposure.a_lag, &mut idx);
        for c in self.exposure.w.iter_mut() {
            set(c, &mut idx);
        }
        for c in self.exposure.c_lag.iter_mut() {
            set(c, &mut idx);
        }
        set(&mut self.exposure.y_lag, &mut idx);
        self.exposure.dispersion = values[idx];
        idx += 1;
        let ncut = self.exposure.cutpoints.len();
        self.exposure.cutpoints = take(ncut, &mut idx);
        for cc in self.covariates.iter_mut() {
            let set = |c: &mut StateCoef, idx: &mut usize| {
                c.0 = values[*idx..*idx + c.0.len()].to_vec();
                *idx += c.0.len();
            };
            set(&mut cc.intercept, &mut idx);
            for c in cc.c_lag.iter_mut() {
                set(c, &mut idx);
            }
            for c in cc.w.iter_mut() {
                set(c, &mut idx);
            }
            set(&mut cc.a_lag, &mut idx);
            set(&mut cc.y_lag, &mut idx);
            cc.dispersion = values[idx];
            idx += 1;
        }
        debug_assert_eq!(idx, values.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> ParameterSet {
        ParameterSet {
            initial: vec![0.4, 0.6],
            transition: TransitionCoefs {
                rows: vec![
                    vec![vec![0.5, 0.1, 0.2, 0.3, -0.1]],
                    vec![vec![-0.5, 0.0, 0.1, 0.2, 0.3]],
                ],
            },
            outcome: OutcomeCoefs {
                intercept: StateCoef::per_state(vec![-1.0, 1.0]),
                y_lag: StateCoef::shared(0.3),
                exposure: StateCoef::per_state(vec![-1.0, 1.5]),
                c: vec![StateCoef::shared(0.4)],
                w: vec![StateCoef::shared(0.2)],
                exposure_lag: StateCoef::per_state(vec![0.5, -0.5]),
                dispersion: 0.25,
            },
            exposure: ExposureCoefs {
                intercept: StateCoef::per_state(vec![-0.7, 0.7]),
                a_lag: StateCoef::shared(0.3),
                w: vec![StateCoef::shared(0.1)],
                c_lag: vec![StateCoef::shared(0.2)],
                y_lag: StateCoef::shared(0.15),
                dispersion: 0.5,
                cutpoints: vec![],
            },
            covariates: vec![CovariateCoefs {
                intercept: StateCoef::per_state(vec![-0.9, 0.9]),
                c_lag: vec![StateCoef::shared(0.35)],
                w: vec![StateCoef::shared(0.25)],
                a_lag: StateCoef::shared(0.2),
                y_lag: StateCoef::shared(0.15),
                dispersion: 0.49,
            }],
        }
    }

    #[test]
    fn validates_against_spec() {
        let spec = ModelSpec::gaussian(2, 1);
        small_params().validate(&spec, 1, 1).unwrap();
    }

    #[test]
    fn identity_permutation_is_noop() {
        let p = small_params();
        assert_eq!(p.permute_states(&[0, 1]), p);
    }

    #[test]
    fn swap_permutation_is_involutive() {
        let p = small_params();
        let swapped = p.permute_states(&[1, 0]);
        assert_ne!(swapped, p);
        assert_eq!(swapped.permute_states(&[1, 0]), p);
        assert_eq!(swapped.outcome.exposure.0, vec![1.5, -1.0]);
        assert_eq!(swapped.initial, vec![0.6, 0.4]);
    }

    #[test]
    fn flatten_labels_align() {
        let p = small_params();
        assert_eq!(p.flatten().len(), p.flat_labels().len());
    }

    #[test]
    fn pooling_averages_components() {
        let a = small_params();
        let mut b = small_params();
        b.outcome.exposure = StateCoef::per_state(vec![-3.0, 2.5]);
        let pooled = ParameterSet::pool_mean(&[a, b]);
        assert_eq!(pooled.outcome.exposure.0, vec![-2.0, 2.0]);
    }
}
