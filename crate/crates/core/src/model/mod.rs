//! Structural model: data containers, specification, parameters, and the
//! covariate-dependent transition and emission evaluators.
//!
//! Time is indexed `0..T`. The first day has no lagged regressors, so the
//! likelihood conditions on it: emissions are evaluated for `t ≥ 1`, the
//! initial distribution governs the latent state on day 0, and the
//! transition into day `t` uses the covariates of day `t − 1`.

mod eval;
mod params;

pub use eval::{
    conditional_mean_y, covariate_linear_predictor, emission_logdensity,
    exposure_linear_predictor, outcome_linear_predictor, transition_matrix_at,
    transition_row, CovariateRegressors, ExposureRegressors, OutcomeRegressors,
    TransitionRegressors,
};
pub use params::{
    CovariateCoefs, ExposureCoefs, OutcomeCoefs, ParameterSet, StateCoef, TransitionCoefs,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::GlmFamily;

/// Aligned daily series for one individual.
///
/// Only the outcome may carry missing values at fit time; exposure and
/// covariates must be complete (pre-impute them upstream if needed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    /// Outcome series; entries flagged in `y_missing` hold placeholders.
    pub y: Vec<f64>,
    pub y_missing: Vec<bool>,
    /// Exposure series (ordinal levels are stored as their numeric codes).
    pub a: Vec<f64>,
    /// Internal covariate columns (affected by the latent state), `c[k][t]`.
    pub c: Vec<Vec<f64>>,
    /// External covariate columns (independent of the latent state), `w[k][t]`.
    pub w: Vec<Vec<f64>>,
    /// True latent states (0-based), present only for simulated data.
    pub latent_truth: Option<Vec<usize>>,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_internal(&self) -> usize {
        self.c.len()
    }

    pub fn n_external(&self) -> usize {
        self.w.len()
    }

    pub fn n_missing(&self) -> usize {
        self.y_missing.iter().filter(|&&m| m).count()
    }

    /// Internal covariate values at one time point.
    pub fn c_at(&self, t: usize) -> Vec<f64> {
        self.c.iter().map(|col| col[t]).collect()
    }

    /// External covariate values at one time point.
    pub fn w_at(&self, t: usize) -> Vec<f64> {
        self.w.iter().map(|col| col[t]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t < 3 {
            return Err(Error::InvalidConfig(format!(
                "series length {t} below the minimum of 3"
            )));
        }
        if self.y_missing.len() != t || self.a.len() != t {
            return Err(Error::InvalidConfig("series lengths differ".into()));
        }
        for col in self.c.iter().chain(self.w.iter()) {
            if col.len() != t {
                return Err(Error::InvalidConfig("covariate column length differs".into()));
            }
        }
        for i in 0..t {
            if !self.a[i].is_finite() {
                return Err(Error::UnsupportedMissingness { t: i });
            }
            if !self.y_missing[i] && !self.y[i].is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite outcome at t={i}")));
            }
        }
        for col in self.c.iter().chain(self.w.iter()) {
            for (i, v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::UnsupportedMissingness { t: i });
                }
            }
        }
        if let Some(truth) = &self.latent_truth {
            if truth.len() != t {
                return Err(Error::InvalidConfig("latent truth length differs".into()));
            }
        }
        Ok(())
    }
}

/// Which emission coefficients carry a per-state subscript.
///
/// Defaults match the structural model: emission intercepts and the exposure
/// terms of the outcome regression vary by state; everything else is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateVaryingFlags {
    pub outcome_intercept: bool,
    pub outcome_y_lag: bool,
    pub outcome_exposure: bool,
    pub outcome_c: bool,
    pub outcome_w: bool,
    pub outcome_exposure_lag: bool,
    pub exposure_intercept: bool,
    pub exposure_a_lag: bool,
    pub exposure_w: bool,
    pub exposure_c_lag: bool,
    pub exposure_y_lag: bool,
    pub covariate_intercept: bool,
    pub covariate_c_lag: bool,
    pub covariate_w: bool,
    pub covariate_a_lag: bool,
    pub covariate_y_lag: bool,
}

impl Default for StateVaryingFlags {
    fn default() -> Self {
        StateVaryingFlags {
            outcome_intercept: true,
            outcome_y_lag: false,
            outcome_exposure: true,
            outcome_c: false,
            outcome_w: false,
            outcome_exposure_lag: true,
            exposure_intercept: true,
            exposure_a_lag: false,
            exposure_w: false,
            exposure_c_lag: false,
            exposure_y_lag: false,
            covariate_intercept: true,
            covariate_c_lag: false,
            covariate_w: false,
            covariate_a_lag: false,
            covariate_y_lag: false,
        }
    }
}

/// Model specification: number of latent states, response families, and the
/// state-varying coefficient pattern. The lag order is fixed at one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_states: usize,
    pub family_y: GlmFamily,
    pub family_a: GlmFamily,
    pub family_c: Vec<GlmFamily>,
    #[serde(default)]
    pub state_varying: StateVaryingFlags,
}

impl ModelSpec {
    /// Gaussian-everywhere spec with the default state-varying pattern.
    pub fn gaussian(n_states: usize, n_internal: usize) -> Self {
        ModelSpec {
            n_states,
            family_y: GlmFamily::Gaussian,
            family_a: GlmFamily::Gaussian,
            family_c: vec![GlmFamily::Gaussian; n_internal],
            state_varying: StateVaryingFlags::default(),
        }
    }

    /// Same as [`ModelSpec::gaussian`] but with a proportional-odds exposure.
    pub fn with_ordinal_exposure(n_states: usize, n_internal: usize, levels: usize) -> Self {
        ModelSpec {
            family_a: GlmFamily::Ordinal { categories: levels },
            ..ModelSpec::gaussian(n_states, n_internal)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 1 {
            return Err(Error::InvalidConfig("need at least one latent state".into()));
        }
        self.family_y.validate()?;
        self.family_a.validate()?;
        for f in &self.family_c {
            f.validate()?;
        }
        if matches!(self.family_y, GlmFamily::Multinomial { .. } | GlmFamily::Ordinal { .. }) {
            return Err(Error::InvalidConfig(
                "outcome family must be gaussian or bernoulli".into(),
            ));
        }
        if matches!(self.family_a, GlmFamily::Multinomial { .. }) {
            return Err(Error::InvalidConfig(
                "exposure family must be gaussian, bernoulli, or ordinal".into(),
            ));
        }
        for f in &self.family_c {
            if f.is_discrete() && !matches!(f, GlmFamily::Bernoulli) {
                return Err(Error::InvalidConfig(
                    "internal covariate families must be gaussian or bernoulli".into(),
                ));
            }
        }
        Ok(())
    }
}
