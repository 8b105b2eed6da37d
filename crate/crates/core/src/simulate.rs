//! Data-generating process for simulation studies and parametric bootstrap
//! replicates, missing-at-random masking, and the full study driver with the
//! naive comparator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{block_bootstrap, BootstrapConfig};
use crate::decode::{align_labels, viterbi};
use crate::effects::fit_naive;
use crate::em::{fit, FitConfig, ImputationMode};
use crate::error::{Error, Result};
use crate::glm::{sigmoid, GlmFamily};
use crate::model::{
    covariate_linear_predictor, exposure_linear_predictor, outcome_linear_predictor,
    transition_row, CovariateCoefs, CovariateRegressors, ExposureCoefs, ExposureRegressors,
    ModelSpec, OutcomeCoefs, OutcomeRegressors, ParameterSet, StateCoef, TimeSeriesDataset,
    TransitionCoefs, TransitionRegressors,
};
use crate::rng::{derive_seed, stream};

/// How the outcome is masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum MissingnessRule {
    None,
    /// Independent masking at a constant rate.
    Constant { rate: f64 },
    /// Missing-at-random with the mask probability a logistic function of the
    /// external covariates.
    Logistic { intercept: f64, w_coefficients: Vec<f64> },
}

/// Configuration of the data-generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub len: usize,
    pub spec: ModelSpec,
    pub params: ParameterSet,
    /// First external covariate follows an AR(1) with this coefficient...
    pub w1_ar: f64,
    /// ...and this innovation standard deviation.
    pub w1_sd: f64,
    pub missing: MissingnessRule,
    pub seed: u64,
}

impl DgpConfig {
    /// Two well-separated latent states, continuous exposure, `T = 500`,
    /// 30% missing outcomes.
    pub fn two_state(seed: u64) -> Self {
        DgpConfig {
            len: 500,
            spec: ModelSpec::gaussian(2, 2),
            params: two_state_params(),
            w1_ar: 0.5,
            w1_sd: 0.8,
            missing: MissingnessRule::Constant { rate: 0.30 },
            seed,
        }
    }

    /// Three latent states, continuous exposure.
    pub fn three_state(seed: u64) -> Self {
        DgpConfig {
            len: 500,
            spec: ModelSpec::gaussian(3, 2),
            params: three_state_params(),
            w1_ar: 0.5,
            w1_sd: 0.8,
            missing: MissingnessRule::Constant { rate: 0.30 },
            seed,
        }
    }

    /// Two latent states with a four-level proportional-odds exposure.
    pub fn ordinal_two_state(seed: u64) -> Self {
        DgpConfig {
            len: 500,
            spec: ModelSpec::with_ordinal_exposure(2, 2, 4),
            params: ordinal_two_state_params(),
            w1_ar: 0.5,
            w1_sd: 0.8,
            missing: MissingnessRule::Constant { rate: 0.30 },
            seed,
        }
    }

    /// True state-conditional exposure effects (the estimation target).
    pub fn true_exposure_effects(&self) -> Vec<f64> {
        (0..self.spec.n_states)
            .map(|j| self.params.outcome.exposure.at(j))
            .collect()
    }
}

fn two_state_params() -> ParameterSet {
    let lambda = |intercept: f64| vec![intercept, 0.3, -0.2, 0.2, 0.3, 0.25, -0.25];
    ParameterSet {
        initial: vec![0.5, 0.5],
        transition: TransitionCoefs {
            rows: vec![vec![lambda(-2.2)], vec![lambda(2.2)]],
        },
        outcome: OutcomeCoefs {
            intercept: StateCoef::per_state(vec![-1.0, 1.0]),
            y_lag: StateCoef::shared(0.3),
            exposure: StateCoef::per_state(vec![-1.0, 1.0]),
            c: vec![StateCoef::shared(0.4), StateCoef::shared(-0.3)],
            w: vec![StateCoef::shared(0.3), StateCoef::shared(0.4)],
            exposure_lag: StateCoef::per_state(vec![0.5, -0.5]),
            dispersion: 0.25,
        },
        exposure: ExposureCoefs {
            intercept: StateCoef::per_state(vec![-0.7, 0.7]),
            a_lag: StateCoef::shared(0.3),
            w: vec![StateCoef::shared(0.2), StateCoef::shared(-0.3)],
            c_lag: vec![StateCoef::shared(0.25), StateCoef::shared(-0.2)],
            y_lag: StateCoef::shared(0.2),
            dispersion: 0.49,
            cutpoints: vec![],
        },
        covariates: vec![
            CovariateCoefs {
                intercept: StateCoef::per_state(vec![-0.9, 0.9]),
                c_lag: vec![StateCoef::shared(0.35), StateCoef::shared(0.1)],
                w: vec![StateCoef::shared(0.25), StateCoef::shared(0.2)],
                a_lag: StateCoef::shared(0.2),
                y_lag: StateCoef::shared(0.15),
                dispersion: 0.49,
            },
            CovariateCoefs {
                intercept: StateCoef::per_state(vec![0.8, -0.8]),
                c_lag: vec![StateCoef::shared(0.1), StateCoef::shared(0.35)],
                w: vec![StateCoef::shared(-0.2), StateCoef::shared(0.25)],
                a_lag: StateCoef::shared(-0.15),
                y_lag: StateCoef::shared(0.1),
                dispersion: 0.49,
            },
        ],
    }
}

fn three_state_params() -> ParameterSet {
    let lam = |intercept: f64| vec![intercept, 0.2, -0.15, 0.15, 0.2, 0.2, -0.2];
    ParameterSet {
        initial: vec![1.0 / 3.0; 3],
        transition: TransitionCoefs {
            rows: vec![
                vec![lam(-2.5), lam(-3.0)],
                vec![lam(2.0), lam(-1.0)],
                vec![lam(-1.0), lam(2.0)],
            ],
        },
        outcome: OutcomeCoefs {
            intercept: StateCoef::per_state(vec![-1.5, 0.0, 1.5]),
            y_lag: StateCoef::shared(0.3),
            exposure: StateCoef::per_state(vec![-2.0, 0.0, 2.0]),
            c: vec![StateCoef::shared(0.4), StateCoef::shared(-0.3)],
            w: vec![StateCoef::shared(0.3), StateCoef::shared(0.4)],
            exposure_lag: StateCoef::per_state(vec![0.5, 0.0, -0.5]),
            dispersion: 0.25,
        },
        exposure: ExposureCoefs {
            intercept: StateCoef::per_state(vec![-1.0, 0.0, 1.0]),
            a_lag: StateCoef::shared(0.3),
            w: vec![StateCoef::shared(0.2), StateCoef::shared(-0.3)],
            c_lag: vec![StateCoef::shared(0.25), StateCoef::shared(-0.2)],
            y_lag: StateCoef::shared(0.2),
            dispersion: 0.49,
            cutpoints: vec![],
        },
        covariates: vec![
            CovariateCoefs {
                intercept: StateCoef::per_state(vec![-1.0, 0.0, 1.0]),
                c_lag: vec![StateCoef::shared(0.35), StateCoef::shared(0.1)],
                w: vec![StateCoef::shared(0.25), StateCoef::shared(0.2)],
                a_lag: StateCoef::shared(0.2),
                y_lag: StateCoef::shared(0.15),
                dispersion: 0.49,
            },
            CovariateCoefs {
                intercept: StateCoef::per_state(vec![0.9, 0.0, -0.9]),
                c_lag: vec![StateCoef::shared(0.1), StateCoef::shared(0.35)],
                w: vec![StateCoef::shared(-0.2), StateCoef::shared(0.25)],
                a_lag: StateCoef::shared(-0.15),
                y_lag: StateCoef::shared(0.1),
                dispersion: 0.49,
            },
        ],
    }
}

fn ordinal_two_state_params() -> ParameterSet {
    let mut params = two_state_params();
    params.exposure = ExposureCoefs {
        // reference-state offset pinned at zero; cutpoints carry the base level
        intercept: StateCoef::per_state(vec![0.0, 1.4]),
        a_lag: StateCoef::shared(0.25),
        w: vec![StateCoef::shared(0.2), StateCoef::shared(-0.2)],
        c_lag: vec![StateCoef::shared(0.2), StateCoef::shared(-0.15)],
        y_lag: StateCoef::shared(0.15),
        dispersion: 1.0,
        cutpoints: vec![-1.0, 0.6, 2.2],
    };
    // exposure levels 0..3 span a wider range than the continuous scenario
    params.outcome.exposure = StateCoef::per_state(vec![-1.0, 1.0]);
    params.outcome.exposure_lag = StateCoef::per_state(vec![0.3, -0.3]);
    params
}

/// Simulates a complete multivariate series (with the true latent path) from
/// the configured process.
///
/// The first external covariate is an exogenous AR(1), the second the weekend
/// indicator (days `t` with `t mod 7 ∈ {6, 0}`, 1-based). Day 0 is drawn from
/// the state-conditional models with all lagged regressors at zero.
pub fn generate_dataset(config: &DgpConfig) -> Result<TimeSeriesDataset> {
    config.spec.validate()?;
    warn_if_explosive(&config.params);
    let t_len = config.len;
    if t_len < 3 {
        return Err(Error::InvalidConfig("series length must be at least 3".into()));
    }
    let mut rng = stream(config.seed, &[0]);

    // external covariates
    let mut w1 = Vec::with_capacity(t_len);
    let stationary_sd = config.w1_sd / (1.0 - config.w1_ar * config.w1_ar).max(1e-12).sqrt();
    w1.push(draw_normal(0.0, stationary_sd, &mut rng));
    for t in 1..t_len {
        let innov = draw_normal(0.0, config.w1_sd, &mut rng);
        w1.push(config.w1_ar * w1[t - 1] + innov);
    }
    let w2: Vec<f64> = (0..t_len)
        .map(|i| {
            let day = i + 1;
            if day % 7 == 6 || day % 7 == 0 { 1.0 } else { 0.0 }
        })
        .collect();
    let w = vec![w1, w2];

    let dataset = simulate_chain(&config.spec, &config.params, &w, None, config.seed)?;
    Ok(dataset)
}

/// Day-0 values to condition on when re-simulating an observed series.
#[derive(Debug, Clone)]
pub struct FirstDay {
    pub y: f64,
    pub a: f64,
    pub c: Vec<f64>,
}

/// Simulates the chain `(L, C, A, Y)` given external covariates, optionally
/// conditioning on the observed first day (parametric bootstrap replicates).
pub fn simulate_chain(
    spec: &ModelSpec,
    params: &ParameterSet,
    w: &[Vec<f64>],
    first_day: Option<&FirstDay>,
    seed: u64,
) -> Result<TimeSeriesDataset> {
    let t_len = w.first().map_or(0, Vec::len);
    let q_c = spec.family_c.len();
    let mut rng = stream(seed, &[1]);

    let mut states = Vec::with_capacity(t_len);
    let mut y = Vec::with_capacity(t_len);
    let mut a = Vec::with_capacity(t_len);
    let mut c: Vec<Vec<f64>> = vec![Vec::with_capacity(t_len); q_c];

    let w_at = |t: usize| -> Vec<f64> { w.iter().map(|col| col[t]).collect() };

    // day 0
    let l0 = sample_categorical(&mut rng, &params.initial);
    states.push(l0);
    let w0 = w_at(0);
    let zeros = vec![0.0; q_c];
    match first_day {
        Some(fd) => {
            for (k, col) in c.iter_mut().enumerate() {
                col.push(fd.c[k]);
            }
            a.push(fd.a);
            y.push(fd.y);
        }
        None => {
            let mut c0 = Vec::with_capacity(q_c);
            for k in 0..q_c {
                let regr = CovariateRegressors { c_lag: &zeros, w: &w0, a_lag: 0.0, y_lag: 0.0 };
                let lp = covariate_linear_predictor(params, k, l0, &regr);
                c0.push(draw_emission(spec.family_c[k], lp, params.covariates[k].dispersion, &[], &mut rng));
            }
            let regr = ExposureRegressors { a_lag: 0.0, w: &w0, c_lag: &zeros, y_lag: 0.0 };
            let lp = exposure_linear_predictor(params, l0, &regr);
            let a0 = draw_emission(spec.family_a, lp, params.exposure.dispersion, &params.exposure.cutpoints, &mut rng);
            let regr = OutcomeRegressors { y_lag: 0.0, exposure: a0, c: &c0, w: &w0, exposure_lag: 0.0 };
            let lp = outcome_linear_predictor(params, l0, &regr);
            let y0 = draw_emission(spec.family_y, lp, params.outcome.dispersion, &[], &mut rng);
            for (k, col) in c.iter_mut().enumerate() {
                col.push(c0[k]);
            }
            a.push(a0);
            y.push(y0);
        }
    }

    for t in 1..t_len {
        let w_now = w_at(t);
        let w_prev = w_at(t - 1);
        let c_prev: Vec<f64> = c.iter().map(|col| col[t - 1]).collect();
        let regr = TransitionRegressors {
            c: c_prev.clone(),
            w: w_prev,
            y: y[t - 1],
            a: a[t - 1],
        };
        let row = transition_row(params, states[t - 1], &regr);
        let l = sample_categorical(&mut rng, &row);
        states.push(l);

        let mut c_now = Vec::with_capacity(q_c);
        for k in 0..q_c {
            let regr = CovariateRegressors { c_lag: &c_prev, w: &w_now, a_lag: a[t - 1], y_lag: y[t - 1] };
            let lp = covariate_linear_predictor(params, k, l, &regr);
            c_now.push(draw_emission(spec.family_c[k], lp, params.covariates[k].dispersion, &[], &mut rng));
        }
        let regr = ExposureRegressors { a_lag: a[t - 1], w: &w_now, c_lag: &c_prev, y_lag: y[t - 1] };
        let lp = exposure_linear_predictor(params, l, &regr);
        let a_now = draw_emission(spec.family_a, lp, params.exposure.dispersion, &params.exposure.cutpoints, &mut rng);
        let regr = OutcomeRegressors { y_lag: y[t - 1], exposure: a_now, c: &c_now, w: &w_now, exposure_lag: a[t - 1] };
        let lp = outcome_linear_predictor(params, l, &regr);
        let y_now = draw_emission(spec.family_y, lp, params.outcome.dispersion, &[], &mut rng);

        for (k, col) in c.iter_mut().enumerate() {
            col.push(c_now[k]);
        }
        a.push(a_now);
        y.push(y_now);
        debug_assert_eq!(states.len(), t + 1);
    }

    Ok(TimeSeriesDataset {
        y,
        y_missing: vec![false; t_len],
        a,
        c,
        w: w.to_vec(),
        latent_truth: Some(states),
    })
}

/// Masks the outcome missing-at-random; masked entries are zeroed so that a
/// masked dataset round-trips bit-exactly through serialization.
pub fn apply_mar_missingness(
    dataset: &TimeSeriesDataset,
    rule: &MissingnessRule,
    seed: u64,
) -> Result<TimeSeriesDataset> {
    let mut out = dataset.clone();
    let mut rng = stream(seed, &[2]);
    let t_len = dataset.len();
    match rule {
        MissingnessRule::None => {}
        MissingnessRule::Constant { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(Error::InvalidConfig(format!("missing rate {rate} outside [0, 1)")));
            }
            for t in 0..t_len {
                if rng.random::<f64>() < *rate {
                    out.y_missing[t] = true;
                    out.y[t] = 0.0;
                }
            }
        }
        MissingnessRule::Logistic { intercept, w_coefficients } => {
            if w_coefficients.len() != dataset.n_external() {
                return Err(Error::InvalidConfig(
                    "logistic missingness needs one coefficient per external covariate".into(),
                ));
            }
            for t in 0..t_len {
                let lp: f64 = intercept
                    + w_coefficients
                        .iter()
                        .zip(&dataset.w)
                        .map(|(b, col)| b * col[t])
                        .sum::<f64>();
                if rng.random::<f64>() < sigmoid(lp) {
                    out.y_missing[t] = true;
                    out.y[t] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

fn warn_if_explosive(params: &ParameterSet) {
    let checks = [
        ("outcome y-lag", &params.outcome.y_lag),
        ("exposure a-lag", &params.exposure.a_lag),
    ];
    for (name, coef) in checks {
        if coef.0.iter().any(|v| v.abs() >= 1.0) {
            log::warn!("{name} coefficient at or beyond 1: simulated series may be explosive");
        }
    }
    for (k, cc) in params.covariates.iter().enumerate() {
        if cc.c_lag.iter().any(|c| c.0.iter().any(|v| v.abs() >= 1.0)) {
            log::warn!("covariate {} lag coefficient at or beyond 1: simulated series may be explosive", k + 1);
        }
    }
}

fn draw_emission(
    family: GlmFamily,
    lp: f64,
    dispersion: f64,
    cutpoints: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    match family {
        GlmFamily::Gaussian => draw_normal(lp, dispersion.max(0.0).sqrt(), rng),
        GlmFamily::Bernoulli => (rng.random::<f64>() < sigmoid(lp)) as usize as f64,
        GlmFamily::Ordinal { categories } => {
            let u: f64 = rng.random();
            let mut level = categories - 1;
            for (k, &cut) in cutpoints.iter().enumerate() {
                if u < sigmoid(cut - lp) {
                    level = k;
                    break;
                }
            }
            level as f64
        }
        GlmFamily::Multinomial { .. } => unreachable!("multinomial emissions unsupported"),
    }
}

fn draw_normal(mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).expect("finite sd").sample(rng)
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

// ---------------------------------------------------------------------------
// Study driver
// ---------------------------------------------------------------------------

/// Estimation methods compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Naive,
    Single,
    MultipleY,
    MultipleYAndL,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Single => "single",
            Method::MultipleY => "multiple-y",
            Method::MultipleYAndL => "multiple-y-and-l",
        }
    }

    pub fn mode(&self) -> Option<ImputationMode> {
        match self {
            Method::Naive => None,
            Method::Single => Some(ImputationMode::Single),
            Method::MultipleY => Some(ImputationMode::MultipleY),
            Method::MultipleYAndL => Some(ImputationMode::MultipleYAndL),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "single" => Ok(Method::Single),
            "multiple-y" => Ok(Method::MultipleY),
            "multiple-y-and-l" => Ok(Method::MultipleYAndL),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dgp: DgpConfig,
    pub n_sims: usize,
    pub methods: Vec<Method>,
    /// Bootstrap replicates per simulation (0 disables interval scoring).
    pub bootstrap_reps: usize,
    pub imputations: usize,
    pub seed: u64,
}

/// One method × state estimate from one simulation replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub sim: usize,
    pub method: Method,
    /// 0-based latent state the estimate targets.
    pub state: usize,
    pub truth: f64,
    pub estimate: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub covered: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub sim: usize,
    pub method: Method,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub sim: usize,
    pub method: Method,
    pub message: String,
}

/// Aggregated output of [`run_study`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub estimates: Vec<EstimateRecord>,
    pub accuracy: Vec<AccuracyRecord>,
    pub failures: Vec<FailureRecord>,
    pub truths: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_sims: usize,
}

impl StudyReport {
    /// Interval coverage per method and state, over replicates with a scored
    /// interval.
    pub fn coverage(&self, method: Method, state: usize) -> Option<f64> {
        let scored: Vec<&EstimateRecord> = self
            .estimates
            .iter()
            .filter(|e| e.method == method && e.state == state && e.covered.is_some())
            .collect();
        if scored.is_empty() {
            return None;
        }
        Some(scored.iter().filter(|e| e.covered == Some(true)).count() as f64 / scored.len() as f64)
    }

    pub fn mean_estimate(&self, method: Method, state: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .estimates
            .iter()
            .filter(|e| e.method == method && e.state == state)
            .map(|e| e.estimate)
            .collect();
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_accuracy(&self, method: Method) -> Option<f64> {
        let vals: Vec<f64> = self
            .accuracy
            .iter()
            .filter(|a| a.method == method)
            .map(|a| a.accuracy)
            .collect();
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Runs the full simulation study: generate, mask, fit every method, score
/// aligned prediction accuracy and (when bootstrap replicates are requested)
/// interval coverage of the state-conditional exposure effects.
///
/// Per-replicate failures are recorded, never fatal. Replicates run in
/// parallel on derived seeds; the report is assembled in replicate order.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    let truths = config.dgp.true_exposure_effects();
    let n_states = config.dgp.spec.n_states;

    let per_sim: Vec<(Vec<EstimateRecord>, Vec<AccuracyRecord>, Vec<FailureRecord>)> = (0..config
        .n_sims)
        .into_par_iter()
        .map(|sim| {
            let mut estimates = Vec::new();
            let mut accuracy = Vec::new();
            let mut failures = Vec::new();
            let sim_seed = derive_seed(config.seed, &[sim as u64, 11]);
            let mut dgp = config.dgp.clone();
            dgp.seed = sim_seed;
            let complete = match generate_dataset(&dgp) {
                Ok(d) => d,
                Err(e) => {
                    failures.push(FailureRecord {
                        sim,
                        method: Method::Naive,
                        message: format!("generation failed: {e}"),
                    });
                    return (estimates, accuracy, failures);
                }
            };
            let masked = match apply_mar_missingness(&complete, &dgp.missing, derive_seed(sim_seed, &[3])) {
                Ok(d) => d,
                Err(e) => {
                    failures.push(FailureRecord {
                        sim,
                        method: Method::Naive,
                        message: format!("masking failed: {e}"),
                    });
                    return (estimates, accuracy, failures);
                }
            };
            let truth_path = complete.latent_truth.as_ref().expect("simulated truth");

            for &method in &config.methods {
                match method {
                    Method::Naive => match fit_naive(&masked) {
                        Ok(nf) => {
                            let (lo, hi) = nf.exposure_ci();
                            for state in 0..n_states {
                                estimates.push(EstimateRecord {
                                    sim,
                                    method,
                                    state,
                                    truth: truths[state],
                                    estimate: nf.exposure_coefficient(),
                                    ci_low: Some(lo),
                                    ci_high: Some(hi),
                                    covered: Some(lo <= truths[state] && truths[state] <= hi),
                                });
                            }
                        }
                        Err(e) => failures.push(FailureRecord {
                            sim,
                            method,
                            message: e.to_string(),
                        }),
                    },
                    _ => {
                        let mode = method.mode().expect("non-naive method");
                        let fit_config = FitConfig {
                            mode,
                            imputations: config.imputations,
                            seed: derive_seed(sim_seed, &[method_tag(method), 5]),
                            ..FitConfig::default()
                        };
                        let result = fit(&config.dgp.spec, &masked, &fit_config);
                        match result {
                            Ok(fr) => {
                                let path = match viterbi(&config.dgp.spec, &fr.params, &masked, &fr.y_imputed) {
                                    Ok(p) => p,
                                    Err(e) => {
                                        failures.push(FailureRecord {
                                            sim,
                                            method,
                                            message: format!("decoding failed: {e}"),
                                        });
                                        continue;
                                    }
                                };
                                let alignment = match align_labels(&path.states, truth_path, n_states) {
                                    Ok(a) => a,
                                    Err(e) => {
                                        failures.push(FailureRecord {
                                            sim,
                                            method,
                                            message: format!("alignment failed: {e}"),
                                        });
                                        continue;
                                    }
                                };
                                accuracy.push(AccuracyRecord { sim, method, accuracy: alignment.accuracy });
                                let aligned = fr.params.permute_states(&alignment.permutation);

                                let cis = if config.bootstrap_reps > 0 {
                                    let bconfig = BootstrapConfig {
                                        replicates: config.bootstrap_reps,
                                        seed: derive_seed(sim_seed, &[method_tag(method), 7]),
                                        ..BootstrapConfig::default()
                                    };
                                    match block_bootstrap(&config.dgp.spec, &masked, &fr, &bconfig, &[]) {
                                        Ok(b) => {
                                            let per_state: Vec<Option<(f64, f64)>> = (0..n_states)
                                                .map(|s| {
                                                    // bootstrap CIs are labeled in the fit's
                                                    // state order; map to truth order
                                                    let orig = alignment.permutation[s];
                                                    b.exposure_ci(orig)
                                                })
                                                .collect();
                                            Some(per_state)
                                        }
                                        Err(e) => {
                                            failures.push(FailureRecord {
                                                sim,
                                                method,
                                                message: format!("bootstrap failed: {e}"),
                                            });
                                            None
                                        }
                                    }
                                } else {
                                    None
                                };

                                for state in 0..n_states {
                                    let estimate = aligned.outcome.exposure.at(state);
                                    let ci = cis.as_ref().and_then(|c| c[state]);
                                    estimates.push(EstimateRecord {
                                        sim,
                                        method,
                                        state,
                                        truth: truths[state],
                                        estimate,
                                        ci_low: ci.map(|c| c.0),
                                        ci_high: ci.map(|c| c.1),
                                        covered: ci.map(|c| c.0 <= truths[state] && truths[state] <= c.1),
                                    });
                                }
                            }
                            Err(e) => failures.push(FailureRecord {
                                sim,
                                method,
                                message: e.to_string(),
                            }),
                        }
                    }
                }
            }
            (estimates, accuracy, failures)
        })
        .collect();

    let mut estimates = Vec::new();
    let mut accuracy = Vec::new();
    let mut failures = Vec::new();
    for (e, a, f) in per_sim {
        estimates.extend(e);
        accuracy.extend(a);
        failures.extend(f);
    }
    Ok(StudyReport {
        estimates,
        accuracy,
        failures,
        truths,
        methods: config.methods.clone(),
        n_sims: config.n_sims,
    })
}

fn method_tag(method: Method) -> u64 {
    match method {
        Method::Naive => 0,
        Method::Single => 1,
        Method::MultipleY => 2,
        Method::MultipleYAndL => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let config = DgpConfig { len: 50, ..DgpConfig::two_state(9) };
        let a = generate_dataset(&config).unwrap();
        let b = generate_dataset(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masking_rate_zero_is_identity() {
        let config = DgpConfig { len: 40, ..DgpConfig::two_state(4) };
        let d = generate_dataset(&config).unwrap();
        let masked = apply_mar_missingness(&d, &MissingnessRule::Constant { rate: 0.0 }, 1).unwrap();
        assert_eq!(d, masked);
    }

    #[test]
    fn masking_rate_near_binomial_expectation() {
        let config = DgpConfig { len: 500, ..DgpConfig::two_state(11) };
        let d = generate_dataset(&config).unwrap();
        let masked = apply_mar_missingness(&d, &MissingnessRule::Constant { rate: 0.3 }, 2).unwrap();
        let n = masked.n_missing() as f64;
        let sd = (500.0_f64 * 0.3 * 0.7).sqrt();
        assert!((n - 150.0).abs() < 3.0 * sd, "masked {n} far from 150");
    }

    #[test]
    fn masking_rejects_rate_one() {
        let config = DgpConfig { len: 20, ..DgpConfig::two_state(5) };
        let d = generate_dataset(&config).unwrap();
        assert!(apply_mar_missingness(&d, &MissingnessRule::Constant { rate: 1.0 }, 1).is_err());
    }

    #[test]
    fn uniform_transitions_visit_states_evenly() {
        let mut config = DgpConfig { len: 500, ..DgpConfig::two_state(21) };
        config.params.transition = TransitionCoefs::zeros(2, 2, 2);
        let d = generate_dataset(&config).unwrap();
        let truth = d.latent_truth.unwrap();
        let ones = truth.iter().filter(|&&l| l == 1).count() as f64;
        let sd = (500.0_f64 * 0.25).sqrt();
        assert!((ones - 250.0).abs() < 3.0 * sd, "state-1 count {ones}");
    }

    #[test]
    fn weekend_indicator_is_periodic() {
        let config = DgpConfig { len: 21, ..DgpConfig::two_state(2) };
        let d = generate_dataset(&config).unwrap();
        // 1-based days 6, 7, 13, 14, 20, 21 are weekends
        let expect: Vec<f64> = (1..=21)
            .map(|day| if day % 7 == 6 || day % 7 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(d.w[1], expect);
    }

    #[test]
    fn ordinal_exposure_levels_in_range() {
        let config = DgpConfig { len: 300, ..DgpConfig::ordinal_two_state(3) };
        let d = generate_dataset(&config).unwrap();
        assert!(d.a.iter().all(|&v| (0.0..=3.0).contains(&v) && v.fract() == 0.0));
        // all four levels appear at this length
        for level in 0..4 {
            assert!(d.a.iter().any(|&v| v == level as f64), "level {level} never drawn");
        }
    }
}
