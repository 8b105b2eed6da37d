//! Autoregressive hidden Markov models with covariate-dependent transitions
//! for N-of-1 causal effect estimation.
//!
//! A latent daily state (with `J` levels) modifies the effect of an exposure
//! on an outcome in a single subject's multivariate time series. The crate
//! estimates the model by EM with weighted GLM updates, handles missing
//! outcomes by marginalization plus recursive imputation (single or
//! multiple), decodes the latent path by Viterbi, quantifies uncertainty by
//! block or parametric bootstrap, and turns fits into contemporaneous and
//! lagged individual causal effects through a Monte Carlo g-formula.

pub mod bootstrap;
pub mod decode;
pub mod effects;
pub mod em;
pub mod error;
pub mod glm;
pub mod io;
pub mod model;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
