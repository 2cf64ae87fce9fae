//! Bayesian nonparametric inference of covariate-to-parameter maps for
//! populations described by parametrised linear ODE initial value problems.
//!
//! Layers, bottom up: [`linear_ode`] (closed-form solutions, coefficient maps,
//! stability probes), [`pk`] (the two-compartment instance), [`forward`]
//! (population forward operator and its linearisation), [`prior`] (series
//! Gaussian prior) and [`bayes`] (data, pCN sampling, diagnostics).

pub mod bayes;
pub mod covariates;
pub mod error;
pub mod forward;
pub mod linear_ode;
pub mod oracle;
pub mod pk;
pub mod prior;
pub mod rng;
pub mod stats;

pub use error::{CpmError, Result};
