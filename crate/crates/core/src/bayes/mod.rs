//! Observation model, posterior sampling and asymptotic diagnostics.

mod contraction;
mod data;
mod diagnostics;
mod pcn;

pub use contraction::{
    construct_truth, contraction_study, ContractionLevel, ContractionProblem, ContractionRow,
    ContractionTable,
};
pub use data::{
    generate_dataset, log_likelihood, log_likelihood_rows, residual_sum_of_squares, Dataset,
};
pub use diagnostics::{
    bvm_diagnostic, efficient_centering, lan_diagnostic, lan_reference, BvmReport, LanReport,
    MIN_FUNCTIONAL_ESS,
};
pub use pcn::{
    functional_weights, run_pcn, summarize, Chain, ChainConfig, PosteriorSummary, Tracking,
};
