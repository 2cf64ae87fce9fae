use std::sync::Arc;

use cpm_core::bayes::{construct_truth, generate_dataset, run_pcn, Chain, ChainConfig, Tracking};
use cpm_core::covariates::CovariateSampler;
use cpm_core::forward::ForwardContext;
use cpm_core::linear_ode::TimeDesign;
use cpm_core::pk::{PkConfig, TwoCompartment};
use cpm_core::prior::{CpmField, SeriesPriorSpec};

fn setup(
    n: usize,
) -> (
    ForwardContext,
    SeriesPriorSpec,
    CpmField,
    cpm_core::bayes::Dataset,
) {
    let pk = PkConfig::default();
    let domain = pk.covariate_box.clone();
    let design = TimeDesign::from_times(vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]).unwrap();
    let ctx = ForwardContext::new(Arc::new(TwoCompartment::new(pk).unwrap()), design, 0.5).unwrap();
    let spec = SeriesPriorSpec::new(8.0, 8, 4, domain.clone()).unwrap();
    let truth = construct_truth(&spec, 42, 4, 1.0);
    let data =
        generate_dataset(&ctx, &truth, &CovariateSampler::UniformBox, &domain, n, 9).unwrap();
    (ctx, spec, truth, data)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn chain_adapts_into_band_and_moves_towards_truth() {
    let (ctx, spec, truth, data) = setup(400);
    let config = ChainConfig {
        iterations: 8_000,
        burn_in: 3_000,
        seed: 5,
        ..ChainConfig::default()
    };
    let tracking = Tracking {
        functionals: vec![],
        coefficients: vec![0],
    };
    let chain = run_pcn(&ctx, &data, &spec, &config, &tracking).unwrap();
    assert!(
        (0.15..=0.35).contains(&chain.acceptance_rate),
        "acceptance {}",
        chain.acceptance_rate
    );
    assert_eq!(chain.kept, 5_000);
    assert_eq!(chain.coefficient_traces[0].len(), 5_000);
    let err = distance(&chain.mean_coeffs, truth.coeffs());
    let prior_err = distance(&vec![0.0; truth.coeffs().len()], truth.coeffs());
    assert!(
        err < prior_err,
        "posterior mean error {err} vs zero-field error {prior_err}"
    );
}

#[test]
fn chain_is_reproducible_and_round_trips() {
    let (ctx, spec, _, data) = setup(50);
    let config = ChainConfig {
        iterations: 1_000,
        burn_in: 200,
        seed: 3,
        ..ChainConfig::default()
    };
    let tracking = Tracking {
        functionals: vec![vec![1.0; spec.coeff_len()]],
        coefficients: vec![1, 2],
    };
    let a = run_pcn(&ctx, &data, &spec, &config, &tracking).unwrap();
    let b = run_pcn(&ctx, &data, &spec, &config, &tracking).unwrap();
    assert_eq!(a, b);
    assert_eq!(Chain::from_json(&a.to_json(&data).unwrap()).unwrap(), a);
}
