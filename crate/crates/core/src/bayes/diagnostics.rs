//! Local asymptotic normality and Bernstein-von Mises diagnostics.
//!
//! The noise level enters the information operator as `J^T J / sigma^2`.
//! With `psi_bar = (J^T J)^{-1} psi` the efficient variance of `<theta, psi>`
//! is `sigma^2 |J psi_bar|^2_{L2}` and the efficient centring is
//! `<psi, theta0> + (1/N) sum_k <J psi_bar(X_k), eps_k>`; both reduce to the
//! unit-noise formulas at `sigma = 1`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::pcn::{functional_weights, Chain};
use crate::covariates::{CovariateBox, CovariateSampler, Quadrature};
use crate::error::{CpmError, Result};
use crate::forward::{solve_information_at, ForwardContext};
use crate::prior::{BasisMatrix, CpmField};
use crate::rng::{standard_normal, substream};
use crate::stats::{effective_sample_size, ks_test_normal, mean, thin_by_ess, variance};

/// Minimum effective sample size of the functional trace for the BvM check.
pub const MIN_FUNCTIONAL_ESS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanReport {
    pub n: usize,
    pub replications: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    /// `|I_{theta0}[h]|^2` including the `1/sigma^2` noise normalisation.
    pub reference: f64,
    pub log_ratios: Vec<f64>,
}

fn rows_of(field: &CpmField, basis: &BasisMatrix) -> DMatrix<f64> {
    field.eval_at(basis)
}

fn row(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    m.row(k).iter().copied().collect()
}

/// `int |J(theta0(x)) h(x)|^2 d zeta(x) / sigma^2` by quadrature.
pub fn lan_reference(
    ctx: &ForwardContext,
    theta0: &CpmField,
    h: &CpmField,
    quadrature: &Quadrature,
) -> Result<f64> {
    let basis = BasisMatrix::new(theta0.spec(), &quadrature.points);
    let (t0, hv) = (rows_of(theta0, &basis), rows_of(h, &basis));
    let mut values = Vec::with_capacity(basis.len());
    for k in 0..basis.len() {
        let j = ctx.forward_jacobian(&row(&t0, k))?;
        let hk = DVector::from_iterator(hv.ncols(), hv.row(k).iter().copied());
        values.push((j * hk).norm_squared());
    }
    Ok(quadrature.integrate(values.into_iter()) / (ctx.noise_sd * ctx.noise_sd))
}

/// Simulates `log dP_{theta0 + h/sqrt(N)} / dP_{theta0}` under `theta0`.
/// Replication `r` draws its covariates and noise from substreams `(r, 0)`
/// and `(r, 1)` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn lan_diagnostic(
    ctx: &ForwardContext,
    theta0: &CpmField,
    h: &CpmField,
    sampler: &CovariateSampler,
    domain: &CovariateBox,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<LanReport> {
    if !(ctx.noise_sd > 0.0 && ctx.noise_sd.is_finite()) {
        return Err(CpmError::Precondition(
            "LAN needs a finite positive noise level".into(),
        ));
    }
    if replications < 2 || n == 0 {
        return Err(CpmError::Precondition(
            "need N >= 1 and at least two replications".into(),
        ));
    }
    let moved = theta0.add(&h.scaled(1.0 / (n as f64).sqrt()))?;
    let inv2 = 0.5 / (ctx.noise_sd * ctx.noise_sd);
    let log_ratios: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let xs = sampler.sample_points(domain, n, &mut substream(seed, &[r as u64, 0]));
            let basis = BasisMatrix::new(theta0.spec(), &xs);
            let g0 = ctx.forward_rows(&rows_of(theta0, &basis))?;
            let g1 = ctx.forward_rows(&rows_of(&moved, &basis))?;
            let mut rng = substream(seed, &[r as u64, 1]);
            let mut acc = 0.0;
            for k in 0..n {
                for j in 0..ctx.dim_obs() {
                    let y = g0[(k, j)] + ctx.noise_sd * standard_normal(&mut rng);
                    acc += (y - g0[(k, j)]).powi(2) - (y - g1[(k, j)]).powi(2);
                }
            }
            Ok(inv2 * acc)
        })
        .collect::<Result<_>>()?;
    let reference = lan_reference(ctx, theta0, h, &sampler.quadrature(domain))?;
    let var = variance(&log_ratios);
    Ok(LanReport {
        n,
        replications,
        mean: mean(&log_ratios),
        variance: var,
        std_error: (var / replications as f64).sqrt(),
        reference,
        log_ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvmReport {
    pub n: usize,
    /// `Psi_hat_N`.
    pub psi_hat: f64,
    pub true_value: f64,
    /// `sigma^2 |I_{theta0}[psi_bar]|^2` (efficient variance of `sqrt(N) <theta, psi>`).
    pub target_variance: f64,
    pub functional_ess: f64,
    /// Posterior sd of `sqrt(N) <theta, psi>`.
    pub posterior_sd: f64,
    pub posterior_mean_shift: f64,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    pub ks_sample_size: usize,
    /// `sqrt(N) (<theta, psi> - Psi_hat_N)` for every kept draw.
    pub draws: Vec<f64>,
}

/// Efficient centring `Psi_hat_N` and target variance for `psi`.
pub fn efficient_centering(
    ctx: &ForwardContext,
    data: &Dataset,
    theta0: &CpmField,
    psi: &CpmField,
    quadrature: &Quadrature,
) -> Result<(f64, f64, f64)> {
    let spec = theta0.spec();
    let true_value: f64 = functional_weights(psi, quadrature)
        .iter()
        .zip(theta0.coeffs())
        .map(|(w, c)| w * c)
        .sum();

    // Influence term over the data.
    let basis = BasisMatrix::new(spec, &data.covariates);
    let (t0, pv) = (rows_of(theta0, &basis), rows_of(psi, &basis));
    let mut influence = 0.0;
    for k in 0..data.len() {
        let p = row(&t0, k);
        let psi_k = DVector::from_iterator(pv.ncols(), pv.row(k).iter().copied());
        let bar = solve_information_at(ctx, &p, &psi_k, data.covariates.point(k))?;
        let jb = ctx.forward_jacobian(&p)? * bar;
        influence += jb
            .iter()
            .zip(data.noise.row(k).iter())
            .map(|(a, e)| a * e)
            .sum::<f64>();
    }
    let psi_hat = true_value + influence / data.len() as f64;

    // Target variance over the covariate law.
    let qb = BasisMatrix::new(spec, &quadrature.points);
    let (qt, qp) = (rows_of(theta0, &qb), rows_of(psi, &qb));
    let mut values = Vec::with_capacity(qb.len());
    for k in 0..qb.len() {
        let p = row(&qt, k);
        let psi_k = DVector::from_iterator(qp.ncols(), qp.row(k).iter().copied());
        let bar = solve_information_at(ctx, &p, &psi_k, quadrature.points.point(k))?;
        values.push((ctx.forward_jacobian(&p)? * bar).norm_squared());
    }
    let target_variance = ctx.noise_sd * ctx.noise_sd * quadrature.integrate(values.into_iter());
    Ok((psi_hat, true_value, target_variance))
}

/// Compares the posterior of `sqrt(N)(<theta, psi> - Psi_hat_N)` with
/// `N(0, target_variance)`. `functional` indexes the chain trace that
/// tracks `<theta, psi>` (see [`functional_weights`]).
pub fn bvm_diagnostic(
    ctx: &ForwardContext,
    data: &Dataset,
    chain: &Chain,
    functional: usize,
    psi: &CpmField,
    theta0: &CpmField,
    quadrature: &Quadrature,
) -> Result<BvmReport> {
    let trace = chain.functional_traces.get(functional).ok_or_else(|| {
        CpmError::Precondition(format!("chain does not track functional {functional}"))
    })?;
    let n = data.len();
    let sn = (n as f64).sqrt();
    let (psi_hat, true_value, target_variance) =
        efficient_centering(ctx, data, theta0, psi, quadrature)?;
    let draws: Vec<f64> = trace.iter().map(|v| sn * (v - psi_hat)).collect();
    if target_variance == 0.0 && draws.iter().all(|d| *d == 0.0) {
        return Ok(BvmReport {
            n,
            psi_hat,
            true_value,
            target_variance,
            functional_ess: draws.len() as f64,
            posterior_sd: 0.0,
            posterior_mean_shift: 0.0,
            ks_statistic: None,
            ks_p_value: None,
            ks_sample_size: 0,
            draws,
        });
    }
    let ess = effective_sample_size(trace);
    if ess < MIN_FUNCTIONAL_ESS {
        return Err(CpmError::InsufficientSamples(format!(
            "functional ESS {ess:.1} below {MIN_FUNCTIONAL_ESS}"
        )));
    }
    let thinned = thin_by_ess(&draws, ess);
    let ks = ks_test_normal(&thinned, 0.0, target_variance.sqrt());
    Ok(BvmReport {
        n,
        psi_hat,
        true_value,
        target_variance,
        functional_ess: ess,
        posterior_sd: variance(&draws).sqrt(),
        posterior_mean_shift: mean(&draws),
        ks_statistic: Some(ks.statistic),
        ks_p_value: Some(ks.p_value),
        ks_sample_size: ks.n,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_ode::TimeDesign;
    use crate::pk::{PkConfig, TwoCompartment};
    use crate::prior::{sample_base_prior, SeriesPriorSpec};
    use std::sync::Arc;

    fn setup() -> (ForwardContext, SeriesPriorSpec, CovariateBox) {
        let cfg = PkConfig::default();
        let model = Arc::new(TwoCompartment::new(cfg.clone()).unwrap());
        let ctx = ForwardContext::new(
            model,
            TimeDesign::from_times(vec![0.5, 1.0, 2.0, 4.0]).unwrap(),
            0.5,
        )
        .unwrap();
        let spec = SeriesPriorSpec::new(8.0, 4, 4, cfg.covariate_box.clone()).unwrap();
        (ctx, spec, cfg.covariate_box)
    }

    #[test]
    fn zero_direction_gives_zero_log_ratio() {
        let (ctx, spec, domain) = setup();
        let theta0 = sample_base_prior(&spec, 1).scaled(0.2);
        let r = lan_diagnostic(
            &ctx,
            &theta0,
            &CpmField::zeros(&spec),
            &CovariateSampler::UniformBox,
            &domain,
            50,
            4,
            3,
        )
        .unwrap();
        assert!(r.log_ratios.iter().all(|v| *v == 0.0));
        assert_eq!(r.reference, 0.0);
    }

    #[test]
    fn lan_reference_with_constant_direction() {
        // theta0 = 0, h = e2: J h is the second column of J(0), constant in x.
        let (ctx, spec, domain) = setup();
        let h = CpmField::constant(&spec, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let q = CovariateSampler::UniformBox.quadrature(&domain);
        let r = lan_reference(&ctx, &CpmField::zeros(&spec), &h, &q).unwrap();
        let j = ctx.forward_jacobian(&[0.0; 4]).unwrap();
        let expected = j.column(1).norm_squared() / 0.25;
        assert!((r - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn centring_for_zero_functional() {
        let (ctx, spec, domain) = setup();
        let theta0 = sample_base_prior(&spec, 2).scaled(0.2);
        let data = super::super::data::generate_dataset(
            &ctx,
            &theta0,
            &CovariateSampler::UniformBox,
            &domain,
            30,
            1,
        )
        .unwrap();
        let q = CovariateSampler::UniformBox.quadrature(&domain);
        let (hat, truth, var) =
            efficient_centering(&ctx, &data, &theta0, &CpmField::zeros(&spec), &q).unwrap();
        assert_eq!((hat, truth, var), (0.0, 0.0, 0.0));
    }
}
