//! Preconditioned Crank-Nicolson sampling of the posterior under the
//! `N`-rescaled series prior.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{log_likelihood_rows, Dataset};
use crate::covariates::{CovariatePoints, Quadrature};
use crate::error::{CpmError, Result};
use crate::forward::ForwardContext;
use crate::prior::{
    rescale_factor, sample_base_prior_with, BasisMatrix, CpmField, SeriesPriorSpec,
};
use crate::rng::substream;
use crate::stats::effective_sample_size;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Initial pCN step `rho` in `(0, 1)`.
    pub step: f64,
    /// Iterations per adaptation window during burn-in.
    pub adapt_window: usize,
    pub target_acceptance: (f64, f64),
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: 10_000,
            step: 0.1,
            adapt_window: 100,
            target_acceptance: (0.15, 0.35),
            seed: 0,
        }
    }
}

/// Consecutive halvings without a single acceptance before giving up.
const MAX_HALVINGS: usize = 10;
const MAX_STEP: f64 = 0.999;

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.burn_in > 0 && self.burn_in < self.iterations) {
            return Err(CpmError::Validation(format!(
                "burn-in {} must lie strictly between 0 and the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.step > 0.0 && self.step < 1.0) {
            return Err(CpmError::Validation(format!(
                "pCN step must lie in (0, 1), got {}",
                self.step
            )));
        }
        if self.adapt_window == 0 {
            return Err(CpmError::Validation(
                "adaptation window must be positive".into(),
            ));
        }
        let (lo, hi) = self.target_acceptance;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(CpmError::Validation(
                "target acceptance band must satisfy 0 < lo < hi < 1".into(),
            ));
        }
        Ok(())
    }

    /// Same settings with `iterations` total and a 20% burn-in.
    pub fn with_iterations(&self, iterations: usize) -> Self {
        Self {
            iterations,
            burn_in: (iterations / 5).max(1),
            ..self.clone()
        }
    }
}

/// Linear functionals and coefficients whose traces are recorded.
#[derive(Debug, Clone, Default)]
pub struct Tracking {
    /// Each functional is `theta -> sum_i w_i c_i` over the flat coefficients.
    pub functionals: Vec<Vec<f64>>,
    /// Flat coefficient indices.
    pub coefficients: Vec<usize>,
}

/// Weights `w` such that `<theta, psi>_{L2} = w . coeffs(theta)` under the
/// quadrature rule.
pub fn functional_weights(psi: &CpmField, quadrature: &Quadrature) -> Vec<f64> {
    let spec = psi.spec();
    let basis = BasisMatrix::new(spec, &quadrature.points);
    let psi_values = psi.eval_at(&basis);
    let bl = spec.basis_len();
    let mut w = vec![0.0; spec.coeff_len()];
    for d in 0..spec.dim_p {
        for b in 0..bl {
            w[d * bl + b] = (0..basis.len())
                .map(|q| quadrature.weights[q] * basis.matrix()[(q, b)] * psi_values[(q, d)])
                .sum();
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub config: ChainConfig,
    /// Step in force after burn-in.
    pub final_step: f64,
    /// Acceptance rate over the post-burn-in iterations.
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    pub kept: usize,
    /// Mean of the post-burn-in coefficient draws.
    pub mean_coeffs: Vec<f64>,
    pub functional_traces: Vec<Vec<f64>>,
    pub coefficient_traces: Vec<Vec<f64>>,
    pub final_log_likelihood: f64,
}

const CHAIN_FORMAT: &str = "cpm-chain";
const CHAIN_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ChainFile {
    format: String,
    version: u32,
    model_id: String,
    noise_sd: f64,
    design: crate::linear_ode::TimeDesign,
    data_seed: u64,
    chain: Chain,
}

impl Chain {
    pub fn mean_field(&self, spec: &SeriesPriorSpec) -> Result<CpmField> {
        CpmField::from_coeffs(spec, self.mean_coeffs.clone())
    }

    /// Checkpoint with a header identifying the model, noise, design and seeds.
    pub fn to_json(&self, data: &Dataset) -> Result<String> {
        let file = ChainFile {
            format: CHAIN_FORMAT.into(),
            version: CHAIN_VERSION,
            model_id: data.model_id.clone(),
            noise_sd: data.noise_sd,
            design: data.design.clone(),
            data_seed: data.seed,
            chain: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ChainFile = serde_json::from_str(text)?;
        if f.format != CHAIN_FORMAT || f.version != CHAIN_VERSION {
            return Err(CpmError::Serialization(format!(
                "unsupported chain file {} v{}",
                f.format, f.version
            )));
        }
        Ok(f.chain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub acceptance_rate: f64,
    pub functional_means: Vec<f64>,
    pub functional_ess: Vec<f64>,
    /// Population L2 error of the posterior mean, when the truth is known.
    pub l2_error: Option<f64>,
    pub sup_error: Option<f64>,
}

/// Summaries of a chain; errors use `quadrature` for the L2 norm and `grid`
/// for the sup norm.
pub fn summarize(
    chain: &Chain,
    spec: &SeriesPriorSpec,
    truth: Option<&CpmField>,
    quadrature: &Quadrature,
    grid: &CovariatePoints,
) -> Result<PosteriorSummary> {
    let mean = chain.mean_field(spec)?;
    let (l2_error, sup_error) = match truth {
        Some(t) => {
            let diff = mean.sub(t)?;
            let qv = diff.eval_at(&BasisMatrix::new(spec, &quadrature.points));
            let l2 = quadrature
                .integrate(qv.row_iter().map(|r| r.norm_squared()))
                .sqrt();
            let gv = diff.eval_at(&BasisMatrix::new(spec, grid));
            (
                Some(l2),
                Some(gv.row_iter().map(|r| r.norm()).fold(0.0, f64::max)),
            )
        }
        None => (None, None),
    };
    Ok(PosteriorSummary {
        acceptance_rate: chain.acceptance_rate,
        functional_means: chain
            .functional_traces
            .iter()
            .map(|t| crate::stats::mean(t))
            .collect(),
        functional_ess: chain
            .functional_traces
            .iter()
            .map(|t| effective_sample_size(t))
            .collect(),
        l2_error,
        sup_error,
    })
}

fn adapt(step: f64, acceptance: f64, band: (f64, f64)) -> f64 {
    let next = if acceptance < band.0 {
        step * 0.5
    } else if acceptance > band.1 {
        step * 1.5
    } else {
        // Small pull towards the middle of the band.
        step * (0.5 * (acceptance - 0.5 * (band.0 + band.1))).exp()
    };
    next.min(MAX_STEP)
}

/// Runs a pCN chain for the posterior of `data` under the prior `spec`
/// rescaled for `N = data.len()`, started at the zero field.
///
/// Proposals `sqrt(1 - rho^2) theta + rho xi` with `xi` from the rescaled
/// prior are accepted with probability `min(1, exp(dlogL))`. During burn-in
/// the step is adapted every `adapt_window` iterations; afterwards it is
/// frozen. Proposals at which the forward map fails are rejected.
pub fn run_pcn(
    ctx: &ForwardContext,
    data: &Dataset,
    spec: &SeriesPriorSpec,
    config: &ChainConfig,
    tracking: &Tracking,
) -> Result<Chain> {
    config.validate()?;
    let coeff_len = spec.coeff_len();
    if spec.dim_p != ctx.dim_param() {
        return Err(CpmError::Precondition(
            "prior output dimension does not match the model".into(),
        ));
    }
    if tracking.functionals.iter().any(|w| w.len() != coeff_len)
        || tracking.coefficients.iter().any(|i| *i >= coeff_len)
    {
        return Err(CpmError::Precondition(
            "tracked functional or coefficient out of range".into(),
        ));
    }
    let n = data.len();
    let bl = spec.basis_len();
    let scale = rescale_factor(spec.alpha, spec.dim_x(), n);
    let sds: Vec<f64> = spec.prior_sds().iter().map(|s| s * scale).collect();
    let basis = BasisMatrix::new(spec, &data.covariates);
    let bm = basis.matrix();

    let mut rng = substream(config.seed, &[]);
    let mut theta = DMatrix::<f64>::zeros(bl, spec.dim_p);
    let mut theta_x = DMatrix::<f64>::zeros(n, spec.dim_p);
    let mut xi = DMatrix::<f64>::zeros(bl, spec.dim_p);
    let mut xi_x = DMatrix::<f64>::zeros(n, spec.dim_p);
    let mut prop = theta.clone();
    let mut prop_x = theta_x.clone();
    let mut ll = log_likelihood_rows(ctx, &theta_x, data)?;

    let mut step = config.step;
    let mut window_accepts = 0usize;
    let mut zero_windows = 0usize;
    let mut burn_accepts = 0usize;
    let mut accepts = 0usize;
    let kept = config.iterations - config.burn_in;
    let mut sum = vec![0.0; coeff_len];
    let mut functional_traces: Vec<Vec<f64>> = tracking
        .functionals
        .iter()
        .map(|_| Vec::with_capacity(kept))
        .collect();
    let mut coefficient_traces: Vec<Vec<f64>> = tracking
        .coefficients
        .iter()
        .map(|_| Vec::with_capacity(kept))
        .collect();

    for it in 0..config.iterations {
        sample_base_prior_with(spec, &sds, &mut rng, xi.as_mut_slice());
        xi_x.gemm(1.0, bm, &xi, 0.0);
        let a = (1.0 - step * step).sqrt();
        prop.zip_zip_apply(&theta, &xi, |p, t, x| *p = a * t + step * x);
        prop_x.zip_zip_apply(&theta_x, &xi_x, |p, t, x| *p = a * t + step * x);
        let u: f64 = rng.random();
        let accepted = match log_likelihood_rows(ctx, &prop_x, data) {
            Ok(ll_prop) if u.ln() < ll_prop - ll => {
                std::mem::swap(&mut theta, &mut prop);
                std::mem::swap(&mut theta_x, &mut prop_x);
                ll = ll_prop;
                true
            }
            _ => false,
        };

        if it < config.burn_in {
            window_accepts += accepted as usize;
            burn_accepts += accepted as usize;
            if (it + 1) % config.adapt_window == 0 {
                let rate = window_accepts as f64 / config.adapt_window as f64;
                if window_accepts == 0 {
                    if zero_windows == MAX_HALVINGS {
                        return Err(CpmError::Divergence(format!(
                            "no acceptance in {} iterations after {MAX_HALVINGS} step halvings (step {step:.3e})",
                            config.adapt_window
                        )));
                    }
                    zero_windows += 1;
                } else {
                    zero_windows = 0;
                }
                step = adapt(step, rate, config.target_acceptance);
                window_accepts = 0;
            }
            continue;
        }

        accepts += accepted as usize;
        let flat = theta.as_slice();
        for (s, c) in sum.iter_mut().zip(flat) {
            *s += c;
        }
        for (trace, w) in functional_traces.iter_mut().zip(&tracking.functionals) {
            trace.push(w.iter().zip(flat).map(|(a, b)| a * b).sum());
        }
        for (trace, i) in coefficient_traces.iter_mut().zip(&tracking.coefficients) {
            trace.push(flat[*i]);
        }
    }

    Ok(Chain {
        config: config.clone(),
        final_step: step,
        acceptance_rate: accepts as f64 / kept as f64,
        burn_in_acceptance: burn_accepts as f64 / config.burn_in as f64,
        kept,
        mean_coeffs: sum.iter().map(|s| s / kept as f64).collect(),
        functional_traces,
        coefficient_traces,
        final_log_likelihood: ll,
    })
}
