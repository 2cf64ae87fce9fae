use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateBox, CovariatePoints, CovariateSampler};
use crate::error::{CpmError, Result};
use crate::forward::{apply_forward, ForwardContext};
use crate::linear_ode::TimeDesign;
use crate::prior::CpmField;
use crate::rng::{standard_normal, substream};

/// Observations `Y_k = G(theta0)(X_k) + eps_k` with the noise realisation
/// kept for diagnostics that need it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: TimeDesign,
    pub noise_sd: f64,
    pub seed: u64,
    pub model_id: String,
    pub covariates: CovariatePoints,
    /// `N x d_o`.
    pub observations: DMatrix<f64>,
    /// `N x d_o`, the realised `eps_k`.
    pub noise: DMatrix<f64>,
    pub truth: Option<CpmField>,
}

const DATASET_FORMAT: &str = "cpm-dataset";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    version: u32,
    model_id: String,
    noise_sd: f64,
    design: TimeDesign,
    seed: u64,
    covariates: CovariatePoints,
    observations: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    truth: Option<serde_json::Value>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CpmError::Serialization("ragged observation rows".into()));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let truth = match &self.truth {
            Some(t) => Some(serde_json::from_str(&t.to_json()?)?),
            None => None,
        };
        let file = DatasetFile {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            model_id: self.model_id.clone(),
            noise_sd: self.noise_sd,
            design: self.design.clone(),
            seed: self.seed,
            covariates: self.covariates.clone(),
            observations: rows(&self.observations),
            noise: rows(&self.noise),
            truth,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: DatasetFile = serde_json::from_str(text)?;
        if f.format != DATASET_FORMAT || f.version != DATASET_VERSION {
            return Err(CpmError::Serialization(format!(
                "unsupported dataset file {} v{}",
                f.format, f.version
            )));
        }
        let d_o = f.design.len();
        let truth = match f.truth {
            Some(v) => Some(CpmField::from_json(&v.to_string())?),
            None => None,
        };
        Ok(Self {
            observations: from_rows(&f.observations, d_o)?,
            noise: from_rows(&f.noise, d_o)?,
            design: f.design,
            noise_sd: f.noise_sd,
            seed: f.seed,
            model_id: f.model_id,
            covariates: f.covariates,
            truth,
        })
    }
}

/// Simulates `N` observations under `theta0`. Covariates and noise come from
/// separate substreams of `seed`.
pub fn generate_dataset(
    ctx: &ForwardContext,
    theta0: &CpmField,
    sampler: &CovariateSampler,
    domain: &CovariateBox,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(CpmError::Precondition(
            "dataset needs at least one observation".into(),
        ));
    }
    if !ctx.noise_sd.is_finite() {
        return Err(CpmError::Precondition(
            "cannot simulate with infinite noise".into(),
        ));
    }
    sampler.validate(domain)?;
    let covariates = sampler.sample_points(domain, n, &mut substream(seed, &[0]));
    let clean = apply_forward(ctx, theta0, &covariates)?;
    let mut rng = substream(seed, &[1]);
    // Row-major draw order so a prefix of the data does not depend on N.
    let mut noise = DMatrix::zeros(n, ctx.dim_obs());
    for k in 0..n {
        for j in 0..ctx.dim_obs() {
            noise[(k, j)] = ctx.noise_sd * standard_normal(&mut rng);
        }
    }
    Ok(Dataset {
        design: ctx.design.clone(),
        noise_sd: ctx.noise_sd,
        seed,
        model_id: ctx.model.id(),
        covariates,
        observations: clean + &noise,
        noise,
        truth: Some(theta0.clone()),
    })
}

/// `sum_k |Y_k - G(p_k)|^2` for parameter rows `params` (`N x d_p`).
pub fn residual_sum_of_squares(
    ctx: &ForwardContext,
    params: &DMatrix<f64>,
    observations: &DMatrix<f64>,
) -> Result<f64> {
    let (dp, d_o) = (ctx.dim_param(), ctx.dim_obs());
    let mut p = vec![0.0; dp];
    let mut g = vec![0.0; d_o];
    let mut total = 0.0;
    for k in 0..params.nrows() {
        for (d, v) in p.iter_mut().enumerate() {
            *v = params[(k, d)];
        }
        ctx.log_observations_into(&p, &mut g)?;
        for (j, v) in g.iter().enumerate() {
            total += (observations[(k, j)] - v).powi(2);
        }
    }
    Ok(total)
}

fn likelihood_scale(noise_sd: f64) -> Result<f64> {
    if noise_sd == 0.0 {
        return Err(CpmError::Precondition(
            "log-likelihood is undefined for zero noise".into(),
        ));
    }
    Ok(if noise_sd.is_infinite() {
        0.0
    } else {
        0.5 / (noise_sd * noise_sd)
    })
}

/// Log-likelihood from parameter rows at the data covariates.
pub fn log_likelihood_rows(
    ctx: &ForwardContext,
    params: &DMatrix<f64>,
    data: &Dataset,
) -> Result<f64> {
    let scale = likelihood_scale(ctx.noise_sd)?;
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(-scale * residual_sum_of_squares(ctx, params, &data.observations)?)
}

/// `-(1 / 2 sigma^2) sum_k |Y_k - G(theta)(X_k)|^2`, without the
/// theta-independent normalising constant. An infinite noise level gives
/// the flat likelihood `0`.
pub fn log_likelihood(ctx: &ForwardContext, theta: &CpmField, data: &Dataset) -> Result<f64> {
    let scale = likelihood_scale(ctx.noise_sd)?;
    if scale == 0.0 {
        return Ok(0.0);
    }
    let g = apply_forward(ctx, theta, &data.covariates)?;
    Ok(-scale * (&data.observations - g).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pk::{PkConfig, TwoCompartment};
    use crate::prior::{sample_base_prior, SeriesPriorSpec};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn setup(noise: f64) -> (ForwardContext, SeriesPriorSpec, CovariateBox) {
        let cfg = PkConfig::default();
        let model = Arc::new(TwoCompartment::new(cfg.clone()).unwrap());
        let ctx = ForwardContext::new(
            model,
            TimeDesign::from_times(vec![0.5, 1.0, 2.0, 4.0]).unwrap(),
            noise,
        )
        .unwrap();
        let spec = SeriesPriorSpec::new(8.0, 4, 4, cfg.covariate_box.clone()).unwrap();
        (ctx, spec, cfg.covariate_box)
    }

    #[test]
    fn noiseless_data_is_exact() {
        let (ctx, spec, domain) = setup(0.0);
        let theta = sample_base_prior(&spec, 1).scaled(0.3);
        let d =
            generate_dataset(&ctx, &theta, &CovariateSampler::UniformBox, &domain, 20, 3).unwrap();
        let clean = apply_forward(&ctx, &theta, &d.covariates).unwrap();
        assert_eq!(d.observations, clean);
        assert!(log_likelihood(&ctx, &theta, &d).is_err());
        let ctx1 = ForwardContext {
            noise_sd: 1.0,
            ..ctx
        };
        assert_eq!(log_likelihood(&ctx1, &theta, &d).unwrap(), 0.0);
    }

    #[test]
    fn residual_sd_matches_noise_level() {
        let (ctx, spec, domain) = setup(0.1);
        let theta = CpmField::zeros(&spec);
        let d = generate_dataset(
            &ctx,
            &theta,
            &CovariateSampler::UniformBox,
            &domain,
            100_000,
            4,
        )
        .unwrap();
        let sd = (d.noise.norm_squared() / d.noise.len() as f64).sqrt();
        assert!((sd / 0.1 - 1.0).abs() < 0.02);
    }

    #[test]
    fn generation_is_reproducible() {
        let (ctx, spec, domain) = setup(0.5);
        let theta = sample_base_prior(&spec, 2).scaled(0.2);
        let a =
            generate_dataset(&ctx, &theta, &CovariateSampler::UniformBox, &domain, 30, 9).unwrap();
        let b =
            generate_dataset(&ctx, &theta, &CovariateSampler::UniformBox, &domain, 30, 9).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(Dataset::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn likelihood_scaling_and_oracle() {
        let (ctx, spec, domain) = setup(0.5);
        let theta0 = sample_base_prior(&spec, 5).scaled(0.2);
        let d =
            generate_dataset(&ctx, &theta0, &CovariateSampler::UniformBox, &domain, 40, 1).unwrap();
        let theta = sample_base_prior(&spec, 6).scaled(0.2);
        let ll = log_likelihood(&ctx, &theta, &d).unwrap();
        let doubled = ForwardContext {
            noise_sd: 1.0,
            ..ctx.clone()
        };
        assert_relative_eq!(
            log_likelihood(&doubled, &theta, &d).unwrap(),
            ll / 4.0,
            max_relative = 1e-15
        );

        // Naive per-observation sum.
        let mut naive = 0.0;
        for k in 0..d.len() {
            let p = theta.eval(d.covariates.point(k));
            for (j, t) in d.design.times().iter().enumerate() {
                let s1 = crate::linear_ode::observed_component(ctx.model.as_ref(), &p, *t).unwrap();
                naive += (d.observations[(k, j)] - s1.ln()).powi(2);
            }
        }
        assert_relative_eq!(ll, -naive / (2.0 * 0.25), max_relative = 1e-10);

        let flat = ForwardContext {
            noise_sd: f64::INFINITY,
            ..ctx
        };
        assert_eq!(log_likelihood(&flat, &theta, &d).unwrap(), 0.0);
    }

    #[test]
    fn discrete_covariates() {
        let (ctx, spec, domain) = setup(0.5);
        let s = CovariateSampler::DiscreteMixture {
            atoms: vec![vec![1.0, 30.0], vec![1.5, 60.0]],
            weights: vec![1.0, 1.0],
        };
        let d = generate_dataset(&ctx, &CpmField::zeros(&spec), &s, &domain, 50, 2).unwrap();
        assert!(d
            .covariates
            .iter()
            .all(|x| x == [1.0, 30.0] || x == [1.5, 60.0]));
    }
}
