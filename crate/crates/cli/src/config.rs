//! Experiment configuration: one TOML file per run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cpm_core::bayes::ChainConfig;
use cpm_core::covariates::{CovariateBox, CovariateSampler};
use cpm_core::forward::ForwardContext;
use cpm_core::linear_ode::{ModalModel, OdeModel, TimeDesign};
use cpm_core::pk::{PkConfig, TwoCompartment};
use cpm_core::prior::SeriesPriorSpec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Observation noise level; `inf` gives a flat likelihood.
    pub noise_sd: f64,
    /// Sample sizes for the contraction study.
    pub n_grid: Vec<usize>,
    /// Replications per sample size.
    pub replications: usize,
    pub model: ModelConfig,
    pub pk: PkSection,
    pub covariates: CovariateSection,
    pub design: TimeDesign,
    pub prior: PriorSection,
    pub chain: ChainConfig,
    #[serde(default)]
    pub verify: VerifySettings,
    #[serde(default)]
    pub stability: StabilitySettings,
    #[serde(default)]
    pub linearize: LinearizeSettings,
    #[serde(default)]
    pub lan: LanSettings,
    #[serde(default)]
    pub bvm: BvmSettings,
    #[serde(default)]
    pub contract: ContractSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    TwoCompartment {
        /// Fault injection: flips the sign of one row of the analytic
        /// coefficient Jacobian.
        #[serde(default)]
        corrupt_jacobian: bool,
    },
    /// `A(p) = V diag(r + R p) V^{-1}`, `s0(p) = V exp(g + G p)`.
    Modal {
        vectors: Vec<Vec<f64>>,
        rate_offsets: Vec<f64>,
        rate_gradients: Vec<Vec<f64>>,
        log_weight_offsets: Vec<f64>,
        log_weight_gradients: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PkSection {
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub law: CovariateSampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub alpha: f64,
    pub cutoff: usize,
    /// Sobolev index of the sup-norm set; needs `d_x / 2 < beta_prime < beta`.
    pub beta: f64,
    pub beta_prime: f64,
    /// Radius `M` of the regularisation sets.
    pub membership_radius: f64,
    /// Truth: base-prior draw with this seed, truncated to `max_freq` and
    /// scaled to RKHS norm at most `truth_rkhs_bound`.
    pub truth_seed: u64,
    pub truth_max_freq: usize,
    pub truth_rkhs_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub radius: f64,
    pub eigen_samples: usize,
    pub rk4_points: usize,
    pub rk4_times: usize,
    pub rk4_horizon: f64,
    pub jacobian_points: usize,
    pub root_sets: usize,
    pub root_max_terms: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            radius: 3.0,
            eigen_samples: 100_000,
            rk4_points: 100,
            rk4_times: 20,
            rk4_horizon: 10.0,
            jacobian_points: 100,
            root_sets: 100_000,
            root_max_terms: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySettings {
    pub radius: f64,
    /// Pair counts at which the constants are reported; the last is the total.
    pub checkpoints: Vec<usize>,
    /// Overrides the global design for this experiment.
    pub times: Option<Vec<f64>>,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            radius: 2.0,
            checkpoints: vec![1_000, 5_000, 10_000],
            times: Some(vec![0.5, 1.0, 2.0, 4.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeSettings {
    pub pairs: usize,
    /// Amplitude of the random perturbation direction relative to a prior draw.
    pub theta0_scale: f64,
    pub h_scale: f64,
    pub sample_points: usize,
}

impl Default for LinearizeSettings {
    fn default() -> Self {
        Self {
            pairs: 5,
            theta0_scale: 0.5,
            h_scale: 1.0,
            sample_points: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanSettings {
    pub n: usize,
    pub replications: usize,
    /// Seed of the base-prior draw used as the direction `h`.
    pub h_seed: u64,
    pub h_scale: f64,
}

impl Default for LanSettings {
    fn default() -> Self {
        Self {
            n: 2_000,
            replications: 500,
            h_seed: 11,
            h_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvmSettings {
    pub n: usize,
    /// Constant test function `psi`, one value per output component.
    pub psi: Vec<f64>,
    pub iterations: usize,
}

impl Default for BvmSettings {
    fn default() -> Self {
        Self {
            n: 2_000,
            psi: vec![1.0, 0.0, 0.0, 0.0],
            iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractSettings {
    /// Overrides `chain.iterations` for every cell; burn-in stays at 20%.
    pub iterations: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pk = PkConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 20_240_601,
            out_dir: PathBuf::from("cpm-out"),
            noise_sd: 0.5,
            n_grid: vec![50, 200, 800, 3200],
            replications: 5,
            model: ModelConfig::TwoCompartment {
                corrupt_jacobian: false,
            },
            pk: PkSection { kappa: pk.kappa },
            covariates: CovariateSection {
                lower: pk.covariate_box.lower().to_vec(),
                upper: pk.covariate_box.upper().to_vec(),
                law: CovariateSampler::UniformBox,
            },
            design: TimeDesign::from_times(vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
                .expect("valid default design"),
            prior: PriorSection {
                alpha: 8.0,
                cutoff: 16,
                beta: 6.0,
                beta_prime: 3.0,
                membership_radius: 5.0,
                truth_seed: 42,
                truth_max_freq: 4,
                truth_rkhs_bound: 1.0,
            },
            chain: ChainConfig::default(),
            verify: VerifySettings::default(),
            stability: StabilitySettings::default(),
            linearize: LinearizeSettings::default(),
            lan: LanSettings::default(),
            bvm: BvmSettings::default(),
            contract: ContractSettings::default(),
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Validation(format!(
            "{what} must be a nonempty rectangular array of rows"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self)
            .map_err(|e| CliError::Validation(format!("cannot serialise config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(CliError::Validation(format!(
                "noise_sd must be nonnegative, got {}",
                self.noise_sd
            )));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(CliError::Validation(
                "n_grid needs at least one positive sample size".into(),
            ));
        }
        if self.replications == 0 {
            return Err(CliError::Validation("replications must be positive".into()));
        }
        self.pk_config()?.validate()?;
        self.covariate_box()?;
        self.covariates.law.validate(&self.covariate_box()?)?;
        let model = self.build_model()?;
        self.prior_spec(model.dim_param())?;
        cpm_core::prior::rates(
            self.prior.alpha,
            self.prior.beta,
            self.prior.beta_prime,
            self.covariates.lower.len(),
        )?;
        self.chain.validate()?;
        if self.bvm.psi.len() != model.dim_param() {
            return Err(CliError::Validation(format!(
                "bvm.psi needs {} entries",
                model.dim_param()
            )));
        }
        if let Some(t) = &self.stability.times {
            TimeDesign::from_times(t.clone())?;
        }
        if self.stability.checkpoints.is_empty()
            || self.stability.checkpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(CliError::Validation(
                "stability.checkpoints must be nonempty and increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn covariate_box(&self) -> Result<CovariateBox, CliError> {
        Ok(CovariateBox::new(
            self.covariates.lower.clone(),
            self.covariates.upper.clone(),
        )?)
    }

    pub fn pk_config(&self) -> Result<PkConfig, CliError> {
        Ok(PkConfig {
            kappa: self.pk.kappa,
            covariate_box: self.covariate_box()?,
        })
    }

    pub fn build_model(&self) -> Result<Arc<dyn OdeModel>, CliError> {
        Ok(match &self.model {
            ModelConfig::TwoCompartment { corrupt_jacobian } => Arc::new(
                TwoCompartment::new(self.pk_config()?)?.with_corrupted_jacobian(*corrupt_jacobian),
            ),
            ModelConfig::Modal {
                vectors,
                rate_offsets,
                rate_gradients,
                log_weight_offsets,
                log_weight_gradients,
            } => Arc::new(ModalModel::new(
                matrix(vectors, "model.vectors")?,
                rate_offsets.clone(),
                matrix(rate_gradients, "model.rate_gradients")?,
                log_weight_offsets.clone(),
                matrix(log_weight_gradients, "model.log_weight_gradients")?,
            )?),
        })
    }

    pub fn prior_spec(&self, dim_p: usize) -> Result<SeriesPriorSpec, CliError> {
        Ok(SeriesPriorSpec::new(
            self.prior.alpha,
            self.prior.cutoff,
            dim_p,
            self.covariate_box()?,
        )?)
    }

    pub fn forward_context(&self) -> Result<ForwardContext, CliError> {
        Ok(ForwardContext::new(
            self.build_model()?,
            self.design.clone(),
            self.noise_sd,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn modal_and_mixture_round_trip() {
        let c = ExperimentConfig {
            model: ModelConfig::Modal {
                vectors: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
                rate_offsets: vec![-1.0, -0.2],
                rate_gradients: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                log_weight_offsets: vec![0.0, -0.5],
                log_weight_gradients: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            },
            covariates: CovariateSection {
                lower: vec![0.5, 1.0],
                upper: vec![2.0, 80.0],
                law: CovariateSampler::DiscreteMixture {
                    atoms: vec![vec![1.0, 20.0], vec![1.5, 60.0]],
                    weights: vec![0.3, 0.7],
                },
            },
            bvm: BvmSettings {
                psi: vec![1.0, 0.0],
                ..BvmSettings::default()
            },
            noise_sd: f64::INFINITY,
            ..ExperimentConfig::default()
        };
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        assert_eq!(c.build_model().unwrap().dim_param(), 2);
    }

    #[test]
    fn repeated_times_rejected() {
        let text = ExperimentConfig::default().to_toml().unwrap().replace(
            "times = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0]",
            "times = [0.0, 0.0, 1.0]",
        );
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("times distinct"), "{err}");
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        let text = ExperimentConfig::default().to_toml().unwrap();
        assert!(ExperimentConfig::from_toml(&format!("bogus = 1\n{text}")).is_err());
        let v2 = text.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml(&v2).is_err());
    }
}
