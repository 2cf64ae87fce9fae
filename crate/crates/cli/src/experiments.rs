//! Named experiments and their artifacts.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use cpm_core::bayes::{
    bvm_diagnostic, construct_truth, contraction_study, functional_weights, generate_dataset,
    lan_diagnostic, run_pcn, BvmReport, ContractionLevel, ContractionProblem, ContractionRow,
    LanReport, Tracking,
};
use cpm_core::forward::{default_scales, linearization_study, LinearizationReport};
use cpm_core::linear_ode::{probe_stability_checkpoints, StabilityReport, TimeDesign};
use cpm_core::prior::{rates, sample_base_prior, CpmField, SeriesPriorSpec, SUP_GRID_PER_AXIS};
use cpm_core::rng::{stream_key, substream};

use crate::artifacts::{fmt_f64, ArtifactWriter};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::verify::{run_verify, VerifyReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Verify,
    Stability,
    Linearize,
    Lan,
    Bvm,
    Contract,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Verify,
        Experiment::Stability,
        Experiment::Linearize,
        Experiment::Lan,
        Experiment::Bvm,
        Experiment::Contract,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Verify => "verify",
            Experiment::Stability => "stability",
            Experiment::Linearize => "linearize",
            Experiment::Lan => "lan",
            Experiment::Bvm => "bvm",
            Experiment::Contract => "contract",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL
            .iter()
            .map(|e| e.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown experiment `{s}`; valid names: {}",
                    Self::valid_names()
                ))
            })
    }
}

fn f(v: f64) -> String {
    fmt_f64(v)
}

fn prior_spec(config: &ExperimentConfig) -> Result<SeriesPriorSpec, CliError> {
    config.prior_spec(config.build_model()?.dim_param())
}

pub fn truth(config: &ExperimentConfig) -> Result<CpmField, CliError> {
    let p = &config.prior;
    Ok(construct_truth(
        &prior_spec(config)?,
        p.truth_seed,
        p.truth_max_freq,
        p.truth_rkhs_bound,
    ))
}

// verify

pub fn verify(config: &ExperimentConfig, out: &ArtifactWriter) -> Result<VerifyReport, CliError> {
    let report = run_verify(config)?;
    out.write_json("verify.json", &report)?;
    Ok(report)
}

// stability

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub times: Vec<f64>,
    pub checkpoints: Vec<StabilityReport>,
    /// `|C3(last) - C3(previous)| / C3(last)` over the last two checkpoints.
    pub c3_relative_change: Option<f64>,
    pub violation: bool,
}

pub fn stability(
    config: &ExperimentConfig,
    out: &ArtifactWriter,
) -> Result<StabilitySummary, CliError> {
    let s = &config.stability;
    let design = match &s.times {
        Some(t) => TimeDesign::from_times(t.clone())?,
        None => config.design.clone(),
    };
    let model = config.build_model()?;
    let reports = probe_stability_checkpoints(
        model.as_ref(),
        &design,
        s.radius,
        &s.checkpoints,
        stream_key(config.seed, &[10]),
    )?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.sample_count.to_string(),
                f(r.bound_c1),
                f(r.log_bound_c2),
                f(r.lipschitz_l),
                f(r.inverse_lipschitz_l_inv),
                f(r.stability_c3),
                f(r.max_state_norm),
                r.violations.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "stability.csv",
        &[
            "pairs",
            "bound_c1",
            "log_bound_c2",
            "lipschitz_l",
            "inverse_lipschitz_l_inv",
            "stability_c3",
            "max_state_norm",
            "violations",
        ],
        &rows,
    )?;
    let c3_relative_change = match reports.as_slice() {
        [.., a, b] => Some((b.stability_c3 - a.stability_c3).abs() / b.stability_c3),
        _ => None,
    };
    let summary = StabilitySummary {
        times: design.times().to_vec(),
        violation: reports.iter().any(|r| r.violation()),
        checkpoints: reports,
        c3_relative_change,
    };
    out.write_json("stability.json", &summary)?;
    Ok(summary)
}

// linearize

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearizeSummary {
    pub reports: Vec<LinearizationReport>,
    pub slopes: Vec<Option<f64>>,
}

/// `(theta0, h)` pair `i`: scaled base-prior draws from substreams of the seed.
pub fn linearize_pair(
    config: &ExperimentConfig,
    spec: &SeriesPriorSpec,
    i: usize,
) -> (CpmField, CpmField) {
    let s = &config.linearize;
    let theta0 =
        sample_base_prior(spec, stream_key(config.seed, &[20, i as u64, 0])).scaled(s.theta0_scale);
    let h = sample_base_prior(spec, stream_key(config.seed, &[20, i as u64, 1])).scaled(s.h_scale);
    (theta0, h)
}

pub fn linearize(
    config: &ExperimentConfig,
    out: &ArtifactWriter,
) -> Result<LinearizeSummary, CliError> {
    let ctx = config.forward_context()?;
    let spec = prior_spec(config)?;
    let domain = config.covariate_box()?;
    let grid = domain.grid(SUP_GRID_PER_AXIS);
    let scales = default_scales();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for i in 0..config.linearize.pairs {
        let (theta0, h) = linearize_pair(config, &spec, i);
        let xs = config.covariates.law.sample_points(
            &domain,
            config.linearize.sample_points,
            &mut substream(config.seed, &[20, i as u64, 2]),
        );
        let r = linearization_study(&ctx, &theta0, &h, &scales, &xs, &grid)?;
        for k in 0..r.scales.len() {
            rows.push(vec![
                i.to_string(),
                f(r.scales[k]),
                f(r.h_norms[k]),
                f(r.rho_values[k]),
            ]);
        }
        reports.push(r);
    }
    out.write_csv("linearize.csv", &["pair", "scale", "h_norm", "rho"], &rows)?;
    let summary = LinearizeSummary {
        slopes: reports.iter().map(|r| r.fitted_slope).collect(),
        reports,
    };
    out.write_json("linearize.json", &summary)?;
    Ok(summary)
}

// lan

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanSummary {
    pub n: usize,
    pub replications: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub reference: f64,
    /// `(mean + reference / 2) / std_error`.
    pub mean_z: f64,
    /// `variance / reference - 1`.
    pub variance_relative_error: f64,
}

impl From<&LanReport> for LanSummary {
    fn from(r: &LanReport) -> Self {
        Self {
            n: r.n,
            replications: r.replications,
            mean: r.mean,
            variance: r.variance,
            std_error: r.std_error,
            reference: r.reference,
            mean_z: (r.mean + 0.5 * r.reference) / r.std_error,
            variance_relative_error: r.variance / r.reference - 1.0,
        }
    }
}

pub fn lan_direction(config: &ExperimentConfig, spec: &SeriesPriorSpec) -> CpmField {
    sample_base_prior(spec, config.lan.h_seed).scaled(config.lan.h_scale)
}

pub fn lan(config: &ExperimentConfig, out: &ArtifactWriter) -> Result<LanSummary, CliError> {
    let ctx = config.forward_context()?;
    let spec = prior_spec(config)?;
    let theta0 = truth(config)?;
    let h = lan_direction(config, &spec);
    let l = &config.lan;
    let report = lan_diagnostic(
        &ctx,
        &theta0,
        &h,
        &config.covariates.law,
        &config.covariate_box()?,
        l.n,
        l.replications,
        stream_key(config.seed, &[30]),
    )?;
    let rows: Vec<Vec<String>> = report
        .log_ratios
        .iter()
        .enumerate()
        .map(|(r, v)| vec![r.to_string(), f(*v)])
        .collect();
    out.write_csv("lan.csv", &["rep", "log_ratio"], &rows)?;
    let summary = LanSummary::from(&report);
    out.write_json("lan.json", &summary)?;
    Ok(summary)
}

// bvm

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BvmSummary {
    pub n: usize,
    pub iterations: usize,
    pub acceptance_rate: f64,
    pub final_step: f64,
    pub psi_hat: f64,
    pub true_value: f64,
    pub target_variance: f64,
    pub target_sd: f64,
    pub posterior_sd: f64,
    /// `posterior_sd / target_sd - 1`.
    pub sd_relative_error: f64,
    pub posterior_mean_shift: f64,
    pub functional_ess: f64,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    pub ks_sample_size: usize,
}

impl From<(&BvmReport, usize, f64, f64)> for BvmSummary {
    fn from((r, iterations, acceptance_rate, final_step): (&BvmReport, usize, f64, f64)) -> Self {
        let target_sd = r.target_variance.sqrt();
        Self {
            n: r.n,
            iterations,
            acceptance_rate,
            final_step,
            psi_hat: r.psi_hat,
            true_value: r.true_value,
            target_variance: r.target_variance,
            target_sd,
            posterior_sd: r.posterior_sd,
            sd_relative_error: r.posterior_sd / target_sd - 1.0,
            posterior_mean_shift: r.posterior_mean_shift,
            functional_ess: r.functional_ess,
            ks_statistic: r.ks_statistic,
            ks_p_value: r.ks_p_value,
            ks_sample_size: r.ks_sample_size,
        }
    }
}

pub fn bvm(config: &ExperimentConfig, out: &ArtifactWriter) -> Result<BvmSummary, CliError> {
    let ctx = config.forward_context()?;
    let spec = prior_spec(config)?;
    let theta0 = truth(config)?;
    let domain = config.covariate_box()?;
    let b = &config.bvm;
    let data = generate_dataset(
        &ctx,
        &theta0,
        &config.covariates.law,
        &domain,
        b.n,
        stream_key(config.seed, &[40, 0]),
    )?;
    let quadrature = config.covariates.law.quadrature(&domain);
    let psi = CpmField::constant(&spec, &b.psi)?;
    let tracking = Tracking {
        functionals: vec![functional_weights(&psi, &quadrature)],
        coefficients: vec![],
    };
    let chain_config = cpm_core::bayes::ChainConfig {
        seed: stream_key(config.seed, &[40, 1]),
        ..config.chain.with_iterations(b.iterations)
    };
    let chain = run_pcn(&ctx, &data, &spec, &chain_config, &tracking)?;
    let report = bvm_diagnostic(&ctx, &data, &chain, 0, &psi, &theta0, &quadrature)?;
    let rows: Vec<Vec<String>> = report
        .draws
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), f(*v)])
        .collect();
    out.write_csv("bvm.csv", &["draw", "scaled_functional"], &rows)?;
    let summary = BvmSummary::from((
        &report,
        chain_config.iterations,
        chain.acceptance_rate,
        chain.final_step,
    ));
    out.write_json("bvm.json", &summary)?;
    Ok(summary)
}

// contract

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractSummary {
    pub levels: Vec<ContractionLevel>,
    pub slope: Option<f64>,
    pub slope_conditioned: Option<f64>,
    /// Set when the slope is undefined (a single sample size).
    pub slope_undefined: bool,
    pub strictly_decreasing: bool,
    pub theory_slope: f64,
    pub failed_cells: usize,
}

pub fn contraction_problem(config: &ExperimentConfig) -> Result<ContractionProblem, CliError> {
    let spec = prior_spec(config)?;
    let p = &config.prior;
    let chain = match config.contract.iterations {
        Some(it) => config.chain.with_iterations(it),
        None => config.chain.clone(),
    };
    Ok(ContractionProblem {
        ctx: config.forward_context()?,
        truth: truth(config)?,
        sampler: config.covariates.law.clone(),
        domain: config.covariate_box()?,
        chain,
        rates: rates(p.alpha, p.beta, p.beta_prime, spec.dim_x())?,
        membership_radius: p.membership_radius,
        spec,
    })
}

fn row_cells(r: &ContractionRow) -> Vec<String> {
    vec![
        r.n.to_string(),
        r.rep.to_string(),
        f(r.l2_err),
        f(r.sup_err),
        f(r.delta_n),
        f(r.accepted_rate),
        f(r.delta_bar_n),
        r.theta_n_witnessed.to_string(),
        r.status.clone(),
    ]
}

pub fn contract(
    config: &ExperimentConfig,
    out: &ArtifactWriter,
) -> Result<ContractSummary, CliError> {
    let problem = contraction_problem(config)?;
    let table = contraction_study(
        &problem,
        &config.n_grid,
        config.replications,
        stream_key(config.seed, &[50]),
    )?;
    let rows: Vec<Vec<String>> = table.rows.iter().map(row_cells).collect();
    out.write_csv(
        "contract.csv",
        &[
            "N",
            "rep",
            "l2_err",
            "sup_err",
            "delta_N",
            "accepted_rate",
            "delta_bar_N",
            "theta_n_witnessed",
            "status",
        ],
        &rows,
    )?;
    let alpha = config.prior.alpha;
    let dx = problem.spec.dim_x() as f64;
    let summary = ContractSummary {
        slope_undefined: table.slope.is_none(),
        levels: table.levels,
        slope: table.slope,
        slope_conditioned: table.slope_conditioned,
        strictly_decreasing: table.strictly_decreasing,
        theory_slope: -alpha / (2.0 * alpha + dx),
        failed_cells: table.rows.iter().filter(|r| r.status != "ok").count(),
    };
    out.write_json("contract.json", &summary)?;
    Ok(summary)
}

/// Runs `experiment`, writing the resolved config next to its artifacts.
pub fn run(
    experiment: Experiment,
    config: &ExperimentConfig,
    out: &ArtifactWriter,
) -> Result<serde_json::Value, CliError> {
    out.write_text("config.toml", &config.to_toml()?)?;
    let value = match experiment {
        Experiment::Verify => {
            let r = verify(config, out)?;
            if !r.passed {
                return Err(CliError::SuiteFailure(format!(
                    "failing checks: {}",
                    r.failing().join(", ")
                )));
            }
            serde_json::to_value(r)?
        }
        Experiment::Stability => serde_json::to_value(stability(config, out)?)?,
        Experiment::Linearize => serde_json::to_value(linearize(config, out)?)?,
        Experiment::Lan => serde_json::to_value(lan(config, out)?)?,
        Experiment::Bvm => serde_json::to_value(bvm(config, out)?)?,
        Experiment::Contract => serde_json::to_value(contract(config, out)?)?,
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_and_unknown_lists_valid() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        let err = "minimax".parse::<Experiment>().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let msg = err.to_string();
        assert!(
            msg.contains("minimax") && msg.contains("contract") && msg.contains("verify"),
            "{msg}"
        );
    }
}
