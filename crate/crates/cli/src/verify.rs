//! Invariant suite: eigenstructure inequalities, closed form against RK4,
//! analytic Jacobians against finite differences, ranks and root counts.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use cpm_core::forward::ForwardContext;
use cpm_core::linear_ode::{
    count_roots_exp_affine, eval_map, eval_map_jacobian, numerical_rank, observed_component,
    ExpAffineTerm, OdeModel, DEFAULT_RESOLUTION, DEFAULT_WINDOW,
};
use cpm_core::oracle::{central_jacobian, max_relative_error, rk4_linear};
use cpm_core::pk::{eigenstructure, PkConfig};
use cpm_core::rng::{standard_normal, substream, uniform_in_ball};
use cpm_core::CpmError;
use nalgebra::DVector;

use crate::config::{ExperimentConfig, ModelConfig, VerifySettings};
use crate::error::CliError;

pub const RK4_TOLERANCE: f64 = 1e-7;
pub const FD_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;
/// Jacobian checks sample from `B(0, JACOBIAN_RADIUS)`.
pub const JACOBIAN_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// False when the model lacks what the check needs.
    pub applicable: bool,
    pub samples: usize,
    pub failures: usize,
    /// Largest residual (or smallest margin for inequality checks).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn skipped(name: &str, why: String) -> Self {
        Self {
            name: name.into(),
            passed: true,
            applicable: false,
            samples: 0,
            failures: 0,
            worst: f64::NAN,
            tolerance: f64::NAN,
            detail: why,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failing(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// `B(0, 3)` samples of the two-compartment eigenstructure:
/// `delta > 0`, `lambda- < lambda+ < 0`, `v- < 0 < v+`.
pub fn check_eigen_inequalities(
    config: &PkConfig,
    radius: f64,
    samples: usize,
    seed: u64,
) -> CheckResult {
    let margins: Vec<Option<f64>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let p = uniform_in_ball(&mut substream(seed, &[k as u64]), 4, radius);
            let e = eigenstructure(&p, config).ok()?;
            let margin = e
                .delta
                .min(e.lambda_plus - e.lambda_minus)
                .min(-e.lambda_plus)
                .min(-e.v_minus)
                .min(e.v_plus);
            Some(margin)
        })
        .collect();
    let failures = margins
        .iter()
        .filter(|m| !m.is_some_and(|m| m > 0.0))
        .count();
    let worst = margins
        .iter()
        .flatten()
        .fold(f64::INFINITY, |a, b| a.min(*b));
    CheckResult {
        name: "eigen_inequalities".into(),
        passed: failures == 0,
        applicable: true,
        samples,
        failures,
        worst,
        tolerance: 0.0,
        detail: format!("uniform p in B(0, {radius}); worst is the smallest margin"),
    }
}

/// Closed-form `s1` against RK4 on the matrix ODE with step `1e-4 T`.
pub fn check_closed_form_vs_rk4(
    model: &dyn OdeModel,
    s: &VerifySettings,
    seed: u64,
) -> CheckResult {
    let horizon = s.rk4_horizon;
    let times: Vec<f64> = (1..=s.rk4_times)
        .map(|j| horizon * j as f64 / s.rk4_times as f64)
        .collect();
    let step = 1e-4 * horizon;
    let errors: Vec<Result<f64, CpmError>> = (0..s.rk4_points)
        .into_par_iter()
        .map(|k| {
            let p = uniform_in_ball(
                &mut substream(seed, &[k as u64]),
                model.dim_param(),
                s.radius,
            );
            let a = model.matrix(&p)?;
            let s0 = model.initial_state(&p)?;
            let states = rk4_linear(&a, &s0, &times, step);
            let mut worst = 0.0f64;
            for (t, st) in times.iter().zip(&states) {
                worst = worst.max((observed_component(model, &p, *t)? - st[0]).abs());
            }
            Ok(worst)
        })
        .collect();
    summarise(
        "closed_form_vs_rk4",
        errors,
        RK4_TOLERANCE,
        format!(
            "{} points x {} times in (0, {horizon}], absolute error",
            s.rk4_points, s.rk4_times
        ),
    )
}

fn summarise(
    name: &str,
    residuals: Vec<Result<f64, CpmError>>,
    tolerance: f64,
    detail: String,
) -> CheckResult {
    let samples = residuals.len();
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut first_error = None;
    for r in residuals {
        match r {
            Ok(v) if v <= tolerance => worst = worst.max(v),
            Ok(v) => {
                failures += 1;
                worst = worst.max(if v.is_nan() { f64::INFINITY } else { v });
            }
            Err(e) => {
                failures += 1;
                worst = f64::INFINITY;
                first_error.get_or_insert(e.to_string());
            }
        }
    }
    let detail = match first_error {
        Some(e) => format!("{detail}; first error: {e}"),
        None => detail,
    };
    CheckResult {
        name: name.into(),
        passed: failures == 0,
        applicable: true,
        samples,
        failures,
        worst,
        tolerance,
        detail,
    }
}

fn points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| uniform_in_ball(&mut substream(seed, &[k as u64]), dim, JACOBIAN_RADIUS))
        .collect()
}

fn coefficient_vector(model: &dyn OdeModel, p: &[f64]) -> Result<DVector<f64>, CpmError> {
    let c = model.coefficients(p).ok_or(CpmError::Capability {
        model: model.id(),
        capability: "a coefficient map",
    })??;
    Ok(DVector::from_iterator(
        2 * c.terms(),
        c.prefactors().iter().chain(c.rates()).copied(),
    ))
}

/// `J` (coefficient map), `S` (evaluation map) and the forward Jacobian
/// against central differences, plus rank checks on `J` and the forward
/// Jacobian.
pub fn check_jacobians(ctx: &ForwardContext, count: usize, seed: u64) -> Vec<CheckResult> {
    let model = ctx.model.as_ref();
    let dp = model.dim_param();
    let pts = points(dp, count, seed);
    if model.coefficient_jacobian(&pts[0]).is_none() {
        let why = format!(
            "model `{}` has no analytic coefficient Jacobian",
            model.id()
        );
        return [
            "jacobian_coefficients",
            "jacobian_eval_map",
            "jacobian_forward",
            "rank_coefficients",
            "rank_forward",
        ]
        .iter()
        .map(|n| CheckResult::skipped(n, why.clone()))
        .collect();
    }
    let design = ctx.design.clone();
    let detail = |what: &str| {
        format!("{count} points in B(0, {JACOBIAN_RADIUS}); {what}; max |a - fd| / max |fd|")
    };

    let coeff: Vec<Result<f64, CpmError>> = pts
        .par_iter()
        .map(|p| {
            let analytic = model.coefficient_jacobian(p).expect("capability checked")?;
            let fd = central_jacobian(|q| coefficient_vector(model, q), p, FD_STEP)?;
            Ok(max_relative_error(&analytic, &fd))
        })
        .collect();
    let eval: Vec<Result<f64, CpmError>> = pts
        .par_iter()
        .map(|p| {
            let analytic = eval_map_jacobian(model, p, &design)?;
            let fd = central_jacobian(|q| eval_map(model, q, &design), p, FD_STEP)?;
            Ok(max_relative_error(&analytic, &fd))
        })
        .collect();
    let fwd: Vec<Result<f64, CpmError>> = pts
        .par_iter()
        .map(|p| {
            let analytic = ctx.forward_jacobian(p)?;
            let fd = central_jacobian(|q| ctx.log_observations(q), p, FD_STEP)?;
            Ok(max_relative_error(&analytic, &fd))
        })
        .collect();

    let rank_check =
        |name: &str, jac: &(dyn Fn(&[f64]) -> Result<nalgebra::DMatrix<f64>, CpmError> + Sync)| {
            let ranks: Vec<Result<(usize, f64), CpmError>> = pts
                .par_iter()
                .map(|p| Ok(numerical_rank(&jac(p)?)))
                .collect();
            let mut failures = 0;
            let mut worst = f64::INFINITY;
            for r in &ranks {
                match r {
                    Ok((rank, smin)) => {
                        failures += (*rank != dp) as usize;
                        worst = worst.min(*smin);
                    }
                    Err(_) => failures += 1,
                }
            }
            CheckResult {
                name: name.into(),
                passed: failures == 0,
                applicable: true,
                samples: count,
                failures,
                worst,
                tolerance: cpm_core::linear_ode::RANK_TOLERANCE,
                detail: format!(
                    "numerical rank {dp} required; worst is the smallest singular value"
                ),
            }
        };
    let rank_coeff = rank_check("rank_coefficients", &|p| {
        model.coefficient_jacobian(p).expect("capability checked")
    });
    let rank_fwd = if ctx.dim_obs() >= dp {
        rank_check("rank_forward", &|p| ctx.forward_jacobian(p))
    } else {
        CheckResult::skipped(
            "rank_forward",
            format!("design has {} < {dp} observation times", ctx.dim_obs()),
        )
    };
    vec![
        summarise(
            "jacobian_coefficients",
            coeff,
            FD_TOLERANCE,
            detail("coefficient map"),
        ),
        summarise(
            "jacobian_eval_map",
            eval,
            FD_TOLERANCE,
            detail("evaluation map"),
        ),
        summarise(
            "jacobian_forward",
            fwd,
            FD_TOLERANCE,
            detail("log forward map"),
        ),
        rank_coeff,
        rank_fwd,
    ]
}

/// Random term set with `n` distinct rates in `[-2, 2]` and standard
/// normal affine coefficients.
pub fn random_terms<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<ExpAffineTerm> {
    let mut terms: Vec<ExpAffineTerm> = Vec::with_capacity(n);
    while terms.len() < n {
        let rate = rng.random_range(-2.0..2.0);
        if terms.iter().all(|t| t.rate != rate) {
            terms.push(ExpAffineTerm::new(
                rate,
                standard_normal(rng),
                standard_normal(rng),
            ));
        }
    }
    terms
}

/// Counted real roots of random exponential-affine sums never exceed `2n - 1`.
pub fn check_root_counts(sets: usize, max_terms: usize, seed: u64) -> CheckResult {
    let counts: Vec<Result<(usize, usize), CpmError>> = (0..sets)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, &[k as u64]);
            let n = rng.random_range(1..=max_terms);
            let terms = random_terms(&mut rng, n);
            Ok((
                n,
                count_roots_exp_affine(&terms, DEFAULT_WINDOW, DEFAULT_RESOLUTION)?.count,
            ))
        })
        .collect();
    let mut failures = 0;
    let mut most = vec![0usize; max_terms + 1];
    let mut first_error = None;
    for c in &counts {
        match c {
            Ok((n, roots)) => {
                failures += (*roots > 2 * n - 1) as usize;
                most[*n] = most[*n].max(*roots);
            }
            Err(e) => {
                failures += 1;
                first_error.get_or_insert(e.to_string());
            }
        }
    }
    // Worst is the largest observed count relative to the bound.
    let worst = (1..=max_terms)
        .map(|n| most[n] as f64 / (2 * n - 1) as f64)
        .fold(0.0, f64::max);
    let mut detail = format!(
        "{sets} sets, n in 1..={max_terms}; max counts per n {:?}; worst is count / (2n - 1)",
        &most[1..]
    );
    if let Some(e) = first_error {
        detail.push_str(&format!("; first error: {e}"));
    }
    CheckResult {
        name: "root_counts".into(),
        passed: failures == 0,
        applicable: true,
        samples: sets,
        failures,
        worst,
        tolerance: 1.0,
        detail,
    }
}

pub fn run_verify(config: &ExperimentConfig) -> Result<VerifyReport, CliError> {
    let ctx = config.forward_context()?;
    let v = &config.verify;
    let seed = config.seed;
    let key = |k: u64| cpm_core::rng::stream_key(seed, &[k]);
    let mut checks = Vec::new();
    checks.push(match &config.model {
        ModelConfig::TwoCompartment { .. } => {
            check_eigen_inequalities(&config.pk_config()?, v.radius, v.eigen_samples, key(0))
        }
        ModelConfig::Modal { .. } => {
            CheckResult::skipped("eigen_inequalities", "two-compartment only".into())
        }
    });
    checks.push(check_closed_form_vs_rk4(ctx.model.as_ref(), v, key(1)));
    checks.extend(check_jacobians(&ctx, v.jacobian_points, key(2)));
    checks.push(check_root_counts(v.root_sets, v.root_max_terms, key(3)));
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { passed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_fault_is_caught() {
        let mut config = ExperimentConfig::default();
        config.verify = VerifySettings {
            eigen_samples: 2000,
            rk4_points: 3,
            jacobian_points: 10,
            root_sets: 20,
            ..VerifySettings::default()
        };
        let report = run_verify(&config).unwrap();
        assert!(report.passed, "{:?}", report.failing());

        config.model = ModelConfig::TwoCompartment {
            corrupt_jacobian: true,
        };
        let report = run_verify(&config).unwrap();
        let failing = report.failing();
        assert!(
            failing.contains(&"jacobian_coefficients") && failing.contains(&"jacobian_forward"),
            "{failing:?}"
        );
        assert!(!failing.contains(&"closed_form_vs_rk4"));
    }

    #[test]
    fn random_terms_have_distinct_rates() {
        let mut rng = substream(5, &[]);
        for n in 1..=4 {
            let t = random_terms(&mut rng, n);
            assert_eq!(t.len(), n);
        }
    }
}
