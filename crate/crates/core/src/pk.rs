//! Weight-normalised, log-parametrised two-compartment model.
//!
//! With `p = (p1, p2, p3, p4)` the logs of the weight-normalised clearance,
//! central volume, inter-compartmental clearance and peripheral volume,
//!
//! ```text
//! A(p) = [ -e^{p1-p2} - e^{p3-p2}    e^{p3-p2} ]      s0(p) = [ kappa e^{-p2} ]
//!        [  e^{p3-p4}               -e^{p3-p4} ]              [ 0             ]
//! ```
//!
//! and the central concentration is
//! `s1(t, p) = eta v+ e^{lambda+ t} - eta v- e^{lambda- t}` with the
//! eigenstructure computed in closed form below.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateBox;
use crate::error::{CpmError, Result};
use crate::linear_ode::{CoefficientRepr, Diagonalization, OdeModel};

/// Exponent differences beyond this overflow `exp` in double precision.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkConfig {
    /// Dose constant times reference weight, `D0 * w0`.
    pub kappa: f64,
    /// Box of (rescaled weight, age in years).
    pub covariate_box: CovariateBox,
}

impl Default for PkConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            covariate_box: CovariateBox::new(vec![0.5, 1.0], vec![2.0, 80.0])
                .expect("valid default box"),
        }
    }
}

impl PkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(CpmError::Validation(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if self.covariate_box.dim() != 2 {
            return Err(CpmError::Validation(
                "two-compartment covariates are (weight, age)".into(),
            ));
        }
        if self.covariate_box.lower().iter().any(|lo| *lo <= 0.0) {
            return Err(CpmError::Validation(
                "covariate box needs strictly positive lower bounds".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form eigenstructure of `A(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkEigenstructure {
    pub sigma: f64,
    pub delta: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub v_plus: f64,
    pub v_minus: f64,
    pub eta: f64,
}

/// The three rate constants `(e^{p3-p2}, e^{p1-p2}, e^{p3-p4})`.
#[derive(Debug, Clone, Copy)]
struct Rates {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

fn rates(p: &[f64]) -> Result<Rates> {
    if p.len() != 4 {
        return Err(CpmError::Precondition(format!(
            "two-compartment parameter has length 4, got {}",
            p.len()
        )));
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(CpmError::NumericDomain(format!(
            "non-finite parameter {p:?}"
        )));
    }
    let (d32, d12, d34) = (p[2] - p[1], p[0] - p[1], p[2] - p[3]);
    if [d32, d12, d34, p[1]].iter().any(|d| d.abs() > MAX_EXPONENT) {
        return Err(CpmError::NumericDomain(format!(
            "exponent overflow at {p:?}"
        )));
    }
    Ok(Rates {
        alpha: d32.exp(),
        beta: d12.exp(),
        gamma: d34.exp(),
    })
}

pub fn eigenstructure(p: &[f64], config: &PkConfig) -> Result<PkEigenstructure> {
    let Rates { alpha, beta, gamma } = rates(p)?;
    let sigma = alpha + beta + gamma;
    // (a + b + g)^2 - 4 b g = (a + b - g)^2 + 4 a g, with no cancellation.
    let u = alpha + beta - gamma;
    let delta = (u * u + 4.0 * alpha * gamma).sqrt();
    let lambda_minus = -0.5 * (sigma + delta);
    let lambda_plus = -2.0 * beta * gamma / (sigma + delta);
    let (v_plus, v_minus) = if u >= 0.0 {
        (2.0 * alpha / (delta + u), -(delta + u) / (2.0 * gamma))
    } else {
        ((delta - u) / (2.0 * gamma), -2.0 * alpha / (delta - u))
    };
    let eta = config.kappa / (p[1].exp() * (v_plus - v_minus));
    Ok(PkEigenstructure {
        sigma,
        delta,
        lambda_plus,
        lambda_minus,
        v_plus,
        v_minus,
        eta,
    })
}

/// Raw two-compartment parameters and body weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPkParams {
    pub cl: f64,
    pub v1: f64,
    pub q: f64,
    pub v2: f64,
    pub weight: f64,
}

/// Allometric weight normalisation followed by the log link.
pub fn weight_normalise(raw: &RawPkParams, reference_weight: f64) -> Result<[f64; 4]> {
    let vals = [raw.cl, raw.v1, raw.q, raw.v2, raw.weight, reference_weight];
    if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(CpmError::Domain(format!(
            "two-compartment inputs must be positive, got {raw:?} / {reference_weight}"
        )));
    }
    let w = raw.weight / reference_weight;
    let cl_star = raw.cl * w.powf(-0.75);
    let q_star = raw.q * w.powf(-0.75);
    Ok([
        (w.powf(-0.25) * cl_star).ln(),
        (raw.v1 / w).ln(),
        (w.powf(-0.25) * q_star).ln(),
        (raw.v2 / w).ln(),
    ])
}

pub fn weight_denormalise(p: &[f64; 4], weight: f64, reference_weight: f64) -> Result<RawPkParams> {
    if !(weight > 0.0 && reference_weight > 0.0) {
        return Err(CpmError::Domain("weights must be positive".into()));
    }
    let w = weight / reference_weight;
    Ok(RawPkParams {
        cl: p[0].exp() * w,
        v1: p[1].exp() * w,
        q: p[2].exp() * w,
        v2: p[3].exp() * w,
        weight,
    })
}

/// Analytic Jacobian of `p -> (eta v+, -eta v-, lambda+, lambda-)`.
pub fn coeff_jacobian(p: &[f64], config: &PkConfig) -> Result<DMatrix<f64>> {
    let Rates { alpha, beta, gamma } = rates(p)?;
    let e = eigenstructure(p, config)?;
    let grad_sigma = [beta, -alpha - beta, alpha + gamma, -gamma];
    let bg = beta * gamma;
    let sign = [-1.0, 1.0, -1.0, 1.0];
    let grad_delta: [f64; 4] =
        std::array::from_fn(|k| e.sigma / e.delta * grad_sigma[k] + 2.0 / e.delta * bg * sign[k]);
    let grad_lp: [f64; 4] = std::array::from_fn(|k| 0.5 * (grad_delta[k] - grad_sigma[k]));
    let grad_lm: [f64; 4] = std::array::from_fn(|k| 0.5 * (-grad_delta[k] - grad_sigma[k]));
    // v = lambda / gamma + 1 and grad gamma = gamma (0, 0, 1, -1)
    let dgamma = [0.0, 0.0, 1.0, -1.0];
    let grad_vp: [f64; 4] =
        std::array::from_fn(|k| (grad_lp[k] - e.lambda_plus * dgamma[k]) / gamma);
    let grad_vm: [f64; 4] =
        std::array::from_fn(|k| (grad_lm[k] - e.lambda_minus * dgamma[k]) / gamma);
    // eta = kappa gamma e^{-p2} / delta
    let dlog_eta: [f64; 4] =
        std::array::from_fn(|k| [0.0, -1.0, 1.0, -1.0][k] - grad_delta[k] / e.delta);
    let mut jac = DMatrix::zeros(4, 4);
    for k in 0..4 {
        let grad_eta = e.eta * dlog_eta[k];
        jac[(0, k)] = grad_eta * e.v_plus + e.eta * grad_vp[k];
        jac[(1, k)] = -(grad_eta * e.v_minus + e.eta * grad_vm[k]);
        jac[(2, k)] = grad_lp[k];
        jac[(3, k)] = grad_lm[k];
    }
    Ok(jac)
}

/// The two-compartment model as an [`OdeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoCompartment {
    config: PkConfig,
    corrupt_jacobian: bool,
}

impl TwoCompartment {
    pub fn new(config: PkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            corrupt_jacobian: false,
        })
    }

    /// Fault injection for the verification suite: flips the sign of the
    /// first row of the coefficient Jacobian.
    pub fn with_corrupted_jacobian(mut self, corrupt: bool) -> Self {
        self.corrupt_jacobian = corrupt;
        self
    }

    pub fn config(&self) -> &PkConfig {
        &self.config
    }

    pub fn eigenstructure(&self, p: &[f64]) -> Result<PkEigenstructure> {
        eigenstructure(p, &self.config)
    }
}

pub fn build_model(config: PkConfig) -> Result<TwoCompartment> {
    TwoCompartment::new(config)
}

impl OdeModel for TwoCompartment {
    fn id(&self) -> String {
        "two-compartment".into()
    }

    fn dim_state(&self) -> usize {
        2
    }

    fn dim_param(&self) -> usize {
        4
    }

    fn matrix(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let Rates { alpha, beta, gamma } = rates(p)?;
        Ok(DMatrix::from_row_slice(
            2,
            2,
            &[-beta - alpha, alpha, gamma, -gamma],
        ))
    }

    fn initial_state(&self, p: &[f64]) -> Result<DVector<f64>> {
        rates(p)?;
        Ok(DVector::from_vec(vec![
            self.config.kappa * (-p[1]).exp(),
            0.0,
        ]))
    }

    fn diagonalization(&self, p: &[f64]) -> Option<Result<Diagonalization>> {
        Some(self.eigenstructure(p).map(|e| Diagonalization {
            vectors: DMatrix::from_row_slice(2, 2, &[e.v_plus, e.v_minus, 1.0, 1.0]),
            rates: DVector::from_vec(vec![e.lambda_plus, e.lambda_minus]),
        }))
    }

    fn coefficients(&self, p: &[f64]) -> Option<Result<CoefficientRepr>> {
        Some(self.eigenstructure(p).and_then(|e| {
            CoefficientRepr::new(
                &[e.eta * e.v_plus, -e.eta * e.v_minus],
                &[e.lambda_plus, e.lambda_minus],
            )
        }))
    }

    fn coefficient_jacobian(&self, p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(coeff_jacobian(p, &self.config).map(|mut j| {
            if self.corrupt_jacobian {
                j.row_mut(0).neg_mut();
            }
            j
        }))
    }

    fn local_bound(&self, radius: f64) -> Option<f64> {
        Some(self.config.kappa.max(6.0) * (2.0 * radius).exp())
    }
}
