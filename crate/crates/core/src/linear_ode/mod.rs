//! Parametrised, time-homogeneous linear ODE initial value problems
//! `ds/dt = A(p) s`, `s(0) = s0(p)`, with real diagonalisable `A(p)`.
//!
//! The observed quantity is the first state component, which for a
//! diagonalisable system is a finite sum of exponentials
//! `s1(t, p) = sum_i a_i(p) exp(lambda_i(p) t)` (the coefficient map).

mod expm;
mod modal;
mod roots;

pub use expm::expm;
pub use modal::{FnModel, ModalModel};
pub use roots::{
    count_roots_exp_affine, eval_exp_affine, ExpAffineTerm, RootCount, DEFAULT_RESOLUTION,
    DEFAULT_WINDOW,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{CpmError, Result};
use crate::rng::{substream, uniform_in_ball};

/// Observation instants `0 <= t_1 < ... < t_do <= T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTimeDesign", into = "RawTimeDesign")]
pub struct TimeDesign {
    times: Vec<f64>,
    horizon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTimeDesign {
    times: Vec<f64>,
    horizon: f64,
}

impl TryFrom<RawTimeDesign> for TimeDesign {
    type Error = CpmError;
    fn try_from(raw: RawTimeDesign) -> Result<Self> {
        TimeDesign::new(raw.times, raw.horizon)
    }
}

impl From<TimeDesign> for RawTimeDesign {
    fn from(d: TimeDesign) -> Self {
        RawTimeDesign {
            times: d.times,
            horizon: d.horizon,
        }
    }
}

impl TimeDesign {
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(CpmError::Validation(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if times.is_empty() {
            return Err(CpmError::Validation(
                "time design needs at least one time".into(),
            ));
        }
        for w in times.windows(2) {
            if w[0] == w[1] {
                return Err(CpmError::Validation(format!(
                    "times distinct: {} repeated",
                    w[0]
                )));
            }
            if w[0] > w[1] {
                return Err(CpmError::Validation(
                    "times must be strictly increasing".into(),
                ));
            }
        }
        if let Some(t) = times
            .iter()
            .find(|t| !(t.is_finite() && **t >= 0.0 && **t <= horizon))
        {
            return Err(CpmError::Validation(format!(
                "time {t} outside [0, {horizon}]"
            )));
        }
        Ok(Self { times, horizon })
    }

    /// Design whose horizon is its last time.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let horizon = times.last().copied().filter(|t| *t > 0.0).unwrap_or(1.0);
        Self::new(times, horizon)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Prefactors and distinct rates of the sum-of-exponentials form of `s1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRepr {
    prefactors: SmallVec<[f64; 4]>,
    rates: SmallVec<[f64; 4]>,
}

impl CoefficientRepr {
    pub fn new(prefactors: &[f64], rates: &[f64]) -> Result<Self> {
        if prefactors.len() != rates.len() || prefactors.is_empty() {
            return Err(CpmError::Precondition(format!(
                "{} prefactors for {} rates",
                prefactors.len(),
                rates.len()
            )));
        }
        if prefactors.iter().chain(rates).any(|x| !x.is_finite()) {
            return Err(CpmError::NumericDomain("non-finite coefficient".into()));
        }
        if prefactors.contains(&0.0) {
            return Err(CpmError::Precondition("prefactors must be nonzero".into()));
        }
        for (i, l) in rates.iter().enumerate() {
            if rates[i + 1..].contains(l) {
                return Err(CpmError::Precondition(format!("rate {l} is not distinct")));
            }
        }
        Ok(Self {
            prefactors: prefactors.into(),
            rates: rates.into(),
        })
    }

    pub fn prefactors(&self) -> &[f64] {
        &self.prefactors
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Number of distinct exponentials.
    pub fn terms(&self) -> usize {
        self.rates.len()
    }

    pub fn intrinsic_dim(&self) -> usize {
        2 * self.terms()
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.prefactors
            .iter()
            .zip(&self.rates)
            .map(|(a, l)| a * (l * t).exp())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamDomain {
    Whole,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ParamDomain {
    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            ParamDomain::Whole => true,
            ParamDomain::Box { lower, upper } => p
                .iter()
                .zip(lower)
                .zip(upper)
                .all(|((x, lo), hi)| *x > *lo && *x < *hi),
        }
    }
}

/// Real eigendecomposition `A(p) = V diag(rates) V^{-1}`.
#[derive(Debug, Clone)]
pub struct Diagonalization {
    pub vectors: DMatrix<f64>,
    pub rates: DVector<f64>,
}

/// A parametrised linear ODE-IVP.
///
/// Only `matrix` and `initial_state` are required. Models that know their
/// eigenstructure should also provide `diagonalization`, `coefficients` and
/// `coefficient_jacobian`; the generic routines fall back to the matrix
/// exponential otherwise.
pub trait OdeModel: Send + Sync {
    fn id(&self) -> String;
    fn dim_state(&self) -> usize;
    fn dim_param(&self) -> usize;

    fn param_domain(&self) -> ParamDomain {
        ParamDomain::Whole
    }

    fn matrix(&self, p: &[f64]) -> Result<DMatrix<f64>>;
    fn initial_state(&self, p: &[f64]) -> Result<DVector<f64>>;

    fn diagonalization(&self, _p: &[f64]) -> Option<Result<Diagonalization>> {
        None
    }

    fn coefficients(&self, _p: &[f64]) -> Option<Result<CoefficientRepr>> {
        None
    }

    /// Jacobian of `p -> (a_1..a_d, lambda_1..lambda_d)`, shape `2d x d_p`.
    fn coefficient_jacobian(&self, _p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Analytic `C1(M)` bounding `|A(p)|`, `|s0(p)|` and their Lipschitz
    /// constants on the ball `B(0, M)`, when the model knows one.
    fn local_bound(&self, _radius: f64) -> Option<f64> {
        None
    }
}

fn check_param(model: &dyn OdeModel, p: &[f64]) -> Result<()> {
    if p.len() != model.dim_param() {
        return Err(CpmError::Precondition(format!(
            "parameter has length {}, model `{}` expects {}",
            p.len(),
            model.id(),
            model.dim_param()
        )));
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(CpmError::NumericDomain(format!(
            "non-finite parameter {p:?}"
        )));
    }
    if !model.param_domain().contains(p) {
        return Err(CpmError::Domain(format!("{p:?}")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(CpmError::Precondition(format!(
            "time {t} must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// `s(t, p) = exp(A(p) t) s0(p)`, via the model's diagonalisation when
/// available and the Padé matrix exponential otherwise.
pub fn solve_state(model: &dyn OdeModel, p: &[f64], t: f64) -> Result<DVector<f64>> {
    check_param(model, p)?;
    check_time(t)?;
    let s0 = model.initial_state(p)?;
    if let Some(diag) = model.diagonalization(p) {
        let diag = diag?;
        let modal = diag
            .vectors
            .clone()
            .lu()
            .solve(&s0)
            .ok_or_else(|| CpmError::NumericDomain("singular eigenvector matrix".into()))?;
        let scaled = modal.zip_map(&diag.rates, |c, l| c * (l * t).exp());
        return Ok(&diag.vectors * scaled);
    }
    let a = model.matrix(p)?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(CpmError::NumericDomain("non-finite matrix entry".into()));
    }
    Ok(expm(&(a * t))? * s0)
}

/// First state component at a single time.
pub fn observed_component(model: &dyn OdeModel, p: &[f64], t: f64) -> Result<f64> {
    match model.coefficients(p) {
        Some(c) => {
            check_param(model, p)?;
            check_time(t)?;
            Ok(c?.eval(t))
        }
        None => Ok(solve_state(model, p, t)?[0]),
    }
}

/// Evaluation map `E(p) = (s1(t_j, p))_j`.
pub fn eval_map(model: &dyn OdeModel, p: &[f64], design: &TimeDesign) -> Result<DVector<f64>> {
    check_param(model, p)?;
    match model.coefficients(p) {
        Some(c) => {
            let c = c?;
            Ok(DVector::from_iterator(
                design.len(),
                design.times().iter().map(|t| c.eval(*t)),
            ))
        }
        None => {
            let mut out = DVector::zeros(design.len());
            for (j, t) in design.times().iter().enumerate() {
                out[j] = solve_state(model, p, *t)?[0];
            }
            Ok(out)
        }
    }
}

fn coefficient_parts(model: &dyn OdeModel, p: &[f64]) -> Result<(CoefficientRepr, DMatrix<f64>)> {
    let capability = |c| CpmError::Capability {
        model: model.id(),
        capability: c,
    };
    let coeffs = model
        .coefficients(p)
        .ok_or_else(|| capability("a coefficient map"))??;
    let jac = model
        .coefficient_jacobian(p)
        .ok_or_else(|| capability("a coefficient Jacobian"))??;
    let d = coeffs.terms();
    if jac.nrows() != 2 * d || jac.ncols() != model.dim_param() {
        return Err(CpmError::Precondition(format!(
            "coefficient Jacobian is {}x{}, expected {}x{}",
            jac.nrows(),
            jac.ncols(),
            2 * d,
            model.dim_param()
        )));
    }
    Ok((coeffs, jac))
}

/// Gradient of `s1(t, p)` assembled from the coefficient Jacobian:
/// `sum_i exp(lambda_i t) (grad a_i + a_i t grad lambda_i)`.
pub(crate) fn observed_gradient_from_parts(
    coeffs: &CoefficientRepr,
    jac: &DMatrix<f64>,
    t: f64,
    out: &mut [f64],
) {
    let d = coeffs.terms();
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..d {
        let e = (coeffs.rates()[i] * t).exp();
        let ai = coeffs.prefactors()[i];
        for (k, o) in out.iter_mut().enumerate() {
            *o += e * (jac[(i, k)] + ai * jac[(d + i, k)] * t);
        }
    }
}

/// Jacobian of the evaluation map, shape `d_o x d_p`.
pub fn eval_map_jacobian(
    model: &dyn OdeModel,
    p: &[f64],
    design: &TimeDesign,
) -> Result<DMatrix<f64>> {
    check_param(model, p)?;
    let (coeffs, jac) = coefficient_parts(model, p)?;
    let dp = model.dim_param();
    let mut out = DMatrix::zeros(design.len(), dp);
    let mut row = vec![0.0; dp];
    for (j, t) in design.times().iter().enumerate() {
        observed_gradient_from_parts(&coeffs, &jac, *t, &mut row);
        for k in 0..dp {
            out[(j, k)] = row[k];
        }
    }
    Ok(out)
}

/// Relative threshold on singular values for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Numerical rank and smallest singular value of a matrix.
pub fn numerical_rank(m: &DMatrix<f64>) -> (usize, f64) {
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank = sv.iter().filter(|s| **s > RANK_TOLERANCE * max).count();
    (rank, if sv.is_empty() { 0.0 } else { min })
}

pub fn coefficient_jacobian_rank(model: &dyn OdeModel, p: &[f64]) -> Result<(usize, f64)> {
    check_param(model, p)?;
    let jac = model
        .coefficient_jacobian(p)
        .ok_or_else(|| CpmError::Capability {
            model: model.id(),
            capability: "a coefficient Jacobian",
        })??;
    Ok(numerical_rank(&jac))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Running-maximum estimates of the local stability constants on `B(0, M)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub radius: f64,
    /// Max of `|A(p)|`, `|s0(p)|` and their difference quotients.
    pub bound_c1: f64,
    /// Max of `|log s1(t, p)|` over the probe times.
    pub log_bound_c2: f64,
    /// Max of `sup_t |s(t,p) - s(t,q)| / |p - q|`.
    pub lipschitz_l: f64,
    /// Max of `|p - q| / |E(p) - E(q)|`.
    pub inverse_lipschitz_l_inv: f64,
    /// Max of `|p - q| / |log E(p) - log E(q)|`.
    pub stability_c3: f64,
    /// Largest observed `|s(t, p)|`.
    pub max_state_norm: f64,
    pub sample_count: usize,
    pub violations: usize,
}

impl StabilityReport {
    pub fn violation(&self) -> bool {
        self.violations > 0
    }

    fn merge(&mut self, other: &PairProbe) {
        self.bound_c1 = self.bound_c1.max(other.bound_c1);
        self.log_bound_c2 = self.log_bound_c2.max(other.log_bound_c2);
        self.lipschitz_l = self.lipschitz_l.max(other.lipschitz_l);
        self.max_state_norm = self.max_state_norm.max(other.max_state_norm);
        match other.inverse {
            Some((l_inv, c3)) => {
                self.inverse_lipschitz_l_inv = self.inverse_lipschitz_l_inv.max(l_inv);
                self.stability_c3 = self.stability_c3.max(c3);
            }
            None => self.violations += 1,
        }
        self.sample_count += 1;
    }
}

#[derive(Debug, Clone)]
struct PairProbe {
    bound_c1: f64,
    log_bound_c2: f64,
    lipschitz_l: f64,
    max_state_norm: f64,
    /// `None` when the pair violates injectivity or positivity.
    inverse: Option<(f64, f64)>,
}

/// Times at which sup-over-time quantities are probed: the design plus a
/// uniform grid on `[0, T]`.
fn probe_times(design: &TimeDesign) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..=40)
        .map(|i| design.horizon() * i as f64 / 40.0)
        .collect();
    ts.extend_from_slice(design.times());
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup();
    ts
}

fn probe_pair(
    model: &dyn OdeModel,
    design: &TimeDesign,
    ts: &[f64],
    p: &[f64],
    q: &[f64],
) -> Result<PairProbe> {
    let dist = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let (ap, aq) = (model.matrix(p)?, model.matrix(q)?);
    let (sp, sq) = (model.initial_state(p)?, model.initial_state(q)?);
    let mut c1 = spectral_norm(&ap)
        .max(spectral_norm(&aq))
        .max(sp.norm())
        .max(sq.norm());
    if dist > 0.0 {
        c1 = c1
            .max(spectral_norm(&(&ap - &aq)) / dist)
            .max((&sp - &sq).norm() / dist);
    }

    let mut c2: f64 = 0.0;
    let mut lip: f64 = 0.0;
    let mut state_norm: f64 = 0.0;
    let mut positive = true;
    for &t in ts {
        let (xp, xq) = (solve_state(model, p, t)?, solve_state(model, q, t)?);
        state_norm = state_norm.max(xp.norm()).max(xq.norm());
        if xp[0] > 0.0 && xq[0] > 0.0 {
            c2 = c2.max(xp[0].ln().abs()).max(xq[0].ln().abs());
        } else {
            positive = false;
        }
        if dist > 0.0 {
            lip = lip.max((&xp - &xq).norm() / dist);
        }
    }

    let (ep, eq) = (eval_map(model, p, design)?, eval_map(model, q, design)?);
    let e_diff = (&ep - &eq).norm();
    let inverse = if !positive || dist == 0.0 || ep.iter().chain(eq.iter()).any(|v| *v <= 0.0) {
        None
    } else {
        let g_diff = ep
            .iter()
            .zip(eq.iter())
            .map(|(a, b)| (a.ln() - b.ln()).powi(2))
            .sum::<f64>()
            .sqrt();
        if e_diff > 0.0 && g_diff > 0.0 {
            Some((dist / e_diff, dist / g_diff))
        } else {
            None
        }
    };
    Ok(PairProbe {
        bound_c1: c1,
        log_bound_c2: c2,
        lipschitz_l: lip,
        max_state_norm: state_norm,
        inverse,
    })
}

/// Estimates the local constants by sampling `n_pairs` i.i.d. uniform pairs
/// in `B(0, M)`. Pair `k` uses its own seeded substream, so the estimate
/// after `n` pairs is a prefix of the estimate after `m > n` pairs.
pub fn probe_stability(
    model: &dyn OdeModel,
    design: &TimeDesign,
    radius: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<StabilityReport> {
    Ok(probe_stability_checkpoints(model, design, radius, &[n_pairs], seed)?.remove(0))
}

/// Same as [`probe_stability`] but returns the report after each requested
/// (sorted) pair count.
pub fn probe_stability_checkpoints(
    model: &dyn OdeModel,
    design: &TimeDesign,
    radius: f64,
    checkpoints: &[usize],
    seed: u64,
) -> Result<Vec<StabilityReport>> {
    use rayon::prelude::*;

    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CpmError::Precondition(format!(
            "radius {radius} must be positive"
        )));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(CpmError::Precondition("checkpoints must be sorted".into()));
    }
    if let ParamDomain::Box { .. } = model.param_domain() {
        // The ball must sit inside the domain; check its bounding box corners.
        let dp = model.dim_param();
        for i in 0..dp {
            for s in [-1.0, 1.0] {
                let mut p = vec![0.0; dp];
                p[i] = s * radius * (1.0 - 1e-12);
                if !model.param_domain().contains(&p) {
                    return Err(CpmError::Precondition(format!(
                        "B(0, {radius}) is not inside the parameter domain"
                    )));
                }
            }
        }
    }
    let total = checkpoints.last().copied().unwrap_or(0);
    let ts = probe_times(design);
    let dp = model.dim_param();
    let probes: Vec<PairProbe> = (0..total)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, &[k as u64]);
            let p = uniform_in_ball(&mut rng, dp, radius);
            let q = uniform_in_ball(&mut rng, dp, radius);
            probe_pair(model, design, &ts, &p, &q)
        })
        .collect::<Result<_>>()?;

    let mut report = StabilityReport {
        radius,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    for &cp in checkpoints {
        while next < cp {
            report.merge(&probes[next]);
            next += 1;
        }
        out.push(report.clone());
    }
    Ok(out)
}

/// The Gronwall Lipschitz bound `L(C1, T) = e^{C1 T} C1 (1 + e^{C1 T} C1 T)`.
pub fn gronwall_lipschitz_bound(c1: f64, horizon: f64) -> f64 {
    let g = (c1 * horizon).exp() * c1;
    g * (1.0 + g * horizon)
}
