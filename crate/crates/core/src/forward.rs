//! Population forward operator `G(theta)(x) = (log s1(t_j, theta(x)))_j`,
//! its pointwise Jacobian, linearisation, adjoint and information operator.
//!
//! Field-level operations evaluate on a finite list of covariate points and
//! return one row per point.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariatePoints;
use crate::error::{CpmError, Result};
use crate::linear_ode::{eval_map, eval_map_jacobian, OdeModel, TimeDesign};
use crate::prior::{BasisMatrix, CpmField};
use crate::stats::log_log_slope;

/// Condition number above which the information solve is refused.
pub const MAX_INFORMATION_CONDITION: f64 = 1e12;

const POSITIVITY: &str = "observed component must be positive";

/// Model, design and noise level shared by all forward computations.
#[derive(Clone)]
pub struct ForwardContext {
    pub model: Arc<dyn OdeModel>,
    pub design: TimeDesign,
    /// Noise standard deviation; `0` (noiseless data) and `inf` (flat
    /// likelihood) are allowed.
    pub noise_sd: f64,
}

impl std::fmt::Debug for ForwardContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardContext")
            .field("model", &self.model.id())
            .field("design", &self.design)
            .field("noise_sd", &self.noise_sd)
            .finish()
    }
}

impl ForwardContext {
    pub fn new(model: Arc<dyn OdeModel>, design: TimeDesign, noise_sd: f64) -> Result<Self> {
        if noise_sd.is_nan() || noise_sd < 0.0 {
            return Err(CpmError::Validation(format!(
                "noise level must be nonnegative, got {noise_sd}"
            )));
        }
        Ok(Self {
            model,
            design,
            noise_sd,
        })
    }

    pub fn dim_obs(&self) -> usize {
        self.design.len()
    }

    pub fn dim_param(&self) -> usize {
        self.model.dim_param()
    }

    fn require_rank_design(&self) -> Result<()> {
        if self.dim_obs() < self.dim_param() {
            return Err(CpmError::Precondition(format!(
                "{} observation times cannot identify {} parameters",
                self.dim_obs(),
                self.dim_param()
            )));
        }
        Ok(())
    }

    /// `(log s1(t_j, p))_j`, written into `out`.
    pub fn log_observations_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        match self.model.coefficients(p) {
            Some(c) => {
                let c = c?;
                for (o, t) in out.iter_mut().zip(self.design.times()) {
                    *o = positive_log(c.eval(*t), *t, p)?;
                }
            }
            None => {
                let e = eval_map(self.model.as_ref(), p, &self.design)?;
                for (j, o) in out.iter_mut().enumerate() {
                    *o = positive_log(e[j], self.design.times()[j], p)?;
                }
            }
        }
        Ok(())
    }

    pub fn log_observations(&self, p: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim_obs());
        self.log_observations_into(p, out.as_mut_slice())?;
        Ok(out)
    }

    /// `diag(s1(t_j, p))^{-1} S(p)`, the Jacobian of `p -> G(p)`.
    pub fn forward_jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let s = eval_map(self.model.as_ref(), p, &self.design)?;
        let mut jac = eval_map_jacobian(self.model.as_ref(), p, &self.design)?;
        for j in 0..s.len() {
            if !(s[j] > 0.0) {
                return Err(positivity_error(s[j], self.design.times()[j], p));
            }
            let inv = 1.0 / s[j];
            jac.row_mut(j).iter_mut().for_each(|v| *v *= inv);
        }
        Ok(jac)
    }

    /// Pointwise forward values for parameter rows `params` (`n x d_p`).
    pub fn forward_rows(&self, params: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(params.nrows(), self.dim_obs());
        let mut p = vec![0.0; self.dim_param()];
        let mut row = vec![0.0; self.dim_obs()];
        for k in 0..params.nrows() {
            p.iter_mut()
                .enumerate()
                .for_each(|(d, v)| *v = params[(k, d)]);
            self.log_observations_into(&p, &mut row)?;
            for (j, v) in row.iter().enumerate() {
                out[(k, j)] = *v;
            }
        }
        Ok(out)
    }
}

fn positivity_error(value: f64, t: f64, p: &[f64]) -> CpmError {
    CpmError::ModelAssumption {
        assumption: POSITIVITY,
        detail: format!("s1({t}, {p:?}) = {value}"),
    }
}

#[inline]
fn positive_log(value: f64, t: f64, p: &[f64]) -> Result<f64> {
    if value > 0.0 {
        Ok(value.ln())
    } else {
        Err(positivity_error(value, t, p))
    }
}

fn check_field(ctx: &ForwardContext, field: &CpmField) -> Result<()> {
    if field.spec().dim_p != ctx.dim_param() {
        return Err(CpmError::Precondition(format!(
            "field has {} outputs, model expects {}",
            field.spec().dim_p,
            ctx.dim_param()
        )));
    }
    Ok(())
}

fn field_rows(
    ctx: &ForwardContext,
    field: &CpmField,
    xs: &CovariatePoints,
) -> Result<DMatrix<f64>> {
    check_field(ctx, field)?;
    Ok(field.eval_at(&BasisMatrix::new(field.spec(), xs)))
}

fn row(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    m.row(k).iter().copied().collect()
}

/// `G(theta)(x_k)` for every point, `n x d_o`.
pub fn apply_forward(
    ctx: &ForwardContext,
    theta: &CpmField,
    xs: &CovariatePoints,
) -> Result<DMatrix<f64>> {
    ctx.forward_rows(&field_rows(ctx, theta, xs)?)
}

/// Applies `f(J(theta0(x_k)), v_k)` row by row.
fn pointwise<F>(
    ctx: &ForwardContext,
    theta0: &DMatrix<f64>,
    values: &DMatrix<f64>,
    out_dim: usize,
    f: F,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>, &DVector<f64>) -> DVector<f64>,
{
    let mut out = DMatrix::zeros(theta0.nrows(), out_dim);
    for k in 0..theta0.nrows() {
        let jac = ctx.forward_jacobian(&row(theta0, k))?;
        let v = DVector::from_iterator(values.ncols(), values.row(k).iter().copied());
        out.set_row(k, &f(&jac, &v).transpose());
    }
    Ok(out)
}

/// `I_{theta0}[h](x_k) = J(theta0(x_k)) h(x_k)`.
pub fn linearize(
    ctx: &ForwardContext,
    theta0: &CpmField,
    h: &CpmField,
    xs: &CovariatePoints,
) -> Result<DMatrix<f64>> {
    let t0 = field_rows(ctx, theta0, xs)?;
    let hv = field_rows(ctx, h, xs)?;
    pointwise(ctx, &t0, &hv, ctx.dim_obs(), |j, v| j * v)
}

/// `J(theta0(x_k))^T g_k` for `g` given as rows (`n x d_o`).
pub fn adjoint_apply(
    ctx: &ForwardContext,
    theta0: &CpmField,
    g: &DMatrix<f64>,
    xs: &CovariatePoints,
) -> Result<DMatrix<f64>> {
    let t0 = field_rows(ctx, theta0, xs)?;
    if g.shape() != (xs.len(), ctx.dim_obs()) {
        return Err(CpmError::Precondition(
            "adjoint input has the wrong shape".into(),
        ));
    }
    pointwise(ctx, &t0, g, ctx.dim_param(), |j, v| j.transpose() * v)
}

/// `J^T J(theta0(x_k)) h(x_k)`.
pub fn information_apply(
    ctx: &ForwardContext,
    theta0: &CpmField,
    h: &CpmField,
    xs: &CovariatePoints,
) -> Result<DMatrix<f64>> {
    let t0 = field_rows(ctx, theta0, xs)?;
    let hv = field_rows(ctx, h, xs)?;
    pointwise(ctx, &t0, &hv, ctx.dim_param(), |j, v| {
        j.transpose() * (j * v)
    })
}

/// Solves `J^T J(p) v = psi` by Cholesky after a conditioning check.
pub fn solve_information_at(
    ctx: &ForwardContext,
    p: &[f64],
    psi: &DVector<f64>,
    x: &[f64],
) -> Result<DVector<f64>> {
    let jac = ctx.forward_jacobian(p)?;
    let info = jac.transpose() * &jac;
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_INFORMATION_CONDITION {
        return Err(CpmError::IllConditioned {
            x: x.to_vec(),
            condition,
        });
    }
    let chol = info.cholesky().ok_or(CpmError::IllConditioned {
        x: x.to_vec(),
        condition,
    })?;
    Ok(chol.solve(psi))
}

/// Pointwise `psi_bar(x_k) = (J^T J(theta0(x_k)))^{-1} psi(x_k)`.
pub fn solve_information_equation(
    ctx: &ForwardContext,
    theta0: &CpmField,
    psi: &CpmField,
    xs: &CovariatePoints,
) -> Result<DMatrix<f64>> {
    ctx.require_rank_design()?;
    let t0 = field_rows(ctx, theta0, xs)?;
    let pv = field_rows(ctx, psi, xs)?;
    let mut out = DMatrix::zeros(xs.len(), ctx.dim_param());
    for k in 0..xs.len() {
        let v = DVector::from_iterator(pv.ncols(), pv.row(k).iter().copied());
        out.set_row(
            k,
            &solve_information_at(ctx, &row(&t0, k), &v, xs.point(k))?.transpose(),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    pub scales: Vec<f64>,
    /// `s |h|_inf` for each scale.
    pub h_norms: Vec<f64>,
    /// Empirical L2 norm of `G(theta0 + s h) - G(theta0) - I[s h]`.
    pub rho_values: Vec<f64>,
    /// Log-log slope of `rho` against `s |h|_inf`; `None` when degenerate.
    pub fitted_slope: Option<f64>,
    /// Set when some `rho` is exactly zero (e.g. `h = 0`).
    pub degenerate: bool,
}

/// Default perturbation scales `0.5 * 2^{-k}`, `k = 0..=8`.
pub fn default_scales() -> Vec<f64> {
    (0..=8).map(|k| 0.5 * 2f64.powi(-k)).collect()
}

/// Measures the linearisation remainder along `h` at the given scales.
/// `grid` supplies the points for `|h|_inf`.
pub fn linearization_study(
    ctx: &ForwardContext,
    theta0: &CpmField,
    h: &CpmField,
    scales: &[f64],
    xs: &CovariatePoints,
    grid: &CovariatePoints,
) -> Result<LinearizationReport> {
    if scales.len() < 3
        || scales.iter().any(|s| !(*s > 0.0))
        || scales.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(CpmError::Precondition(
            "need at least three positive, decreasing scales".into(),
        ));
    }
    let t0 = field_rows(ctx, theta0, xs)?;
    let hv = field_rows(ctx, h, xs)?;
    let base = ctx.forward_rows(&t0)?;
    let lin = pointwise(ctx, &t0, &hv, ctx.dim_obs(), |j, v| j * v)?;
    let h_sup = h
        .eval_at(&BasisMatrix::new(h.spec(), grid))
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max);
    let n = xs.len() as f64;
    let mut rho_values = Vec::with_capacity(scales.len());
    for &s in scales {
        let moved = ctx.forward_rows(&(&t0 + &hv * s))?;
        let rem = moved - &base - &lin * s;
        rho_values.push((rem.iter().map(|v| v * v).sum::<f64>() / n).sqrt());
    }
    let h_norms: Vec<f64> = scales.iter().map(|s| s * h_sup).collect();
    let degenerate = rho_values.contains(&0.0) || h_sup == 0.0;
    let fitted_slope = if degenerate {
        None
    } else {
        log_log_slope(&h_norms, &rho_values)
    };
    Ok(LinearizationReport {
        scales: scales.to_vec(),
        h_norms,
        rho_values,
        fitted_slope,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{central_jacobian, max_relative_error};
    use crate::pk::{PkConfig, TwoCompartment};
    use crate::prior::{sample_base_prior, SeriesPriorSpec};
    use crate::rng::{standard_normal, substream, uniform_in_ball};
    use approx::assert_relative_eq;

    fn ctx(times: Vec<f64>) -> ForwardContext {
        let model = Arc::new(TwoCompartment::new(PkConfig::default()).unwrap());
        ForwardContext::new(model, TimeDesign::from_times(times).unwrap(), 1.0).unwrap()
    }

    fn spec() -> SeriesPriorSpec {
        SeriesPriorSpec::new(8.0, 6, 4, PkConfig::default().covariate_box).unwrap()
    }

    fn points(n: usize, seed: u64) -> CovariatePoints {
        let b = spec().domain;
        crate::covariates::CovariateSampler::UniformBox.sample_points(
            &b,
            n,
            &mut substream(seed, &[]),
        )
    }

    #[test]
    fn zero_field_outputs() {
        let xs = points(5, 1);
        let zero = CpmField::zeros(&spec());
        let g = apply_forward(&ctx(vec![0.0]), &zero, &xs).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let g = apply_forward(&ctx(vec![1.0]), &zero, &xs).unwrap();
        assert!(g.iter().all(|v| (v + 1.421185).abs() < 1e-6));
    }

    #[test]
    fn shift_in_central_volume() {
        let xs = points(7, 2);
        let c = ctx(vec![0.0, 2.0]);
        let theta = sample_base_prior(&spec(), 4);
        let shifted = theta
            .add(&CpmField::constant(&spec(), &[0.0, 0.3, 0.0, 0.0]).unwrap())
            .unwrap();
        let (a, b) = (
            apply_forward(&c, &theta, &xs).unwrap(),
            apply_forward(&c, &shifted, &xs).unwrap(),
        );
        for k in 0..xs.len() {
            assert_relative_eq!(b[(k, 0)] - a[(k, 0)], -0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn nonpositive_observation_is_an_assumption_error() {
        use crate::linear_ode::ModalModel;
        // s1(t) = 1 - 2 e^{-t} is negative near t = 0.
        let v = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.0, 1.0]);
        let m = ModalModel::new(
            v,
            vec![0.0, -1.0],
            DMatrix::zeros(2, 1),
            vec![0.0, 0.0],
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let c = ForwardContext::new(Arc::new(m), TimeDesign::from_times(vec![0.1]).unwrap(), 1.0)
            .unwrap();
        assert!(matches!(
            c.log_observations(&[0.0]),
            Err(CpmError::ModelAssumption { .. })
        ));
    }

    #[test]
    fn jacobian_rows() {
        let c = ctx(vec![0.0, 0.5, 1.0, 2.0]);
        let j = c.forward_jacobian(&[0.0; 4]).unwrap();
        for (k, e) in [0.0, -1.0, 0.0, 0.0].iter().enumerate() {
            assert!((j[(0, k)] - e).abs() < 1e-14);
        }
        let mut rng = substream(7, &[]);
        for _ in 0..100 {
            let p = uniform_in_ball(&mut rng, 4, 2.0);
            let fd = central_jacobian(|q| c.log_observations(q), &p, 1e-6).unwrap();
            let an = c.forward_jacobian(&p).unwrap();
            assert!(max_relative_error(&an, &fd) < 1e-5);
            assert_eq!(crate::linear_ode::numerical_rank(&an).0, 4);
        }
    }

    #[test]
    fn linearize_basics() {
        let c = ctx(vec![0.0, 1.0]);
        let xs = points(6, 3);
        let zero = CpmField::zeros(&spec());
        let theta0 = sample_base_prior(&spec(), 8);
        assert!(linearize(&c, &theta0, &zero, &xs)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let h = sample_base_prior(&spec(), 9);
        let a = linearize(&c, &theta0, &h, &xs).unwrap();
        let b = linearize(&c, &theta0, &h.scaled(2.0), &xs).unwrap();
        assert!((b - a * 2.0).abs().max() < 1e-14);
        let e2 = CpmField::constant(&spec(), &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let l = linearize(&c, &zero, &e2, &xs).unwrap();
        assert!((0..xs.len()).all(|k| (l[(k, 0)] + 1.0).abs() < 1e-14));
    }

    #[test]
    fn adjoint_duality() {
        let c = ctx(vec![0.5, 1.0, 2.0, 4.0]);
        let xs = points(50, 4);
        let theta0 = sample_base_prior(&spec(), 10);
        let mut rng = substream(11, &[]);
        for pair in 0..100 {
            let h = sample_base_prior(&spec(), 100 + pair);
            let g = DMatrix::from_fn(xs.len(), 4, |_, _| standard_normal(&mut rng));
            let lhs = linearize(&c, &theta0, &h, &xs).unwrap().dot(&g);
            let hv = h.eval_at(&BasisMatrix::new(h.spec(), &xs));
            let rhs = hv.dot(&adjoint_apply(&c, &theta0, &g, &xs).unwrap());
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        }
        let z = DMatrix::zeros(xs.len(), 4);
        assert!(adjoint_apply(&c, &theta0, &z, &xs)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn information_round_trip() {
        let c = ctx(vec![0.5, 1.0, 2.0, 4.0]);
        let xs = points(40, 5);
        let theta0 = sample_base_prior(&spec(), 12).scaled(0.5);
        let psi = sample_base_prior(&spec(), 13);
        let via_adj = adjoint_apply(
            &c,
            &theta0,
            &linearize(&c, &theta0, &psi, &xs).unwrap(),
            &xs,
        )
        .unwrap();
        let direct = information_apply(&c, &theta0, &psi, &xs).unwrap();
        assert!((via_adj - &direct).abs().max() < 1e-12 * direct.abs().max());

        let bar = solve_information_equation(&c, &theta0, &psi, &xs).unwrap();
        let t0 = theta0.eval_at(&BasisMatrix::new(theta0.spec(), &xs));
        let pv = psi.eval_at(&BasisMatrix::new(psi.spec(), &xs));
        let mut inv_norm_max: f64 = 0.0;
        for k in 0..xs.len() {
            let j = c.forward_jacobian(&row(&t0, k)).unwrap();
            let info = j.transpose() * &j;
            let resid = &info * bar.row(k).transpose() - pv.row(k).transpose();
            assert!(resid.norm() <= 1e-10 * pv.row(k).norm());
            let inv = info.try_inverse().unwrap();
            inv_norm_max = inv_norm_max.max(inv.singular_values().max());
        }
        let bar_sup = bar.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let psi_sup = pv.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        assert!(bar_sup <= inv_norm_max * psi_sup * (1.0 + 1e-12));

        let zero = CpmField::zeros(&spec());
        assert!(solve_information_equation(&c, &theta0, &zero, &xs)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn information_solve_needs_enough_times() {
        let c = ctx(vec![0.5, 1.0]);
        let z = CpmField::zeros(&spec());
        assert!(solve_information_equation(&c, &z, &z, &points(2, 1)).is_err());
    }

    #[test]
    fn ill_conditioning_is_reported() {
        // Nearly coincident times make J^T J nearly singular.
        let c = ctx(vec![1.0, 1.0 + 1e-7, 1.0 + 2e-7, 1.0 + 3e-7]);
        let err = solve_information_at(&c, &[0.0; 4], &DVector::from_element(4, 1.0), &[1.0, 2.0])
            .unwrap_err();
        assert!(matches!(err, CpmError::IllConditioned { ref x, .. } if x == &vec![1.0, 2.0]));
    }

    #[test]
    fn linearization_remainder_is_quadratic() {
        let c = ctx(vec![0.5, 1.0, 2.0, 4.0]);
        let xs = points(50, 6);
        let grid = spec().domain.grid(16);
        let theta0 = sample_base_prior(&spec(), 20);
        let h = sample_base_prior(&spec(), 21);
        let r = linearization_study(&c, &theta0, &h, &default_scales(), &xs, &grid).unwrap();
        let slope = r.fitted_slope.unwrap();
        assert!((1.8..=2.2).contains(&slope), "{slope}");
        let ratio = r.rho_values[7] / r.rho_values[8];
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");

        let zero = CpmField::zeros(&spec());
        let r = linearization_study(&c, &theta0, &zero, &default_scales(), &xs, &grid).unwrap();
        assert!(r.degenerate && r.fitted_slope.is_none() && r.rho_values.iter().all(|v| *v == 0.0));
    }
}
