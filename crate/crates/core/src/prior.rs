//! Truncated tensor-cosine Gaussian series prior on vector-valued functions
//! over the covariate box, its `N`-dependent rescaling and the rate
//! bookkeeping used by the contraction diagnostics.
//!
//! A field is `theta_d(x) = sum_j c_{d,j} phi_j(u(x))` where `u` maps the box
//! onto `[0, 1]^dx` and `phi_j(u) = prod_i n_{j_i} cos(pi j_i u_i)` with
//! `n_0 = 1`, `n_k = sqrt(2)`, an orthonormal system for the uniform law.
//! Under the base prior the coefficients are independent centred Gaussians
//! with standard deviation `(1 + |j|^2)^{-(alpha + dx/2)/2}`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateBox, CovariatePoints};
use crate::error::{CpmError, Result};
use crate::rng::{standard_normal, substream};

/// Grid resolution per axis for sup norms.
pub const SUP_GRID_PER_AXIS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPriorSpec {
    pub alpha: f64,
    /// Maximal frequency per axis.
    pub cutoff: usize,
    pub dim_p: usize,
    pub domain: CovariateBox,
}

impl SeriesPriorSpec {
    pub fn new(alpha: f64, cutoff: usize, dim_p: usize, domain: CovariateBox) -> Result<Self> {
        let spec = Self {
            alpha,
            cutoff,
            dim_p,
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CpmError::Validation(format!(
                "smoothness must be positive, got {}",
                self.alpha
            )));
        }
        if self.cutoff == 0 {
            return Err(CpmError::Validation(
                "basis cutoff must be at least 1".into(),
            ));
        }
        if self.dim_p == 0 {
            return Err(CpmError::Validation(
                "output dimension must be positive".into(),
            ));
        }
        if (self.cutoff + 1)
            .checked_pow(self.dim_x() as u32)
            .is_none_or(|b| b > 1 << 20)
        {
            return Err(CpmError::Validation("basis too large".into()));
        }
        Ok(())
    }

    pub fn dim_x(&self) -> usize {
        self.domain.dim()
    }

    /// Basis functions per output component, `(J + 1)^dx`.
    pub fn basis_len(&self) -> usize {
        (self.cutoff + 1).pow(self.dim_x() as u32)
    }

    pub fn coeff_len(&self) -> usize {
        self.basis_len() * self.dim_p
    }

    /// Multi-index of basis function `b`, first axis varying slowest.
    pub fn multi_index(&self, b: usize) -> Vec<usize> {
        let base = self.cutoff + 1;
        let mut idx = vec![0; self.dim_x()];
        let mut rem = b;
        for i in (0..self.dim_x()).rev() {
            idx[i] = rem % base;
            rem /= base;
        }
        idx
    }

    pub fn index_norm_sq(&self, b: usize) -> usize {
        self.multi_index(b).iter().map(|k| k * k).sum()
    }

    pub fn prior_sd(&self, b: usize) -> f64 {
        let exponent = -(self.alpha + self.dim_x() as f64 / 2.0) / 2.0;
        (1.0 + self.index_norm_sq(b) as f64).powf(exponent)
    }

    pub fn prior_sds(&self) -> Vec<f64> {
        (0..self.basis_len()).map(|b| self.prior_sd(b)).collect()
    }

    /// Basis function values at `x`, written into `out` (length `basis_len`).
    pub fn eval_basis(&self, x: &[f64], out: &mut [f64]) {
        let base = self.cutoff + 1;
        let dx = self.dim_x();
        let mut axis = vec![0.0; dx * base];
        for i in 0..dx {
            let u = self.domain.to_unit(i, x[i]);
            axis[i * base] = 1.0;
            for k in 1..base {
                axis[i * base + k] = SQRT_2 * (PI * k as f64 * u).cos();
            }
        }
        // Tensor product, built up one axis at a time.
        out[0] = 1.0;
        let mut filled = 1;
        for i in 0..dx {
            for f in (0..filled).rev() {
                let v = out[f];
                for k in (0..base).rev() {
                    out[f * base + k] = v * axis[i * base + k];
                }
            }
            filled *= base;
        }
    }

    /// Basis indices ordered by increasing `|j|^2`, ties broken by index.
    pub fn frequency_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.basis_len()).collect();
        order.sort_by_key(|b| (self.index_norm_sq(*b), *b));
        order
    }
}

/// Basis values at a fixed set of points, `n x basis_len`.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    values: DMatrix<f64>,
}

impl BasisMatrix {
    pub fn new(spec: &SeriesPriorSpec, points: &CovariatePoints) -> Self {
        let bl = spec.basis_len();
        let mut values = DMatrix::zeros(points.len(), bl);
        let mut row = vec![0.0; bl];
        for (k, x) in points.iter().enumerate() {
            spec.eval_basis(x, &mut row);
            for (b, v) in row.iter().enumerate() {
                values[(k, b)] = *v;
            }
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Field values at the points as an `n x dim_p` matrix.
    pub fn apply(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        &self.values * coeffs
    }
}

/// A function `X -> R^{dim_p}` in the truncated basis. Coefficients are
/// stored component-major: `coeffs[d * basis_len + b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpmField {
    spec: SeriesPriorSpec,
    coeffs: Vec<f64>,
}

const FIELD_FORMAT: &str = "cpm-field";
const FIELD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FieldFile {
    format: String,
    version: u32,
    alpha: f64,
    cutoff: usize,
    dim_x: usize,
    dim_p: usize,
    domain: CovariateBox,
    coeffs: Vec<f64>,
}

impl CpmField {
    pub fn zeros(spec: &SeriesPriorSpec) -> Self {
        Self {
            spec: spec.clone(),
            coeffs: vec![0.0; spec.coeff_len()],
        }
    }

    pub fn from_coeffs(spec: &SeriesPriorSpec, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != spec.coeff_len() {
            return Err(CpmError::Validation(format!(
                "expected {} coefficients, got {}",
                spec.coeff_len(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(CpmError::NumericDomain(
                "non-finite field coefficient".into(),
            ));
        }
        Ok(Self {
            spec: spec.clone(),
            coeffs,
        })
    }

    /// The constant field `x -> value`.
    pub fn constant(spec: &SeriesPriorSpec, value: &[f64]) -> Result<Self> {
        if value.len() != spec.dim_p {
            return Err(CpmError::Validation(
                "constant has the wrong dimension".into(),
            ));
        }
        let mut f = Self::zeros(spec);
        for (d, v) in value.iter().enumerate() {
            f.coeffs[d * spec.basis_len()] = *v;
        }
        Ok(f)
    }

    pub fn spec(&self) -> &SeriesPriorSpec {
        &self.spec
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, d: usize, b: usize) -> f64 {
        self.coeffs[d * self.spec.basis_len() + b]
    }

    /// Coefficients as a `basis_len x dim_p` matrix.
    pub fn coeff_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.spec.basis_len(), self.spec.dim_p, &self.coeffs)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let bl = self.spec.basis_len();
        let mut basis = vec![0.0; bl];
        self.spec.eval_basis(x, &mut basis);
        self.coeffs
            .chunks_exact(bl)
            .map(|c| c.iter().zip(&basis).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Values at the points of a basis matrix, `n x dim_p`.
    pub fn eval_at(&self, basis: &BasisMatrix) -> DMatrix<f64> {
        basis.apply(&self.coeff_matrix())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            spec: self.spec.clone(),
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn add(&self, other: &CpmField) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            spec: self.spec.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &CpmField) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    fn check_compatible(&self, other: &CpmField) -> Result<()> {
        if self.spec.basis_len() != other.spec.basis_len() || self.spec.dim_p != other.spec.dim_p {
            return Err(CpmError::Precondition("fields have different bases".into()));
        }
        Ok(())
    }

    /// `sqrt(sum c^2 / sd^2)` with the base-prior standard deviations.
    pub fn rkhs_norm(&self) -> f64 {
        let sds = self.spec.prior_sds();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (c / sds[i % sds.len()]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `sum (1 + |j|^2)^beta c^2`, a Sobolev-type regularity sum.
    pub fn sobolev_sum(&self, beta: f64) -> f64 {
        let bl = self.spec.basis_len();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (1.0 + self.spec.index_norm_sq(i % bl) as f64).powf(beta) * c * c)
            .sum()
    }

    /// Keeps only coefficients whose multi-index satisfies `|j|_inf <= max_freq`.
    pub fn truncated(&self, max_freq: usize) -> Self {
        let bl = self.spec.basis_len();
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            if self.spec.multi_index(i % bl).iter().any(|k| *k > max_freq) {
                *c = 0.0;
            }
        }
        out
    }

    /// The lowest-frequency quarter of the basis (by `|j|^2`), shared by all
    /// components, and the remainder.
    pub fn split_low_high(&self) -> (CpmField, CpmField) {
        let bl = self.spec.basis_len();
        let keep = bl.div_ceil(4);
        let mut low_mask = vec![false; bl];
        for b in self.spec.frequency_order().into_iter().take(keep) {
            low_mask[b] = true;
        }
        let mut low = CpmField::zeros(&self.spec);
        let mut high = CpmField::zeros(&self.spec);
        for (i, c) in self.coeffs.iter().enumerate() {
            if low_mask[i % bl] {
                low.coeffs[i] = *c;
            } else {
                high.coeffs[i] = *c;
            }
        }
        (low, high)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FieldFile {
            format: FIELD_FORMAT.into(),
            version: FIELD_VERSION,
            alpha: self.spec.alpha,
            cutoff: self.spec.cutoff,
            dim_x: self.spec.dim_x(),
            dim_p: self.spec.dim_p,
            domain: self.spec.domain.clone(),
            coeffs: self.coeffs.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FieldFile = serde_json::from_str(text)?;
        if file.format != FIELD_FORMAT || file.version != FIELD_VERSION {
            return Err(CpmError::Serialization(format!(
                "unsupported field file {} v{}",
                file.format, file.version
            )));
        }
        if file.dim_x != file.domain.dim() {
            return Err(CpmError::Serialization(
                "field header dimension mismatch".into(),
            ));
        }
        let spec = SeriesPriorSpec::new(file.alpha, file.cutoff, file.dim_p, file.domain)?;
        Self::from_coeffs(&spec, file.coeffs)
    }
}

/// Draws `sum_j sd_j Z_j phi_j` by consuming `rng` sequentially.
pub fn sample_base_prior_with<R: Rng + ?Sized>(
    spec: &SeriesPriorSpec,
    sds: &[f64],
    rng: &mut R,
    out: &mut [f64],
) {
    let bl = spec.basis_len();
    for (i, c) in out.iter_mut().enumerate() {
        *c = sds[i % bl] * standard_normal(rng);
    }
}

/// Base-prior draw in which coefficient `(d, b)` comes from its own keyed
/// substream, so any subset of coefficients can be reproduced in isolation.
pub fn sample_base_prior(spec: &SeriesPriorSpec, seed: u64) -> CpmField {
    let bl = spec.basis_len();
    let sds = spec.prior_sds();
    let coeffs = (0..spec.coeff_len())
        .map(|i| {
            let (d, b) = (i / bl, i % bl);
            sds[b] * standard_normal(&mut substream(seed, &[d as u64, b as u64]))
        })
        .collect();
    CpmField {
        spec: spec.clone(),
        coeffs,
    }
}

/// `N^{-dx/(4 alpha + 2 dx)}`.
pub fn rescale_factor(alpha: f64, dim_x: usize, n: usize) -> f64 {
    let dx = dim_x as f64;
    (n as f64).powf(-dx / (4.0 * alpha + 2.0 * dx))
}

pub fn rescale_for_n(field: &CpmField, n: usize) -> Result<CpmField> {
    if n == 0 {
        return Err(CpmError::Precondition(
            "sample size must be at least 1".into(),
        ));
    }
    Ok(field.scaled(rescale_factor(field.spec.alpha, field.spec.dim_x(), n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub alpha: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub dim_x: usize,
    /// `dx < 2 alpha beta / (3 alpha + 2 beta)`.
    pub bvm_feasible: bool,
}

impl RateTable {
    /// `N^{-alpha/(2 alpha + dx)}`.
    pub fn delta_n(&self, n: usize) -> f64 {
        (n as f64).powf(-self.alpha / (2.0 * self.alpha + self.dim_x as f64))
    }

    /// `delta_N^{(beta - beta')/beta}`.
    pub fn delta_bar_n(&self, n: usize) -> f64 {
        self.delta_n(n)
            .powf((self.beta - self.beta_prime) / self.beta)
    }

    pub fn rescale_n(&self, n: usize) -> f64 {
        rescale_factor(self.alpha, self.dim_x, n)
    }
}

pub fn rates(alpha: f64, beta: f64, beta_prime: f64, dim_x: usize) -> Result<RateTable> {
    if !(alpha > 0.0) || dim_x == 0 {
        return Err(CpmError::Domain(format!(
            "invalid smoothness {alpha} or dimension {dim_x}"
        )));
    }
    let half = dim_x as f64 / 2.0;
    if !(beta_prime > half && beta_prime < beta) {
        return Err(CpmError::Domain(format!(
            "beta' = {beta_prime} must lie in ({half}, {beta})"
        )));
    }
    let bvm_feasible = (dim_x as f64) < 2.0 * alpha * beta / (3.0 * alpha + 2.0 * beta);
    Ok(RateTable {
        alpha,
        beta,
        beta_prime,
        dim_x,
        bvm_feasible,
    })
}

/// Parameters of the regularisation sets to test membership against.
#[derive(Debug, Clone, Copy)]
pub struct MembershipQuery<'a> {
    pub m: f64,
    pub n: usize,
    pub rates: &'a RateTable,
    pub truth: Option<&'a CpmField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    /// Membership in `Theta_N` witnessed by the low/high frequency split.
    pub theta_n_witnessed: bool,
    /// Membership in `Theta_{N,M,inf}`, when a truth was supplied.
    pub theta_n_m_inf: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldNorms {
    pub l2_empirical: f64,
    pub sup_grid: f64,
    pub rkhs: f64,
    pub membership: Option<Membership>,
}

fn empirical_l2(field: &CpmField, basis: &BasisMatrix) -> f64 {
    if basis.is_empty() {
        return 0.0;
    }
    let v = field.eval_at(basis);
    (v.iter().map(|x| x * x).sum::<f64>() / basis.len() as f64).sqrt()
}

fn grid_sup(field: &CpmField, basis: &BasisMatrix) -> f64 {
    let v = field.eval_at(basis);
    v.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Norms of a field: empirical L2 over `xs`, pointwise-Euclidean sup over
/// `grid`, RKHS norm, and optional regularisation-set membership.
pub fn field_norms(
    field: &CpmField,
    xs: &BasisMatrix,
    grid: &BasisMatrix,
    query: Option<&MembershipQuery>,
) -> FieldNorms {
    let l2_empirical = empirical_l2(field, xs);
    let sup_grid = grid_sup(field, grid);
    let membership = query.map(|q| {
        let (low, high) = field.split_low_high();
        let theta_n_witnessed = empirical_l2(&high, xs) <= q.m * q.rates.delta_n(q.n)
            && low.rkhs_norm() <= q.m
            && sup_grid <= q.m;
        let theta_n_m_inf = q.truth.map(|t| {
            let diff = field.sub(t).expect("compatible truth");
            sup_grid <= q.m && grid_sup(&diff, grid) <= q.m * q.rates.delta_bar_n(q.n)
        });
        Membership {
            theta_n_witnessed,
            theta_n_m_inf,
        }
    });
    FieldNorms {
        l2_empirical,
        sup_grid,
        rkhs: field.rkhs_norm(),
        membership,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(cutoff: usize) -> SeriesPriorSpec {
        SeriesPriorSpec::new(
            8.0,
            cutoff,
            4,
            CovariateBox::new(vec![0.5, 1.0], vec![2.0, 80.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn basis_layout_and_multi_index() {
        let s = spec(16);
        assert_eq!(s.basis_len(), 289);
        assert_eq!(s.multi_index(0), vec![0, 0]);
        assert_eq!(s.multi_index(17), vec![1, 0]);
        assert_eq!(s.multi_index(3), vec![0, 3]);
        assert_eq!(s.prior_sd(0), 1.0);
        assert_relative_eq!(s.prior_sd(1), 2f64.powf(-4.5), epsilon = 1e-15);
    }

    #[test]
    fn basis_values_match_direct_product() {
        let s = spec(3);
        let x = [1.1, 33.0];
        let mut out = vec![0.0; s.basis_len()];
        s.eval_basis(&x, &mut out);
        let (u1, u2) = ((1.1 - 0.5) / 1.5, 32.0 / 79.0);
        let n = |k: usize| if k == 0 { 1.0 } else { SQRT_2 };
        for b in 0..s.basis_len() {
            let j = s.multi_index(b);
            let direct =
                n(j[0]) * (PI * j[0] as f64 * u1).cos() * n(j[1]) * (PI * j[1] as f64 * u2).cos();
            assert_relative_eq!(out[b], direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn basis_is_orthonormal_on_grid() {
        // The midpoint rule integrates cos(pi k u) cos(pi l u) exactly for k + l < 2n.
        let s = spec(4);
        let g = BasisMatrix::new(&s, &s.domain.grid(64));
        let gram = g.matrix().transpose() * g.matrix() / g.len() as f64;
        assert!((gram - DMatrix::identity(25, 25)).abs().max() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = spec(16);
        assert_eq!(sample_base_prior(&s, 5), sample_base_prior(&s, 5));
        assert_ne!(sample_base_prior(&s, 5), sample_base_prior(&s, 6));
    }

    #[test]
    fn sampled_sds_match_prior() {
        let s = spec(4);
        let sds = s.prior_sds();
        let draws: Vec<CpmField> = (0..10_000)
            .map(|k| sample_base_prior(&s, 1000 + k))
            .collect();
        for b in [0, 1, 2, 5, 6, 7, 10, 12, 20, 24] {
            let var = draws.iter().map(|f| f.coeff(1, b).powi(2)).sum::<f64>() / draws.len() as f64;
            assert!((var.sqrt() / sds[b] - 1.0).abs() < 0.05, "b = {b}");
        }
    }

    #[test]
    fn rescaling() {
        assert_relative_eq!(
            rescale_factor(8.0, 2, 100),
            100f64.powf(-1.0 / 18.0),
            epsilon = 1e-15
        );
        assert!((rescale_factor(8.0, 2, 100) - 0.774264).abs() < 1e-6);
        let f = sample_base_prior(&spec(8), 1);
        assert_eq!(rescale_for_n(&f, 1).unwrap(), f);
        let g = rescale_for_n(&f, 100).unwrap();
        assert_relative_eq!(
            g.rkhs_norm(),
            f.rkhs_norm() * rescale_factor(8.0, 2, 100),
            max_relative = 1e-14
        );
    }

    #[test]
    fn rate_table() {
        let r = rates(8.0, 6.0, 2.0, 2).unwrap();
        assert_relative_eq!(r.delta_n(100), 100f64.powf(-4.0 / 9.0), epsilon = 1e-15);
        assert!((r.delta_n(100) - 0.129155).abs() < 1e-6);
        assert!(r.bvm_feasible);
        assert!(rates(8.0, 6.0, 1.0, 2).is_err());
        assert!(rates(8.0, 6.0, 6.0, 2).is_err());
        let near = rates(8.0, 6.0, 6.0 - 1e-12, 2).unwrap();
        assert!((near.delta_bar_n(10_000) - 1.0).abs() < 1e-9);
        for n in 1..200 {
            assert!(r.delta_n(n + 1) < r.delta_n(n));
            assert!(r.rescale_n(n + 1) < r.rescale_n(n));
        }
    }

    #[test]
    fn zero_field_norms_and_membership() {
        let s = spec(8);
        let xs = BasisMatrix::new(&s, &s.domain.grid(8));
        let grid = BasisMatrix::new(&s, &s.domain.grid(16));
        let r = rates(8.0, 6.0, 2.0, 2).unwrap();
        let z = CpmField::zeros(&s);
        let q = MembershipQuery {
            m: 1e-3,
            n: 100,
            rates: &r,
            truth: Some(&z),
        };
        let n = field_norms(&z, &xs, &grid, Some(&q));
        assert_eq!((n.l2_empirical, n.sup_grid, n.rkhs), (0.0, 0.0, 0.0));
        let m = n.membership.unwrap();
        assert!(m.theta_n_witnessed && m.theta_n_m_inf == Some(true));
    }

    #[test]
    fn single_basis_function_l2_norm() {
        let s = spec(8);
        let mut f = CpmField::zeros(&s);
        f.coeffs_mut()[2 * s.basis_len() + 19] = -0.7;
        let grid = BasisMatrix::new(&s, &s.domain.grid(64));
        let n = field_norms(&f, &grid, &grid, None);
        assert_relative_eq!(n.l2_empirical, 0.7, max_relative = 1e-12);
        assert_relative_eq!(n.rkhs, 0.7 / s.prior_sd(19), max_relative = 1e-12);
    }

    #[test]
    fn constant_field_evaluates_everywhere() {
        let s = spec(4);
        let f = CpmField::constant(&s, &[0.1, -0.2, 0.3, 0.0]).unwrap();
        let v = f.eval(&[1.7, 12.0]);
        for (a, b) in v.iter().zip([0.1, -0.2, 0.3, 0.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn low_high_split_partitions_coefficients() {
        let s = spec(16);
        let f = sample_base_prior(&s, 3);
        let (low, high) = f.split_low_high();
        assert_eq!(low.add(&high).unwrap(), f);
        let kept = low.coeffs()[..s.basis_len()]
            .iter()
            .filter(|c| **c != 0.0)
            .count();
        assert_eq!(kept, 73);
        assert_ne!(low.coeff(0, 0), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let f = sample_base_prior(&spec(4), 9);
        let back = CpmField::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        assert!(CpmField::from_json(&f.to_json().unwrap().replace("cpm-field", "other")).is_err());
    }
}
