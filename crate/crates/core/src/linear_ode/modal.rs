use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CoefficientRepr, Diagonalization, OdeModel, ParamDomain};
use crate::error::{CpmError, Result};

/// User-specified diagonalisable model with fixed eigenvectors.
///
/// `A(p) = V diag(lambda(p)) V^{-1}` with affine rates
/// `lambda_i(p) = r_i + R_i . p` and initial condition `s0(p) = V w(p)`
/// with modal weights `w_i(p) = exp(g_i + G_i . p)`. Then
/// `s1(t, p) = sum_i V_{1i} w_i(p) exp(lambda_i(p) t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalModel {
    vectors: DMatrix<f64>,
    rate_offsets: Vec<f64>,
    rate_gradients: DMatrix<f64>,
    log_weight_offsets: Vec<f64>,
    log_weight_gradients: DMatrix<f64>,
}

impl ModalModel {
    pub fn new(
        vectors: DMatrix<f64>,
        rate_offsets: Vec<f64>,
        rate_gradients: DMatrix<f64>,
        log_weight_offsets: Vec<f64>,
        log_weight_gradients: DMatrix<f64>,
    ) -> Result<Self> {
        let n = vectors.nrows();
        if !vectors.is_square() || n == 0 {
            return Err(CpmError::Validation(
                "eigenvector matrix must be square and nonempty".into(),
            ));
        }
        let dp = rate_gradients.ncols();
        if rate_offsets.len() != n
            || log_weight_offsets.len() != n
            || rate_gradients.nrows() != n
            || log_weight_gradients.shape() != (n, dp)
            || dp == 0
        {
            return Err(CpmError::Validation(
                "inconsistent modal model dimensions".into(),
            ));
        }
        if vectors.clone().try_inverse().is_none() {
            return Err(CpmError::Validation(
                "eigenvector matrix is singular".into(),
            ));
        }
        if vectors.row(0).iter().any(|v| *v == 0.0) {
            return Err(CpmError::Validation(
                "every mode must be visible in the first component".into(),
            ));
        }
        Ok(Self {
            vectors,
            rate_offsets,
            rate_gradients,
            log_weight_offsets,
            log_weight_gradients,
        })
    }

    fn rates(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.rate_offsets.len(),
            (0..self.rate_offsets.len()).map(|i| {
                self.rate_offsets[i]
                    + self
                        .rate_gradients
                        .row(i)
                        .iter()
                        .zip(p)
                        .map(|(g, x)| g * x)
                        .sum::<f64>()
            }),
        )
    }

    fn weights(&self, p: &[f64]) -> Result<DVector<f64>> {
        let w = DVector::from_iterator(
            self.log_weight_offsets.len(),
            (0..self.log_weight_offsets.len()).map(|i| {
                (self.log_weight_offsets[i]
                    + self
                        .log_weight_gradients
                        .row(i)
                        .iter()
                        .zip(p)
                        .map(|(g, x)| g * x)
                        .sum::<f64>())
                .exp()
            }),
        );
        if w.iter().any(|x| !x.is_finite()) {
            return Err(CpmError::NumericDomain("modal weight overflow".into()));
        }
        Ok(w)
    }
}

impl OdeModel for ModalModel {
    fn id(&self) -> String {
        format!(
            "modal-{}x{}",
            self.vectors.nrows(),
            self.rate_gradients.ncols()
        )
    }

    fn dim_state(&self) -> usize {
        self.vectors.nrows()
    }

    fn dim_param(&self) -> usize {
        self.rate_gradients.ncols()
    }

    fn matrix(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let inv = self
            .vectors
            .clone()
            .try_inverse()
            .expect("checked at construction");
        Ok(&self.vectors * DMatrix::from_diagonal(&self.rates(p)) * inv)
    }

    fn initial_state(&self, p: &[f64]) -> Result<DVector<f64>> {
        Ok(&self.vectors * self.weights(p)?)
    }

    fn diagonalization(&self, p: &[f64]) -> Option<Result<Diagonalization>> {
        Some(Ok(Diagonalization {
            vectors: self.vectors.clone(),
            rates: self.rates(p),
        }))
    }

    fn coefficients(&self, p: &[f64]) -> Option<Result<CoefficientRepr>> {
        Some(self.weights(p).and_then(|w| {
            let a: Vec<f64> = (0..w.len()).map(|i| self.vectors[(0, i)] * w[i]).collect();
            CoefficientRepr::new(&a, self.rates(p).as_slice())
        }))
    }

    fn coefficient_jacobian(&self, p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(self.coefficients(p)?.map(|c| {
            let n = c.terms();
            let dp = self.dim_param();
            let mut jac = DMatrix::zeros(2 * n, dp);
            for i in 0..n {
                for k in 0..dp {
                    jac[(i, k)] = c.prefactors()[i] * self.log_weight_gradients[(i, k)];
                    jac[(n + i, k)] = self.rate_gradients[(i, k)];
                }
            }
            jac
        }))
    }
}

type MatrixFn = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync;
type VectorFn = dyn Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync;

/// Closure-backed model with no eigenstructure; solutions go through the
/// matrix exponential. Mostly useful for cross-checks and non-diagonalisable
/// inputs.
#[derive(Clone)]
pub struct FnModel {
    id: String,
    dim_state: usize,
    dim_param: usize,
    domain: ParamDomain,
    matrix: Arc<MatrixFn>,
    initial: Arc<VectorFn>,
}

impl FnModel {
    pub fn new(
        id: &str,
        dim_state: usize,
        dim_param: usize,
        matrix: impl Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync + 'static,
        initial: impl Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.to_string(),
            dim_state,
            dim_param,
            domain: ParamDomain::Whole,
            matrix: Arc::new(matrix),
            initial: Arc::new(initial),
        }
    }

    pub fn with_domain(mut self, domain: ParamDomain) -> Self {
        self.domain = domain;
        self
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

impl OdeModel for FnModel {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dim_state(&self) -> usize {
        self.dim_state
    }

    fn dim_param(&self) -> usize {
        self.dim_param
    }

    fn param_domain(&self) -> ParamDomain {
        self.domain.clone()
    }

    fn matrix(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        (self.matrix)(p)
    }

    fn initial_state(&self, p: &[f64]) -> Result<DVector<f64>> {
        (self.initial)(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_ode::{expm, solve_state};

    #[test]
    fn modal_state_matches_matrix_exponential() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, -0.1]);
        let g = DMatrix::from_row_slice(2, 2, &[0.1, 0.3, -0.2, 0.0]);
        let m = ModalModel::new(v, vec![-0.5, -1.5], r, vec![0.0, 0.4], g).unwrap();
        let p = [0.7, -0.4];
        let t = 2.3;
        let s = solve_state(&m, &p, t).unwrap();
        let direct = expm(&(m.matrix(&p).unwrap() * t)).unwrap() * m.initial_state(&p).unwrap();
        assert!((s - direct).norm() < 1e-12);
        let c = m.coefficients(&p).unwrap().unwrap();
        assert!((c.eval(0.0) - m.initial_state(&p).unwrap()[0]).abs() < 1e-14);
    }

    #[test]
    fn rejects_invisible_mode() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let z = DMatrix::zeros(2, 1);
        assert!(ModalModel::new(v, vec![-1.0, -2.0], z.clone(), vec![0.0, 0.0], z).is_err());
    }
}
