//! Covariate domain, point storage and sampling laws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CpmError, Result};

/// Axis-aligned box `prod_i [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct CovariateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for CovariateBox {
    type Error = CpmError;
    fn try_from(raw: RawBox) -> Result<Self> {
        CovariateBox::new(raw.lower, raw.upper)
    }
}

impl From<CovariateBox> for RawBox {
    fn from(b: CovariateBox) -> Self {
        RawBox {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl CovariateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(CpmError::Validation(
                "covariate box bounds must be nonempty and of equal length".into(),
            ));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CpmError::Validation(format!(
                    "invalid covariate interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, lo), hi)| v >= lo && v <= hi)
    }

    /// Affine map onto `[0, 1]^d`.
    #[inline]
    pub fn to_unit(&self, i: usize, v: f64) -> f64 {
        (v - self.lower[i]) / (self.upper[i] - self.lower[i])
    }

    #[inline]
    pub fn from_unit(&self, i: usize, u: f64) -> f64 {
        self.lower[i] + u * (self.upper[i] - self.lower[i])
    }

    /// Cell-centre grid with `per_axis` points along every axis, first axis
    /// varying slowest.
    pub fn grid(&self, per_axis: usize) -> CovariatePoints {
        let d = self.dim();
        let total = per_axis.pow(d as u32);
        let mut data = Vec::with_capacity(total * d);
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0; d];
            for i in (0..d).rev() {
                idx[i] = rem % per_axis;
                rem /= per_axis;
            }
            for (i, k) in idx.iter().enumerate() {
                data.push(self.from_unit(i, (*k as f64 + 0.5) / per_axis as f64));
            }
        }
        CovariatePoints { dim: d, data }
    }
}

/// Flat storage of `len` covariate points of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatePoints {
    dim: usize,
    data: Vec<f64>,
}

impl CovariatePoints {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(CpmError::Validation(format!(
                "{} values do not form points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CpmError::Validation(
                "covariate rows have unequal lengths".into(),
            ));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Law of the covariates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSampler {
    /// Uniform on the problem's covariate box.
    #[default]
    UniformBox,
    /// Finitely many atoms with positive weights (normalised on use).
    DiscreteMixture {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

/// Quadrature points for integrals against the covariate law.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub points: CovariatePoints,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn integrate(&self, values: impl Iterator<Item = f64>) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Grid resolution per axis used for integrals against a uniform law.
pub const QUADRATURE_PER_AXIS: usize = 64;

impl CovariateSampler {
    pub fn validate(&self, domain: &CovariateBox) -> Result<()> {
        match self {
            CovariateSampler::UniformBox => Ok(()),
            CovariateSampler::DiscreteMixture { atoms, weights } => {
                if atoms.is_empty() || atoms.len() != weights.len() {
                    return Err(CpmError::Validation(
                        "mixture needs one positive weight per atom".into(),
                    ));
                }
                if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(CpmError::Validation(
                        "mixture weights must be positive".into(),
                    ));
                }
                if let Some(a) = atoms.iter().find(|a| !domain.contains(a)) {
                    return Err(CpmError::Validation(format!(
                        "mixture atom {a:?} lies outside the covariate box"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, domain: &CovariateBox, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            CovariateSampler::UniformBox => {
                for i in 0..domain.dim() {
                    out.push(domain.from_unit(i, rng.random::<f64>()));
                }
            }
            CovariateSampler::DiscreteMixture { atoms, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = atoms.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                out.extend_from_slice(&atoms[pick]);
            }
        }
    }

    pub fn sample_points<R: Rng + ?Sized>(
        &self,
        domain: &CovariateBox,
        n: usize,
        rng: &mut R,
    ) -> CovariatePoints {
        let mut data = Vec::with_capacity(n * domain.dim());
        for _ in 0..n {
            self.sample(domain, rng, &mut data);
        }
        CovariatePoints {
            dim: domain.dim(),
            data,
        }
    }

    /// Midpoint grid for the uniform law, the atoms themselves for a mixture.
    pub fn quadrature(&self, domain: &CovariateBox) -> Quadrature {
        match self {
            CovariateSampler::UniformBox => {
                let per_axis = if domain.dim() <= 2 {
                    QUADRATURE_PER_AXIS
                } else {
                    16
                };
                let points = domain.grid(per_axis);
                let n = points.len();
                Quadrature {
                    points,
                    weights: vec![1.0 / n as f64; n],
                }
            }
            CovariateSampler::DiscreteMixture { atoms, weights } => {
                let total: f64 = weights.iter().sum();
                Quadrature {
                    points: CovariatePoints {
                        dim: domain.dim(),
                        data: atoms.concat(),
                    },
                    weights: weights.iter().map(|w| w / total).collect(),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn box_validation() {
        assert!(CovariateBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(CovariateBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(CovariateBox::new(vec![0.5, 1.0], vec![2.0, 80.0]).is_ok());
    }

    #[test]
    fn grid_is_cell_centred() {
        let b = CovariateBox::new(vec![0.0, 10.0], vec![2.0, 20.0]).unwrap();
        let g = b.grid(2);
        assert_eq!(g.len(), 4);
        assert_eq!(g.point(0), &[0.5, 12.5]);
        assert_eq!(g.point(1), &[0.5, 17.5]);
        assert_eq!(g.point(3), &[1.5, 17.5]);
    }

    #[test]
    fn uniform_samples_stay_in_box() {
        let b = CovariateBox::new(vec![0.5, 1.0], vec![2.0, 80.0]).unwrap();
        let pts = CovariateSampler::UniformBox.sample_points(&b, 1000, &mut substream(3, &[]));
        assert!(pts.iter().all(|x| b.contains(x)));
    }

    #[test]
    fn mixture_frequencies() {
        let b = CovariateBox::unit(1);
        let s = CovariateSampler::DiscreteMixture {
            atoms: vec![vec![0.1], vec![0.9]],
            weights: vec![1.0, 3.0],
        };
        s.validate(&b).unwrap();
        let pts = s.sample_points(&b, 20_000, &mut substream(4, &[]));
        let frac = pts.iter().filter(|x| x[0] > 0.5).count() as f64 / 20_000.0;
        assert!((frac - 0.75).abs() < 0.015);
        let q = s.quadrature(&b);
        assert_eq!(q.weights, vec![0.25, 0.75]);
    }

    #[test]
    fn mixture_atoms_must_lie_in_box() {
        let s = CovariateSampler::DiscreteMixture {
            atoms: vec![vec![2.0]],
            weights: vec![1.0],
        };
        assert!(s.validate(&CovariateBox::unit(1)).is_err());
    }
}
