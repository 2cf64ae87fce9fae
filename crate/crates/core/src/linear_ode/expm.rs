//! Matrix exponential by scaling and squaring with a degree-13 Padé approximant.

use nalgebra::DMatrix;

use crate::error::{CpmError, Result};

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Upper bound on the scaled 1-norm for which the [13/13] approximant is
/// accurate to double precision.
const THETA_13: f64 = 5.371_920_351_148_152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(CpmError::Precondition(
            "matrix exponential of a non-square matrix".into(),
        ));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(CpmError::NumericDomain("non-finite matrix entry".into()));
    }
    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| CpmError::NumericDomain("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(CpmError::NumericDomain(
            "matrix exponential overflow".into(),
        ));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0, 0.5]));
        let e = expm(&a).unwrap();
        for (i, l) in [-1.0f64, -2.0, 0.5].iter().enumerate() {
            assert!((e[(i, i)] - l.exp()).abs() < 1e-14);
        }
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn jordan_block_has_polynomial_term() {
        // exp([[l, 1], [0, l]] t) = e^{lt} [[1, t], [0, 1]]
        let (l, t) = (-0.7, 3.0);
        let a = DMatrix::from_row_slice(2, 2, &[l * t, t, 0.0, l * t]);
        let e = expm(&a).unwrap();
        let el = (l * t).exp();
        assert!((e[(0, 0)] - el).abs() < 1e-14);
        assert!((e[(0, 1)] - t * el).abs() < 1e-13);
        assert!(e[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn large_norm_uses_squaring() {
        // rotation generator: exp([[0, -w], [w, 0]]) = [[cos w, -sin w], [sin w, cos w]]
        let w = 40.0f64;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)] - w.cos()).abs() < 1e-10);
        assert!((e[(1, 0)] - w.sin()).abs() < 1e-10);
    }

    #[test]
    fn rejects_nan() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(expm(&a), Err(CpmError::NumericDomain(_))));
    }
}
