//! Independent reference computations used to cross-check the closed forms:
//! a fixed-step RK4 integrator and central finite differences.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Integrates `ds/dt = A s` with classical RK4 from `s0` and records the
/// state at each requested time (sorted, nonnegative). Each output time is
/// hit exactly by shortening the final step of its segment.
pub fn rk4_linear(
    a: &DMatrix<f64>,
    s0: &DVector<f64>,
    times: &[f64],
    step: f64,
) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(times.len());
    let mut s = s0.clone();
    let mut now = 0.0;
    let f = |x: &DVector<f64>| a * x;
    for &target in times {
        while now < target {
            let h = step.min(target - now);
            let k1 = f(&s);
            let k2 = f(&(&s + &k1 * (0.5 * h)));
            let k3 = f(&(&s + &k2 * (0.5 * h)));
            let k4 = f(&(&s + &k3 * h));
            s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            now = if target - now <= step {
                target
            } else {
                now + h
            };
        }
        out.push(s.clone());
    }
    out
}

/// Central-difference Jacobian of `f: R^n -> R^m`, shape `m x n`.
pub fn central_jacobian<F>(f: F, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    let mut probe = x.to_vec();
    for k in 0..n {
        probe[k] = x[k] + step;
        let plus = f(&probe)?;
        probe[k] = x[k] - step;
        let minus = f(&probe)?;
        probe[k] = x[k];
        columns.push((plus - minus) / (2.0 * step));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// `max |a - b| / max |b|`: error relative to the scale of the reference.
pub fn max_relative_error(approx: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = approx
        .iter()
        .zip(reference.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
