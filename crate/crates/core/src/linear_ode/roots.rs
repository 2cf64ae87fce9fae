//! Sign-change root counting for exponential-affine sums
//! `t -> sum_k exp(beta_k t) (xi_k + gamma_k t)`.
//!
//! Such a sum with `n` distinct rates has at most `2n - 1` real roots. The
//! counter below scans a uniform grid and only detects sign changes, so
//! roots of even multiplicity are missed; it never overcounts.

use crate::error::{CpmError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpAffineTerm {
    pub rate: f64,
    pub offset: f64,
    pub slope: f64,
}

impl ExpAffineTerm {
    pub fn new(rate: f64, offset: f64, slope: f64) -> Self {
        Self {
            rate,
            offset,
            slope,
        }
    }
}

pub const DEFAULT_WINDOW: (f64, f64) = (-50.0, 50.0);
pub const DEFAULT_RESOLUTION: f64 = 1e-3;
const BISECTION_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RootCount {
    pub count: usize,
    pub roots: Vec<f64>,
}

pub fn eval_exp_affine(terms: &[ExpAffineTerm], t: f64) -> f64 {
    terms
        .iter()
        .map(|k| (k.rate * t).exp() * (k.offset + k.slope * t))
        .sum()
}

fn validate(terms: &[ExpAffineTerm], window: (f64, f64), resolution: f64) -> Result<()> {
    if terms.is_empty() {
        return Err(CpmError::Precondition("no terms".into()));
    }
    if terms
        .iter()
        .any(|k| !(k.rate.is_finite() && k.offset.is_finite() && k.slope.is_finite()))
    {
        return Err(CpmError::Precondition("non-finite term".into()));
    }
    for (i, a) in terms.iter().enumerate() {
        if terms[i + 1..].iter().any(|b| b.rate == a.rate) {
            return Err(CpmError::Precondition(format!("duplicate rate {}", a.rate)));
        }
    }
    if terms.iter().all(|k| k.offset == 0.0 && k.slope == 0.0) {
        return Err(CpmError::Precondition(
            "all affine coefficients are zero".into(),
        ));
    }
    if !(window.0.is_finite() && window.1.is_finite() && window.0 < window.1) {
        return Err(CpmError::Precondition(format!("invalid window {window:?}")));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(CpmError::Precondition(format!(
            "invalid resolution {resolution}"
        )));
    }
    Ok(())
}

fn bisect(terms: &[ExpAffineTerm], mut lo: f64, mut hi: f64, sign_lo: f64) -> f64 {
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = eval_exp_affine(terms, mid);
        if v == 0.0 {
            return mid;
        }
        if v.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const BLOCK: usize = 256;

/// Counts sign changes on the uniform grid `window.0 + i * resolution` and
/// refines each bracket by bisection.
///
/// The grid is evaluated in blocks: each term costs one `exp` per block
/// start, multiplied by a per-term table of `exp(rate * resolution * j)`.
pub fn count_roots_exp_affine(
    terms: &[ExpAffineTerm],
    window: (f64, f64),
    resolution: f64,
) -> Result<RootCount> {
    validate(terms, window, resolution)?;
    let steps = ((window.1 - window.0) / resolution).ceil() as usize;
    let n = terms.len();
    let mut powers = vec![0.0; n * BLOCK];
    for (k, term) in terms.iter().enumerate() {
        for j in 0..BLOCK {
            powers[k * BLOCK + j] = (term.rate * resolution * j as f64).exp();
        }
    }

    let mut roots = Vec::new();
    let mut last_sign = 0.0f64;
    let mut last_t = window.0;
    let mut ts = [0.0; BLOCK];
    let mut vals = [0.0; BLOCK];
    let mut base = 0usize;
    while base <= steps {
        let len = BLOCK.min(steps + 1 - base);
        for (j, t) in ts[..len].iter_mut().enumerate() {
            *t = (window.0 + (base + j) as f64 * resolution).min(window.1);
        }
        vals[..len].fill(0.0);
        let t0 = window.0 + base as f64 * resolution;
        for (k, term) in terms.iter().enumerate() {
            let e0 = (term.rate * t0).exp();
            let pw = &powers[k * BLOCK..k * BLOCK + len];
            let (a, b) = (e0 * term.offset, e0 * term.slope);
            for ((v, &t), &w) in vals[..len].iter_mut().zip(&ts[..len]).zip(pw) {
                *v += w * (a + b * t);
            }
        }
        // Fast path: a block that keeps the previous sign throughout.
        if last_sign != 0.0
            && vals[..len]
                .iter()
                .all(|&v| v * last_sign > 0.0 && v.is_finite())
        {
            last_t = ts[len - 1];
            base += len;
            continue;
        }
        for j in 0..len {
            let v = vals[j];
            if v != 0.0 && v.is_finite() {
                let s = v.signum();
                if last_sign != 0.0 && s != last_sign {
                    roots.push(bisect(terms, last_t, ts[j], last_sign));
                }
                last_sign = s;
                last_t = ts[j];
            }
        }
        base += len;
    }
    Ok(RootCount {
        count: roots.len(),
        roots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(terms: &[ExpAffineTerm]) -> RootCount {
        count_roots_exp_affine(terms, DEFAULT_WINDOW, DEFAULT_RESOLUTION).unwrap()
    }

    #[test]
    fn constant_has_no_roots() {
        assert_eq!(count(&[ExpAffineTerm::new(0.0, 1.0, 0.0)]).count, 0);
    }

    #[test]
    fn single_affine_term_root() {
        let r = count(&[ExpAffineTerm::new(1.0, -2.0, 1.0)]);
        assert_eq!(r.count, 1);
        assert!((r.roots[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn one_minus_exp_root_at_origin() {
        let r = count(&[
            ExpAffineTerm::new(0.0, 1.0, 0.0),
            ExpAffineTerm::new(1.0, -1.0, 0.0),
        ]);
        assert_eq!(r.count, 1);
        assert!(r.roots[0].abs() < 1e-9);
    }

    #[test]
    fn tangential_root_is_not_counted() {
        // e^t - e t touches zero at t = 1 without changing sign.
        let e = std::f64::consts::E;
        let r = count(&[
            ExpAffineTerm::new(1.0, 1.0, 0.0),
            ExpAffineTerm::new(0.0, 0.0, -e),
        ]);
        assert_eq!(r.count, 0);
    }

    #[test]
    fn preconditions() {
        assert!(count_roots_exp_affine(
            &[
                ExpAffineTerm::new(1.0, 1.0, 0.0),
                ExpAffineTerm::new(1.0, 2.0, 0.0)
            ],
            DEFAULT_WINDOW,
            DEFAULT_RESOLUTION
        )
        .is_err());
        assert!(count_roots_exp_affine(
            &[ExpAffineTerm::new(1.0, 0.0, 0.0)],
            DEFAULT_WINDOW,
            DEFAULT_RESOLUTION
        )
        .is_err());
        assert!(
            count_roots_exp_affine(&[ExpAffineTerm::new(1.0, 1.0, 0.0)], DEFAULT_WINDOW, 0.0)
                .is_err()
        );
    }

    #[test]
    fn refined_roots_are_zeros() {
        let terms = [
            ExpAffineTerm::new(0.0, -0.5, 1.0),
            ExpAffineTerm::new(-1.0, 2.0, -4.0),
        ];
        let r = count(&terms);
        assert!(r.count >= 1 && r.count <= 3);
        for root in r.roots {
            assert!(
                eval_exp_affine(&terms, root).abs() < 1e-8,
                "{root} {}",
                eval_exp_affine(&terms, root)
            );
        }
    }
}
