//! Posterior-mean contraction over a grid of sample sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::generate_dataset;
use super::pcn::{run_pcn, summarize, ChainConfig, Tracking};
use crate::covariates::{CovariateBox, CovariateSampler};
use crate::error::{CpmError, Result};
use crate::forward::ForwardContext;
use crate::prior::{
    field_norms, sample_base_prior, BasisMatrix, CpmField, MembershipQuery, RateTable,
    SeriesPriorSpec, SUP_GRID_PER_AXIS,
};
use crate::rng::stream_key;
use crate::stats::{log_log_slope, median};

/// Truth for simulation studies: a base-prior draw truncated to
/// `|j|_inf <= max_freq` and scaled down to RKHS norm at most `rkhs_bound`.
pub fn construct_truth(
    spec: &SeriesPriorSpec,
    seed: u64,
    max_freq: usize,
    rkhs_bound: f64,
) -> CpmField {
    let t = sample_base_prior(spec, seed).truncated(max_freq);
    let norm = t.rkhs_norm();
    if norm > rkhs_bound {
        t.scaled(rkhs_bound / norm)
    } else {
        t
    }
}

#[derive(Debug, Clone)]
pub struct ContractionProblem {
    pub ctx: ForwardContext,
    pub spec: SeriesPriorSpec,
    pub sampler: CovariateSampler,
    pub domain: CovariateBox,
    pub truth: CpmField,
    pub chain: ChainConfig,
    pub rates: RateTable,
    /// Radius `M` of the regularisation sets.
    pub membership_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub n: usize,
    pub rep: usize,
    pub l2_err: f64,
    pub sup_err: f64,
    pub delta_n: f64,
    pub delta_bar_n: f64,
    pub accepted_rate: f64,
    pub theta_n_witnessed: bool,
    /// `ok`, or the error that ended the cell.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionLevel {
    pub n: usize,
    pub median_l2: f64,
    pub median_sup: f64,
    /// Median over replications whose posterior mean is witnessed in `Theta_N`.
    pub median_l2_conditioned: Option<f64>,
    pub delta_n: f64,
    pub delta_bar_n: f64,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionTable {
    pub rows: Vec<ContractionRow>,
    pub levels: Vec<ContractionLevel>,
    /// Log-log slope of the median L2 error against `N`; `None` for a single level.
    pub slope: Option<f64>,
    pub slope_conditioned: Option<f64>,
    pub strictly_decreasing: bool,
}

fn run_cell(problem: &ContractionProblem, n: usize, rep: usize, seed: u64) -> ContractionRow {
    let delta_n = problem.rates.delta_n(n);
    let delta_bar_n = problem.rates.delta_bar_n(n);
    let failed = |e: CpmError| ContractionRow {
        n,
        rep,
        l2_err: f64::NAN,
        sup_err: f64::NAN,
        delta_n,
        delta_bar_n,
        accepted_rate: f64::NAN,
        theta_n_witnessed: false,
        status: e.to_string(),
    };
    let cell = || -> Result<ContractionRow> {
        let data_seed = stream_key(seed, &[n as u64, rep as u64, 0]);
        let data = generate_dataset(
            &problem.ctx,
            &problem.truth,
            &problem.sampler,
            &problem.domain,
            n,
            data_seed,
        )?;
        let config = ChainConfig {
            seed: stream_key(seed, &[n as u64, rep as u64, 1]),
            ..problem.chain.clone()
        };
        let chain = run_pcn(
            &problem.ctx,
            &data,
            &problem.spec,
            &config,
            &Tracking::default(),
        )?;
        let quadrature = problem.sampler.quadrature(&problem.domain);
        let grid = problem.domain.grid(SUP_GRID_PER_AXIS);
        let summary = summarize(
            &chain,
            &problem.spec,
            Some(&problem.truth),
            &quadrature,
            &grid,
        )?;
        let mean = chain.mean_field(&problem.spec)?;
        let query = MembershipQuery {
            m: problem.membership_radius,
            n,
            rates: &problem.rates,
            truth: None,
        };
        let norms = field_norms(
            &mean,
            &BasisMatrix::new(&problem.spec, &data.covariates),
            &BasisMatrix::new(&problem.spec, &grid),
            Some(&query),
        );
        Ok(ContractionRow {
            n,
            rep,
            l2_err: summary.l2_error.unwrap_or(f64::NAN),
            sup_err: summary.sup_error.unwrap_or(f64::NAN),
            delta_n,
            delta_bar_n,
            accepted_rate: chain.acceptance_rate,
            theta_n_witnessed: norms.membership.is_some_and(|m| m.theta_n_witnessed),
            status: "ok".into(),
        })
    };
    cell().unwrap_or_else(failed)
}

/// Runs every `(N, replication)` cell; cell failures are recorded, not fatal.
pub fn contraction_study(
    problem: &ContractionProblem,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<ContractionTable> {
    if n_grid.is_empty() || replications == 0 {
        return Err(CpmError::Precondition(
            "need a nonempty N grid and at least one replication".into(),
        ));
    }
    let cells: Vec<(usize, usize)> = n_grid
        .iter()
        .flat_map(|n| (0..replications).map(move |r| (*n, r)))
        .collect();
    let rows: Vec<ContractionRow> = cells
        .par_iter()
        .map(|(n, r)| run_cell(problem, *n, *r, seed))
        .collect();

    let levels: Vec<ContractionLevel> = n_grid
        .iter()
        .map(|&n| {
            let ok: Vec<&ContractionRow> = rows
                .iter()
                .filter(|r| r.n == n && r.status == "ok")
                .collect();
            let l2: Vec<f64> = ok.iter().map(|r| r.l2_err).collect();
            let sup: Vec<f64> = ok.iter().map(|r| r.sup_err).collect();
            let cond: Vec<f64> = ok
                .iter()
                .filter(|r| r.theta_n_witnessed)
                .map(|r| r.l2_err)
                .collect();
            ContractionLevel {
                n,
                median_l2: if l2.is_empty() { f64::NAN } else { median(&l2) },
                median_sup: if sup.is_empty() {
                    f64::NAN
                } else {
                    median(&sup)
                },
                median_l2_conditioned: (!cond.is_empty()).then(|| median(&cond)),
                delta_n: problem.rates.delta_n(n),
                delta_bar_n: problem.rates.delta_bar_n(n),
                completed: ok.len(),
            }
        })
        .collect();
    let ns: Vec<f64> = levels.iter().map(|l| l.n as f64).collect();
    let med: Vec<f64> = levels.iter().map(|l| l.median_l2).collect();
    let slope = if levels.len() < 2 {
        None
    } else {
        log_log_slope(&ns, &med)
    };
    let slope_conditioned =
        if levels.len() < 2 || levels.iter().any(|l| l.median_l2_conditioned.is_none()) {
            None
        } else {
            let c: Vec<f64> = levels
                .iter()
                .map(|l| l.median_l2_conditioned.unwrap())
                .collect();
            log_log_slope(&ns, &c)
        };
    let strictly_decreasing = levels.len() >= 2 && med.windows(2).all(|w| w[1] < w[0]);
    Ok(ContractionTable {
        rows,
        levels,
        slope,
        slope_conditioned,
        strictly_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateBox;

    #[test]
    fn truth_is_truncated_and_bounded() {
        let spec = SeriesPriorSpec::new(8.0, 16, 4, CovariateBox::unit(2)).unwrap();
        let t = construct_truth(&spec, 3, 4, 1.0);
        assert!(t.rkhs_norm() <= 1.0 + 1e-12);
        for d in 0..4 {
            for b in 0..spec.basis_len() {
                if spec.multi_index(b).iter().any(|k| *k > 4) {
                    assert_eq!(t.coeff(d, b), 0.0);
                }
            }
        }
    }
}
