//! Exhaustive grid search over the design polytope, followed by pairwise
//! coordinate refinement. Independent of the LP and Frank–Wolfe machinery,
//! so it serves as a cross-check on small problems.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::design::{contrast_information_from_weights, is_feasible_matrix, Design, ModelSpec};
use crate::error::{DesignError, Result};
use crate::linalg;

/// Largest grid the oracle will enumerate.
pub const MAX_GRID_POINTS: u128 = 20_000_000;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub design: Design,
    pub value: f64,
    /// Value at the best grid point, before refinement.
    pub grid_value: f64,
    pub grid_points: usize,
}

/// All ways to write `res` as an ordered sum of `parts` nonnegative integers.
fn compositions(res: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![res]];
    }
    let mut out = Vec::new();
    for first in 0..=res {
        for mut rest in compositions(res - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Maximizes `objective` over designs whose cohorts are split in multiples of
/// `1/(t·resolution)`, then refines with `refine_iters` rounds of pairwise
/// mass transfers within cohorts at halving step sizes. `objective` returns
/// `None` where it is undefined. Ties go to the earliest grid point.
pub fn brute_force_best(
    spec: ModelSpec,
    resolution: usize,
    refine_iters: usize,
    objective: &(dyn Fn(&DMatrix<f64>) -> Option<f64> + Sync),
) -> Result<OracleResult> {
    if spec.n() > 3 {
        return Err(DesignError::TooLarge(format!(
            "oracle supports n ≤ 3, got n = {}",
            spec.n()
        )));
    }
    if resolution == 0 {
        return Err(DesignError::InvalidParameter(
            "grid resolution must be positive".to_string(),
        ));
    }
    let t = spec.t();
    let count: u128 = (0..t)
        .map(|k| {
            let m = spec.allowed_count(k) as u128;
            binomial(resolution as u128 + m - 1, m - 1)
        })
        .product();
    if count > MAX_GRID_POINTS {
        return Err(DesignError::TooLarge(format!(
            "grid has {count} points, limit is {MAX_GRID_POINTS}"
        )));
    }
    let cohort_grids: Vec<Vec<Vec<usize>>> = (0..t)
        .map(|k| compositions(resolution, spec.allowed_count(k)))
        .collect();
    let unit = 1.0 / (t * resolution) as f64;
    let point = |mut idx: usize| -> DMatrix<f64> {
        let mut w = DMatrix::zeros(spec.n() + 1, t);
        for (k, grid) in cohort_grids.iter().enumerate() {
            let c = &grid[idx % grid.len()];
            idx /= grid.len();
            for (i, &units) in c.iter().enumerate() {
                w[(i, k)] = units as f64 * unit;
            }
        }
        w
    };

    let total = count as usize;
    let best = (0..total)
        .into_par_iter()
        .filter_map(|idx| objective(&point(idx)).map(|v| (idx, v)))
        .reduce_with(|a, b| {
            if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                b
            } else {
                a
            }
        })
        .ok_or(DesignError::InfeasibleDesign)?;

    let mut w = point(best.0);
    let mut value = best.1;
    let mut step = unit;
    for _ in 0..refine_iters {
        let mut improved = false;
        for k in 0..t {
            let m = spec.allowed_count(k);
            for a in 0..m {
                for b in 0..m {
                    if a == b || w[(a, k)] < step {
                        continue;
                    }
                    let mut cand = w.clone();
                    cand[(a, k)] -= step;
                    cand[(b, k)] += step;
                    if let Some(v) = objective(&cand) {
                        if v > value {
                            w = cand;
                            value = v;
                            improved = true;
                        }
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(OracleResult {
        design: Design::new(spec, w)?,
        value,
        grid_value: best.1,
        grid_points: total,
    })
}

/// λ_min of the contrast information, `None` on infeasible designs.
pub fn e_objective(w: &DMatrix<f64>) -> Option<f64> {
    let c = contrast_information_from_weights(w);
    is_feasible_matrix(&c).then(|| linalg::min_eigenvalue(&c))
}

pub fn brute_force_best_e(
    spec: ModelSpec,
    resolution: usize,
    refine_iters: usize,
) -> Result<OracleResult> {
    brute_force_best(spec, resolution, refine_iters, &e_objective)
}
