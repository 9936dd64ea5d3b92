//! Dense two-phase simplex for small equality-form LPs.
//!
//! Solves `max cᵀx  s.t.  A x = b, x ≥ 0`. Bland's rule is used for both the
//! entering and leaving variable, so degenerate vertices (common on the
//! design polytopes) cannot cause cycling.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-12;
const COST_TOL: f64 = 1e-11;
const PHASE1_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex pivot limit reached")]
    PivotLimit,
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Columns `0..cols`, followed by the right-hand side.
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `Σ cost_j x_j` over columns with `allowed(j)`.
    fn optimize(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> Result<(), LpError> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..self.cols).filter(|&j| allowed(j)).find(|&j| {
                let z: f64 = self
                    .basis
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| cost[b] * self.rows[i][j])
                    .sum();
                cost[j] - z > COST_TOL
            });
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-15
                                || ((ratio - lr).abs() <= 1e-15 && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(r, c);
        }
        Err(LpError::PivotLimit)
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let nvars = lp.objective.len();
    let m = lp.a_eq.len();
    if lp.b_eq.len() != m || lp.a_eq.iter().any(|r| r.len() != nvars) {
        return Err(LpError::Malformed("dimension mismatch".to_string()));
    }
    let cols = nvars + m;
    let mut rows = Vec::with_capacity(m);
    for (i, (a, &b)) in lp.a_eq.iter().zip(&lp.b_eq).enumerate() {
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; cols + 1];
        for (j, v) in a.iter().enumerate() {
            row[j] = sign * v;
        }
        row[nvars + i] = 1.0;
        row[cols] = sign * b;
        rows.push(row);
    }
    let mut tab = Tableau {
        rows,
        basis: (nvars..cols).collect(),
        cols,
    };

    // phase 1: drive the artificials to zero
    let mut phase1 = vec![0.0; cols];
    for c in phase1.iter_mut().skip(nvars) {
        *c = -1.0;
    }
    tab.optimize(&phase1, &|_| true)?;
    let infeasibility: f64 = (0..m)
        .filter(|&i| tab.basis[i] >= nvars)
        .map(|i| tab.rhs(i))
        .sum();
    if infeasibility > PHASE1_TOL {
        return Err(LpError::Infeasible);
    }

    // pivot remaining artificials out; rows where that is impossible are redundant
    let mut i = 0;
    while i < tab.rows.len() {
        if tab.basis[i] >= nvars {
            match (0..nvars).find(|&j| tab.rows[i][j].abs() > 1e-9) {
                Some(j) => tab.pivot(i, j),
                None => {
                    tab.rows.remove(i);
                    tab.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    let mut cost = vec![0.0; cols];
    cost[..nvars].copy_from_slice(&lp.objective);
    tab.optimize(&cost, &|j| j < nvars)?;

    let mut x = vec![0.0; nvars];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < nvars {
            x[b] = tab.rhs(i).max(0.0);
        }
    }
    let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, objective })
}
