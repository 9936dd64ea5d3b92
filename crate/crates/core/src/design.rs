//! Dose-escalation designs and the matrices derived from them.
//!
//! A design is an `(n+1) × t` matrix of proportions `ξ(i,k)`: row `i` is the
//! treatment (0 = placebo, 1..=n = doses in increasing order) and column `k`
//! the cohort. Internally cohorts are 0-based, so column `k` holds cohort
//! `k + 1`; files and printed tables use the 1-based labels.
//!
//! The parameter vector is ordered `β = (τ_0..τ_n, μ, θ_1..θ_t)`, which fixes
//! the layout of the moment matrix and of the contrast coefficient vectors.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Constraint, DesignError, Result};
use crate::linalg;

/// Absolute tolerance used when validating design constraints.
pub const WEIGHT_TOL: f64 = 1e-9;
/// λ_min(C) must exceed this multiple of trace(C) for the design to be feasible.
pub const FEASIBILITY_TOL: f64 = 1e-10;

pub type Rational = Ratio<i128>;
/// Row-major exact weights, `(n+1)` rows of `t` entries.
pub type RationalMatrix = Vec<Vec<Rational>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// `t = n` cohorts.
    Standard,
    /// `t = n + 1`; the last cohort may use every treatment.
    Extended,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignKind::Standard => f.write_str("standard"),
            DesignKind::Extended => f.write_str("extended"),
        }
    }
}

impl std::str::FromStr for DesignKind {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(DesignKind::Standard),
            "extended" => Ok(DesignKind::Extended),
            other => Err(DesignError::Parse(format!("unknown design kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    n: usize,
    kind: DesignKind,
}

impl ModelSpec {
    pub fn new(n: usize, kind: DesignKind) -> Result<Self> {
        if n < 2 {
            return Err(DesignError::InvalidParameter(format!(
                "dose count must be at least 2, got {n}"
            )));
        }
        Ok(ModelSpec { n, kind })
    }

    pub fn standard(n: usize) -> Result<Self> {
        Self::new(n, DesignKind::Standard)
    }

    pub fn extended(n: usize) -> Result<Self> {
        Self::new(n, DesignKind::Extended)
    }

    /// Number of doses.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    /// Number of cohorts.
    pub fn t(&self) -> usize {
        match self.kind {
            DesignKind::Standard => self.n,
            DesignKind::Extended => self.n + 1,
        }
    }

    /// Length of `β = (τ, μ, θ)`.
    pub fn parameter_dim(&self) -> usize {
        self.n + self.t() + 2
    }

    /// Whether treatment `i` may be given in (0-based) cohort `k`.
    pub fn allowed(&self, i: usize, k: usize) -> bool {
        i <= self.n && k < self.t() && (k >= self.n || i <= k + 1)
    }

    /// Number of treatments allowed in (0-based) cohort `k`.
    pub fn allowed_count(&self, k: usize) -> usize {
        if k >= self.n {
            self.n + 1
        } else {
            k + 2
        }
    }

    /// Index of `τ_i` in β.
    pub fn tau_index(&self, i: usize) -> usize {
        i
    }

    /// Index of `μ` in β.
    pub fn mu_index(&self) -> usize {
        self.n + 1
    }

    /// Index of `θ_{k+1}` in β for 0-based cohort `k`.
    pub fn theta_index(&self, k: usize) -> usize {
        self.n + 2 + k
    }
}

/// A validated approximate design.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    spec: ModelSpec,
    weights: DMatrix<f64>,
    exact: Option<RationalMatrix>,
}

impl Design {
    /// Validates `weights` against nonnegativity, escalation, equal cohort
    /// sizes and unit total mass.
    pub fn new(spec: ModelSpec, weights: DMatrix<f64>) -> Result<Self> {
        validate(&spec, &weights)?;
        Ok(Design {
            spec,
            weights,
            exact: None,
        })
    }

    /// Builds a design from exact weights; the float view is derived from them.
    pub fn from_rationals(spec: ModelSpec, exact: RationalMatrix) -> Result<Self> {
        let rows = exact.len();
        let cols = exact.first().map_or(0, Vec::len);
        if exact.iter().any(|r| r.len() != cols) {
            return Err(DesignError::InvalidParameter(
                "ragged weight matrix".to_string(),
            ));
        }
        let weights = DMatrix::from_fn(rows, cols, |i, k| ratio_to_f64(&exact[i][k]));
        Design::from_parts(spec, weights, exact)
    }

    /// Exact weights with caller-chosen doubles, e.g. those parsed from the
    /// same decimal text.
    pub(crate) fn from_parts(
        spec: ModelSpec,
        weights: DMatrix<f64>,
        exact: RationalMatrix,
    ) -> Result<Self> {
        validate(&spec, &weights)?;
        validate_exact(&spec, &exact)?;
        Ok(Design {
            spec,
            weights,
            exact: Some(exact),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn t(&self) -> usize {
        self.spec.t()
    }

    pub fn kind(&self) -> DesignKind {
        self.spec.kind
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn exact_weights(&self) -> Option<&RationalMatrix> {
        self.exact.as_ref()
    }

    /// `ξ(i, k)` with 0-based cohort `k`.
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        self.weights[(i, k)]
    }

    /// Rows 1..=n of the weight matrix.
    pub fn dose_block(&self) -> DMatrix<f64> {
        self.weights.rows(1, self.n()).into_owned()
    }

    /// Largest absolute entrywise difference to another design's weights.
    pub fn max_weight_diff(&self, other: &Design) -> f64 {
        if self.weights.shape() != other.weights.shape() {
            return f64::INFINITY;
        }
        linalg::max_abs_diff(&self.weights, &other.weights)
    }
}

/// Validated construction from a weight matrix.
pub fn make_design(spec: ModelSpec, weights: DMatrix<f64>) -> Result<Design> {
    Design::new(spec, weights)
}

pub(crate) fn ratio_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn validate(spec: &ModelSpec, w: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = w.shape();
    if rows != spec.n + 1 || cols != spec.t() {
        return Err(DesignError::InvalidParameter(format!(
            "weights must be {}x{}, got {rows}x{cols}",
            spec.n + 1,
            spec.t()
        )));
    }
    for k in 0..cols {
        for i in 0..rows {
            let v = w[(i, k)];
            if !v.is_finite() || v < -WEIGHT_TOL {
                return Err(DesignError::ConstraintViolation {
                    constraint: Constraint::Nonnegativity,
                    row: Some(i),
                    col: Some(k),
                    magnitude: v,
                });
            }
            if !spec.allowed(i, k) && v.abs() > WEIGHT_TOL {
                return Err(DesignError::ConstraintViolation {
                    constraint: Constraint::Escalation,
                    row: Some(i),
                    col: Some(k),
                    magnitude: v,
                });
            }
        }
    }
    let target = 1.0 / spec.t() as f64;
    for k in 0..cols {
        let s: f64 = w.column(k).sum();
        if (s - target).abs() > WEIGHT_TOL {
            return Err(DesignError::ConstraintViolation {
                constraint: Constraint::CohortSize,
                row: None,
                col: Some(k),
                magnitude: s - target,
            });
        }
    }
    let total = w.sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(DesignError::ConstraintViolation {
            constraint: Constraint::TotalMass,
            row: None,
            col: None,
            magnitude: total - 1.0,
        });
    }
    Ok(())
}

fn validate_exact(spec: &ModelSpec, w: &RationalMatrix) -> Result<()> {
    let target = Rational::new(1, spec.t() as i128);
    for k in 0..spec.t() {
        let s = w.iter().fold(Rational::zero(), |acc, row| acc + row[k]);
        if s != target {
            return Err(DesignError::ConstraintViolation {
                constraint: Constraint::CohortSize,
                row: None,
                col: Some(k),
                magnitude: ratio_to_f64(&(s - target)),
            });
        }
    }
    Ok(())
}

/// Treatment and cohort proportions `r` and `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationProfile {
    pub r: DVector<f64>,
    pub s: DVector<f64>,
}

pub fn replication_profile(d: &Design) -> ReplicationProfile {
    let w = d.weights();
    ReplicationProfile {
        r: DVector::from_iterator(w.nrows(), w.row_iter().map(|row| row.sum())),
        s: DVector::from_iterator(w.ncols(), w.column_iter().map(|col| col.sum())),
    }
}

/// Exact row sums when the design carries rational weights.
pub fn replication_profile_exact(d: &Design) -> Option<(Vec<Rational>, Vec<Rational>)> {
    let w = d.exact_weights()?;
    let r = w
        .iter()
        .map(|row| row.iter().fold(Rational::zero(), |a, b| a + b))
        .collect();
    let s = (0..d.t())
        .map(|k| w.iter().fold(Rational::zero(), |a, row| a + row[k]))
        .collect();
    Some((r, s))
}

/// `Q` and `A` for the dose-vs-placebo contrasts `τ_i − τ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSystem {
    n: usize,
    t: usize,
}

impl ContrastSystem {
    pub fn new(spec: &ModelSpec) -> Self {
        ContrastSystem {
            n: spec.n(),
            t: spec.t(),
        }
    }

    /// `(n+1) × n`, `Qᵀ = (−1_n, I_n)`.
    pub fn q(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n + 1, self.n, |i, j| {
            if i == 0 {
                -1.0
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `(n+t+2) × n`, `Aᵀ = (Qᵀ, 0)`.
    pub fn a(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n + self.t + 2, self.n);
        a.rows_mut(0, self.n + 1).copy_from(&self.q());
        a
    }
}

/// Moment matrix of an arbitrary nonnegative `(n+1) × t` weight matrix,
/// ordered as `(τ, μ, θ)`. Works for truncated stage designs too: the μ
/// diagonal entry is the total mass, not 1.
pub fn moment_matrix_of(weights: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, t) = weights.shape();
    let dim = rows + 1 + t;
    let mu = rows;
    let mut m = DMatrix::zeros(dim, dim);
    for k in 0..t {
        let theta = rows + 1 + k;
        for i in 0..rows {
            let w = weights[(i, k)];
            if w == 0.0 {
                continue;
            }
            for (a, b) in [
                (i, i),
                (mu, mu),
                (theta, theta),
                (i, mu),
                (i, theta),
                (mu, theta),
            ] {
                m[(a, b)] += w;
                if a != b {
                    m[(b, a)] += w;
                }
            }
        }
    }
    m
}

/// Full block moment matrix `M(ξ)` of order `n + t + 2`.
pub fn moment_matrix(d: &Design) -> DMatrix<f64> {
    moment_matrix_of(d.weights())
}

/// The Schur complement `M_τ` with its `(α, b, C)` partition.
#[derive(Debug, Clone, PartialEq)]
pub struct TauInformation {
    pub matrix: DMatrix<f64>,
}

impl TauInformation {
    pub fn alpha(&self) -> f64 {
        self.matrix[(0, 0)]
    }

    pub fn b(&self) -> DVector<f64> {
        let n = self.matrix.nrows() - 1;
        self.matrix.view((1, 0), (n, 1)).column(0).into_owned()
    }

    pub fn c(&self) -> DMatrix<f64> {
        let n = self.matrix.nrows() - 1;
        self.matrix.view((1, 1), (n, n)).into_owned()
    }
}

/// `diag(r) − t X Xᵀ` for a weight matrix whose columns each sum to `1/t`.
pub fn tau_information_from_weights(weights: &DMatrix<f64>) -> DMatrix<f64> {
    let t = weights.ncols() as f64;
    let r = DVector::from_iterator(weights.nrows(), weights.row_iter().map(|row| row.sum()));
    let mut m = DMatrix::from_diagonal(&r) - (weights * weights.transpose()) * t;
    m = linalg::symmetrize(&m);
    m
}

pub fn tau_information(d: &Design) -> TauInformation {
    TauInformation {
        matrix: tau_information_from_weights(d.weights()),
    }
}

/// `M_11 − M_12 M_22⁻ M_12ᵀ` from the assembled moment matrix with a
/// Moore–Penrose `M_22⁻`. Independent route to [`tau_information`].
pub fn tau_information_via_schur(d: &Design) -> DMatrix<f64> {
    let m = moment_matrix(d);
    let p = d.n() + 1;
    let q = m.nrows() - p;
    let m11 = m.view((0, 0), (p, p));
    let m12 = m.view((0, p), (p, q));
    let m22 = m.view((p, p), (q, q)).into_owned();
    let g22 = linalg::pinv_symmetric(&m22);
    m11 - m12 * g22 * m12.transpose()
}

/// `N_A = C = diag(r_1..r_n) − t Z Zᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastInformation {
    pub matrix: DMatrix<f64>,
}

/// `C` straight from the dose rows of a weight matrix.
pub fn contrast_information_from_weights(weights: &DMatrix<f64>) -> DMatrix<f64> {
    let n = weights.nrows() - 1;
    let z = weights.rows(1, n);
    let t = weights.ncols() as f64;
    let r = DVector::from_iterator(n, z.row_iter().map(|row| row.sum()));
    let m = DMatrix::from_diagonal(&r) - (z * z.transpose()) * t;
    linalg::symmetrize(&m)
}

pub fn contrast_information(d: &Design) -> ContrastInformation {
    ContrastInformation {
        matrix: contrast_information_from_weights(d.weights()),
    }
}

/// Exact `C` for designs carrying rational weights.
pub fn contrast_information_exact(d: &Design) -> Option<RationalMatrix> {
    let w = d.exact_weights()?;
    let n = d.n();
    let t = Rational::from_integer(d.t() as i128);
    let mut c = vec![vec![Rational::zero(); n]; n];
    for a in 0..n {
        for b in 0..n {
            let dot = w[a + 1]
                .iter()
                .zip(&w[b + 1])
                .fold(Rational::zero(), |acc, (x, y)| acc + x * y);
            let mut v = -(t * dot);
            if a == b {
                v += w[a + 1].iter().fold(Rational::zero(), |acc, x| acc + x);
            }
            c[a][b] = v;
        }
    }
    Some(c)
}

/// Definitional route `(Qᵀ M_τ⁻ Q)⁻¹` with a Moore–Penrose `M_τ⁻`.
pub fn contrast_information_via_pinv(d: &Design) -> Option<DMatrix<f64>> {
    let mtau = tau_information_via_schur(d);
    let q = ContrastSystem::new(&d.spec()).q();
    let g = linalg::pinv_symmetric(&linalg::symmetrize(&mtau));
    linalg::spd_inverse(&(q.transpose() * g * q))
}

/// All dose-vs-placebo contrasts are estimable, i.e. `C` is nonsingular.
pub fn is_feasible(d: &Design) -> bool {
    is_feasible_matrix(&contrast_information(d).matrix)
}

pub(crate) fn is_feasible_matrix(c: &DMatrix<f64>) -> bool {
    let trace = c.trace();
    trace > 0.0 && linalg::min_eigenvalue(c) > FEASIBILITY_TOL * trace
}
