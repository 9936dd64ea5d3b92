use std::fmt;

use thiserror::Error;

/// Which design constraint a weight matrix failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Nonnegativity,
    TotalMass,
    /// ξ(i,k) = 0 for i > k in cohorts k ≤ n.
    Escalation,
    /// Each cohort carries mass 1/t.
    CohortSize,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::Nonnegativity => "nonnegativity",
            Constraint::TotalMass => "total mass",
            Constraint::Escalation => "escalation",
            Constraint::CohortSize => "equal cohort size",
        };
        f.write_str(s)
    }
}

/// Block of the partitioned moment matrix that failed the g-inverse check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GInverseBlock {
    Tau,
    Cohort,
    Full,
}

impl fmt::Display for GInverseBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GInverseBlock::Tau => "M_tau",
            GInverseBlock::Cohort => "M_22",
            GInverseBlock::Full => "M",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// `row` and `col` are 0-based; `col` is `None` for whole-matrix checks.
    #[error(
        "{constraint} constraint violated at row {row:?}, cohort {col:?} (magnitude {magnitude:e})"
    )]
    ConstraintViolation {
        constraint: Constraint,
        row: Option<usize>,
        col: Option<usize>,
        magnitude: f64,
    },

    #[error("design is not feasible for the dose-vs-placebo contrasts")]
    InfeasibleDesign,

    #[error("expected a {expected} design")]
    WrongKind { expected: &'static str },

    #[error("functional is not estimable (residual {residual:e})")]
    InestimableFunctional { residual: f64 },

    #[error("stage {0} contrast is not estimable")]
    StageInestimable(usize),

    #[error("invalid stage {stage}: must lie in 1..={t}")]
    InvalidStage { stage: usize, t: usize },

    #[error("supplied matrix is not a generalized inverse of {0}")]
    NotAGInverse(GInverseBlock),

    #[error("invalid weight matrix: {0}")]
    InvalidWeightMatrix(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("design polytope is empty")]
    EmptyPolytope,

    #[error("information matrix became singular at iteration {0}")]
    SingularIterate(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DesignError> = std::result::Result<T, E>;
