//! Optimal approximate designs for dose-escalation studies.
//!
//! Doses are compared with placebo in an additive treatment + cohort model
//! where cohort `k` may only use placebo and doses `1..=k`. The crate builds
//! the closed-form optimal designs, evaluates E-, A-, D-, MV-, LV- and
//! c-criteria, certifies optimality through equivalence-theorem inequalities
//! checked at every vertex of the design polytope, and optimizes secondary
//! criteria over linearly constrained design classes with Frank–Wolfe.

pub mod constructors;
pub mod criteria;
pub mod design;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod optimizer;
pub mod oracle;
pub mod polytope;
pub mod sampling;
pub mod verify;

pub use constructors::{
    highest_dose_extended_senn, is_e_optimal_extended, is_e_optimal_standard, senn_design,
    uniformly_extended_senn, NamedDesignKind,
};
pub use design::{Design, DesignKind, ModelSpec};
pub use error::{DesignError, Result};
