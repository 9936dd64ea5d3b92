//! Closed-form named designs and membership tests for the E-optimal classes.

use std::fmt;
use std::str::FromStr;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::design::{
    replication_profile, Design, DesignKind, ModelSpec, Rational, RationalMatrix, WEIGHT_TOL,
};
use crate::error::{DesignError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedDesignKind {
    Senn,
    UniformlyExtendedSenn,
    HighestDoseExtendedSenn,
}

impl NamedDesignKind {
    pub const ALL: [NamedDesignKind; 3] = [
        NamedDesignKind::Senn,
        NamedDesignKind::UniformlyExtendedSenn,
        NamedDesignKind::HighestDoseExtendedSenn,
    ];

    pub fn design_kind(self) -> DesignKind {
        match self {
            NamedDesignKind::Senn => DesignKind::Standard,
            _ => DesignKind::Extended,
        }
    }

    /// Name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            NamedDesignKind::Senn => "senn",
            NamedDesignKind::UniformlyExtendedSenn => "uniform-extended",
            NamedDesignKind::HighestDoseExtendedSenn => "highest-dose-extended",
        }
    }

    pub fn build(self, n: usize) -> Result<Design> {
        match self {
            NamedDesignKind::Senn => senn_design(n),
            NamedDesignKind::UniformlyExtendedSenn => uniformly_extended_senn(n),
            NamedDesignKind::HighestDoseExtendedSenn => highest_dose_extended_senn(n),
        }
    }
}

impl fmt::Display for NamedDesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for NamedDesignKind {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self> {
        NamedDesignKind::ALL
            .into_iter()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| DesignError::Parse(format!("unknown design name '{s}'")))
    }
}

fn zeros(spec: &ModelSpec) -> RationalMatrix {
    vec![vec![Rational::zero(); spec.t()]; spec.n() + 1]
}

fn frac(den: usize) -> Rational {
    Rational::new(1, den as i128)
}

/// Half of every cohort on placebo, the other half on the highest allowed dose.
pub fn senn_design(n: usize) -> Result<Design> {
    let spec = ModelSpec::standard(n)?;
    let mut w = zeros(&spec);
    let h = frac(2 * n);
    for k in 0..n {
        w[0][k] = h;
        w[k + 1][k] = h;
    }
    Design::from_rationals(spec, w)
}

/// Senn pattern in cohorts 1..n, then a final cohort with half on placebo and
/// the rest spread evenly over all doses.
pub fn uniformly_extended_senn(n: usize) -> Result<Design> {
    let spec = ModelSpec::extended(n)?;
    let t = spec.t();
    let mut w = zeros(&spec);
    let h = frac(2 * t);
    w[0].fill(h);
    for i in 1..=n {
        w[i][i - 1] = h;
        w[i][n] = frac(2 * n * t);
    }
    Design::from_rationals(spec, w)
}

/// Senn pattern in cohorts 1..n with the last cohort's placebo/top-dose split
/// repeated in cohort n+1.
pub fn highest_dose_extended_senn(n: usize) -> Result<Design> {
    let spec = ModelSpec::extended(n)?;
    let mut w = zeros(&spec);
    let h = frac(2 * (n + 1));
    for k in 0..n {
        w[0][k] = h;
        w[k + 1][k] = h;
    }
    w[0][n] = h;
    w[n][n] = h;
    Design::from_rationals(spec, w)
}

/// True iff `d` is the (unique) Senn design.
pub fn is_e_optimal_standard(d: &Design) -> Result<bool> {
    if d.kind() != DesignKind::Standard {
        return Err(DesignError::WrongKind {
            expected: "standard",
        });
    }
    let senn = senn_design(d.n())?;
    Ok(d.max_weight_diff(&senn) <= WEIGHT_TOL)
}

/// True iff the placebo row is constant `1/(2t)` and every dose has total
/// proportion `1/(2n)`.
pub fn is_e_optimal_extended(d: &Design) -> Result<bool> {
    is_e_optimal_extended_within(d, WEIGHT_TOL)
}

/// [`is_e_optimal_extended`] with an explicit tolerance, for designs given to
/// a limited number of decimals.
pub fn is_e_optimal_extended_within(d: &Design, tol: f64) -> Result<bool> {
    if d.kind() != DesignKind::Extended {
        return Err(DesignError::WrongKind {
            expected: "extended",
        });
    }
    let n = d.n();
    let t = d.t();
    let placebo = 1.0 / (2 * t) as f64;
    let dose = 1.0 / (2 * n) as f64;
    let placebo_ok = (0..t).all(|k| (d.weight(0, k) - placebo).abs() <= tol);
    let r = replication_profile(d).r;
    let doses_ok = (1..=n).all(|i| (r[i] - dose).abs() <= tol);
    Ok(placebo_ok && doses_ok)
}

/// Which named constructor, if any, reproduces `d` for its `n`.
pub fn identify_named(d: &Design) -> Option<NamedDesignKind> {
    NamedDesignKind::ALL
        .into_iter()
        .filter(|k| k.design_kind() == d.kind())
        .find(|k| {
            k.build(d.n())
                .map(|c| d.max_weight_diff(&c) <= WEIGHT_TOL)
                .unwrap_or(false)
        })
}
