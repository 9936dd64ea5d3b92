//! Optimality criteria for the dose-vs-placebo contrasts.
//!
//! Every variance is reported on the `σ²/N`-free scale, i.e. as `cᵀ M⁻ c`
//! or an entry of `N_A⁻¹`; multiply by `σ²/N` for an absolute variance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{
    contrast_information, is_feasible_matrix, moment_matrix, moment_matrix_of, Design, DesignKind,
    ModelSpec,
};
use crate::error::{DesignError, Result};
use crate::linalg;

/// Residual threshold for `‖(I − M M⁻) c‖` in estimability checks.
pub const ESTIMABILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    /// λ_min(N_A), larger is better.
    pub e: f64,
    /// trace(N_A⁻¹).
    pub a: f64,
    /// log det(N_A), larger is better.
    pub d: f64,
    /// max_i (N_A⁻¹)_ii.
    pub mv: f64,
    /// Variance of the average dose-minus-placebo effect.
    pub avg_contrast: f64,
    /// Latest-dose stage variances; `None` when some stage cannot estimate
    /// its contrast.
    pub lv: Option<Vec<f64>>,
}

/// A design truncated after cohort `stage` (1-based). Mass is `stage / t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDesign {
    pub stage: usize,
    pub weights: DMatrix<f64>,
}

impl StageDesign {
    pub fn mass(&self) -> f64 {
        self.weights.sum()
    }
}

fn feasible_information(d: &Design) -> Result<DMatrix<f64>> {
    let c = contrast_information(d).matrix;
    if !is_feasible_matrix(&c) {
        return Err(DesignError::InfeasibleDesign);
    }
    Ok(c)
}

/// `N_A⁻¹`, the scaled covariance of the dose-minus-placebo estimators.
pub fn contrast_covariance(d: &Design) -> Result<DMatrix<f64>> {
    let c = feasible_information(d)?;
    linalg::spd_inverse(&c).ok_or(DesignError::InfeasibleDesign)
}

pub fn e_criterion(d: &Design) -> Result<f64> {
    let c = feasible_information(d)?;
    Ok(linalg::min_eigenvalue(&c))
}

pub fn a_criterion(d: &Design) -> Result<f64> {
    Ok(contrast_covariance(d)?.trace())
}

pub fn d_criterion(d: &Design) -> Result<f64> {
    let c = feasible_information(d)?;
    let chol = nalgebra::Cholesky::new(c).ok_or(DesignError::InfeasibleDesign)?;
    Ok(chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum())
}

pub fn mv_criterion(d: &Design) -> Result<f64> {
    let cov = contrast_covariance(d)?;
    Ok(cov
        .diagonal()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `cᵀ M⁻ c` for a moment matrix, after checking `c ∈ C(M)`.
pub fn functional_variance(m: &DMatrix<f64>, c: &DVector<f64>) -> Result<f64> {
    if c.len() != m.nrows() {
        return Err(DesignError::InvalidParameter(format!(
            "coefficient vector has length {}, expected {}",
            c.len(),
            m.nrows()
        )));
    }
    let g = linalg::pinv_symmetric(m);
    let residual = (c - m * (&g * c)).norm();
    if residual >= ESTIMABILITY_TOL {
        return Err(DesignError::InestimableFunctional { residual });
    }
    Ok(c.dot(&(&g * c)))
}

/// Variance of the least-squares estimator of `cᵀβ` under `d`.
pub fn c_variance(d: &Design, c: &DVector<f64>) -> Result<f64> {
    functional_variance(&moment_matrix(d), c)
}

/// `c = (−1, 1_nᵀ/n, 0_{t+1}ᵀ)ᵀ`: the average dose effect minus placebo.
pub fn avg_contrast_coefficients(spec: &ModelSpec) -> DVector<f64> {
    let n = spec.n();
    let mut c = DVector::zeros(spec.parameter_dim());
    c[0] = -1.0;
    for i in 1..=n {
        c[i] = 1.0 / n as f64;
    }
    c
}

/// `c = (e_{i+1} − e_1, 0)`: dose `i` minus placebo.
pub fn dose_contrast_coefficients(spec: &ModelSpec, dose: usize) -> DVector<f64> {
    let mut c = DVector::zeros(spec.parameter_dim());
    c[0] = -1.0;
    c[spec.tau_index(dose)] += 1.0;
    c
}

/// `(1/n²) 1ᵀ N_A⁻¹ 1`.
pub fn avg_contrast_variance(d: &Design) -> Result<f64> {
    let cov = contrast_covariance(d)?;
    let n = d.n() as f64;
    Ok(cov.sum() / (n * n))
}

/// Zeroes cohorts after `stage` (1-based) without renormalising.
pub fn stage_design(d: &Design, stage: usize) -> Result<StageDesign> {
    let t = d.t();
    if stage == 0 || stage > t {
        return Err(DesignError::InvalidStage { stage, t });
    }
    let mut weights = d.weights().clone();
    for k in stage..t {
        weights.column_mut(k).fill(0.0);
    }
    Ok(StageDesign { stage, weights })
}

/// Variance of `τ_dose − τ_0` from the stage design's moment matrix.
fn stage_contrast_variance(d: &Design, stage: usize, dose: usize) -> Result<f64> {
    let sd = stage_design(d, stage)?;
    let m = moment_matrix_of(&sd.weights);
    let c = dose_contrast_coefficients(&d.spec(), dose);
    functional_variance(&m, &c).map_err(|e| match e {
        DesignError::InestimableFunctional { .. } => DesignError::StageInestimable(stage),
        other => other,
    })
}

/// Latest variances `d_k`: for each stage `k ≤ n` the variance of
/// `τ_k − τ_0` using cohorts `1..=k` only. Extended designs get one more
/// entry, the variance of `τ_n − τ_0` from the complete study.
pub fn lv_variances(d: &Design) -> Result<Vec<f64>> {
    let n = d.n();
    let mut out: Vec<f64> = (1..=n)
        .map(|k| stage_contrast_variance(d, k, k))
        .collect::<Result<_>>()?;
    if d.kind() == DesignKind::Extended {
        out.push(stage_contrast_variance(d, n + 1, n)?);
    }
    Ok(out)
}

/// All criteria at once. Fails only if the design is infeasible.
pub fn evaluate(d: &Design) -> Result<CriterionReport> {
    let c = feasible_information(d)?;
    let cov = linalg::spd_inverse(&c).ok_or(DesignError::InfeasibleDesign)?;
    let n = d.n() as f64;
    let lv = match lv_variances(d) {
        Ok(v) => Some(v),
        Err(DesignError::StageInestimable(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(CriterionReport {
        e: linalg::min_eigenvalue(&c),
        a: cov.trace(),
        d: d_criterion(d)?,
        mv: cov
            .diagonal()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        avg_contrast: cov.sum() / (n * n),
        lv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructors::{highest_dose_extended_senn, senn_design, uniformly_extended_senn};
    use crate::design::ModelSpec;

    #[test]
    fn senn_closed_forms() {
        for n in 2..=6 {
            let d = senn_design(n).unwrap();
            let nf = n as f64;
            assert!((e_criterion(&d).unwrap() - 1.0 / (4.0 * nf)).abs() < 1e-14);
            assert!((a_criterion(&d).unwrap() - 4.0 * nf * nf).abs() < 1e-10);
            assert!((d_criterion(&d).unwrap() - nf * (1.0 / (4.0 * nf)).ln()).abs() < 1e-10);
            assert!((mv_criterion(&d).unwrap() - 4.0 * nf).abs() < 1e-10);
            assert!((avg_contrast_variance(&d).unwrap() - 4.0).abs() < 1e-10);
        }
        assert_eq!(a_criterion(&senn_design(4).unwrap()).unwrap().round(), 64.0);
        assert!(
            (d_criterion(&senn_design(2).unwrap()).unwrap() - 2.0 * (0.125f64).ln()).abs() < 1e-12
        );
    }

    #[test]
    fn c_variance_matches_closed_forms() {
        for n in 2..=6 {
            let s = senn_design(n).unwrap();
            let c = dose_contrast_coefficients(&s.spec(), n);
            assert!((c_variance(&s, &c).unwrap() - 4.0 * n as f64).abs() < 1e-9);
            let h = highest_dose_extended_senn(n).unwrap();
            let c = dose_contrast_coefficients(&h.spec(), n);
            assert!((c_variance(&h, &c).unwrap() - 2.0 * (n + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn avg_contrast_routes_agree() {
        for d in [
            senn_design(4).unwrap(),
            uniformly_extended_senn(4).unwrap(),
            highest_dose_extended_senn(3).unwrap(),
        ] {
            let via_c = c_variance(&d, &avg_contrast_coefficients(&d.spec())).unwrap();
            let direct = avg_contrast_variance(&d).unwrap();
            assert!((via_c - direct).abs() < 1e-8);
        }
        let u = uniformly_extended_senn(4).unwrap();
        assert!((avg_contrast_variance(&u).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn inestimable_functional() {
        // θ_1 alone is not estimable (cohort effects are only identified up to μ)
        let d = senn_design(3).unwrap();
        let mut c = DVector::zeros(d.spec().parameter_dim());
        c[d.spec().theta_index(0)] = 1.0;
        assert!(matches!(
            c_variance(&d, &c),
            Err(DesignError::InestimableFunctional { .. })
        ));
    }

    #[test]
    fn stage_truncation() {
        let d = senn_design(4).unwrap();
        let s = stage_design(&d, 2).unwrap();
        assert!((s.mass() - 0.5).abs() < 1e-15);
        assert_eq!(s.weights[(0, 0)], 0.125);
        assert_eq!(s.weights[(2, 1)], 0.125);
        assert_eq!(s.weights.columns(2, 2).sum(), 0.0);
        assert_eq!(stage_design(&d, 4).unwrap().weights, *d.weights());
        let one = stage_design(&d, 1).unwrap();
        assert_eq!(one.weights.rows(2, 3).sum(), 0.0);
        assert!(matches!(
            stage_design(&d, 0),
            Err(DesignError::InvalidStage { .. })
        ));
        assert!(matches!(
            stage_design(&d, 5),
            Err(DesignError::InvalidStage { .. })
        ));
    }

    #[test]
    fn lv_closed_forms() {
        for n in 2..=5 {
            let d = senn_design(n).unwrap();
            let lv = lv_variances(&d).unwrap();
            assert_eq!(lv.len(), n);
            for v in lv {
                assert!((v - 4.0 * n as f64).abs() < 1e-9);
            }
            let h = highest_dose_extended_senn(n).unwrap();
            let lv = lv_variances(&h).unwrap();
            assert_eq!(lv.len(), n + 1);
            assert!((lv[n] - 2.0 * (n + 1) as f64).abs() < 1e-9);
            // stages 1..n see the Senn pattern at mass k/(n+1)
            for v in &lv[..n] {
                assert!((v - 4.0 * (n + 1) as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stage_inestimable_reported() {
        // cohort 1 entirely on placebo: τ_1 − τ_0 not estimable after stage 1
        let spec = ModelSpec::standard(2).unwrap();
        let w = DMatrix::from_row_slice(3, 2, &[0.5, 0.2, 0.0, 0.15, 0.0, 0.15]);
        let d = Design::new(spec, w).unwrap();
        assert!(matches!(
            lv_variances(&d),
            Err(DesignError::StageInestimable(1))
        ));
        let report = evaluate(&d).unwrap();
        assert!(report.lv.is_none());
    }

    #[test]
    fn infeasible_errors() {
        let spec = ModelSpec::standard(2).unwrap();
        let w = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let d = Design::new(spec, w).unwrap();
        assert!(matches!(
            e_criterion(&d),
            Err(DesignError::InfeasibleDesign)
        ));
        assert!(matches!(evaluate(&d), Err(DesignError::InfeasibleDesign)));
    }

    #[test]
    fn highest_dose_e_value_below_optimum() {
        let d = highest_dose_extended_senn(4).unwrap();
        // N_A = diag(1/20, 1/20, 1/20, 1/10) from the displayed M_τ
        assert!((e_criterion(&d).unwrap() - 0.05).abs() < 1e-14);
        assert!(e_criterion(&d).unwrap() < 1.0 / 16.0);
    }
}
