//! Equivalence-theorem certificates for E- and c-optimality.
//!
//! Both normality inequalities have the form `tr(M(ξ̃) W) ≤ rhs` for a fixed
//! symmetric `W` built from the candidate design. `M(ξ̃)` is linear in ξ̃ and
//! the constrained design set is a product of per-cohort simplices, so the
//! supremum over all ξ̃ is attained at a vertex: a design putting each
//! cohort's whole mass `1/t` on one allowed treatment. Checking every vertex
//! therefore checks the inequality for every design.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constructors::{identify_named, NamedDesignKind};
use crate::criteria::c_variance;
use crate::design::{
    contrast_information, is_feasible_matrix, moment_matrix, moment_matrix_of, ContrastSystem,
    Design, ModelSpec,
};
use crate::error::{DesignError, GInverseBlock, Result};
use crate::linalg;

/// Absolute tolerance on normality gaps.
pub const CERTIFICATION_TOL: f64 = 1e-8;
/// Tolerance for `M G M = M`.
pub const GINVERSE_TOL: f64 = 1e-8;
/// Largest vertex set we are willing to enumerate.
pub const MAX_VERTICES: usize = 10_000_000;
/// Values this close to the maximum count as ties for the witness.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GInverseConstruction {
    BlockFormula,
    MoorePenrose,
}

/// A generalized inverse of a design's moment matrix, checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedInverse {
    matrix: DMatrix<f64>,
    construction: GInverseConstruction,
}

impl GeneralizedInverse {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn construction(&self) -> GInverseConstruction {
        self.construction
    }

    /// Wraps `matrix` after verifying `M G M = M`.
    pub fn new(
        d: &Design,
        matrix: DMatrix<f64>,
        construction: GInverseConstruction,
    ) -> Result<Self> {
        let m = moment_matrix(d);
        if !linalg::is_generalized_inverse(&m, &matrix, GINVERSE_TOL) {
            return Err(DesignError::NotAGInverse(GInverseBlock::Full));
        }
        Ok(GeneralizedInverse {
            matrix,
            construction,
        })
    }
}

pub fn moore_penrose_ginverse(d: &Design) -> GeneralizedInverse {
    GeneralizedInverse {
        matrix: linalg::pinv_symmetric(&moment_matrix(d)),
        construction: GInverseConstruction::MoorePenrose,
    }
}

fn blocks(d: &Design) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let m = moment_matrix(d);
    let p = d.n() + 1;
    let q = m.nrows() - p;
    let m11 = m.view((0, 0), (p, p)).into_owned();
    let m12 = m.view((0, p), (p, q)).into_owned();
    let m22 = m.view((p, p), (q, q)).into_owned();
    (m, m11, m12, m22)
}

/// Assembles
/// `G = [[T, −T M12 S], [−S M12ᵀ T, S + S M12ᵀ T M12 S]]`
/// from g-inverses `T` of `M_τ` and `S` of `M_22`.
pub fn block_generalized_inverse(
    d: &Design,
    m_tau_ginv: &DMatrix<f64>,
    m22_ginv: &DMatrix<f64>,
) -> Result<GeneralizedInverse> {
    let (m, m11, m12, m22) = blocks(d);
    let p = m11.nrows();
    let q = m22.nrows();
    if m_tau_ginv.shape() != (p, p) || m22_ginv.shape() != (q, q) {
        return Err(DesignError::InvalidParameter(format!(
            "g-inverse blocks must be {p}x{p} and {q}x{q}"
        )));
    }
    if !linalg::is_generalized_inverse(&m22, m22_ginv, GINVERSE_TOL) {
        return Err(DesignError::NotAGInverse(GInverseBlock::Cohort));
    }
    let m_tau = &m11 - &m12 * m22_ginv * m12.transpose();
    if !linalg::is_generalized_inverse(&m_tau, m_tau_ginv, GINVERSE_TOL) {
        return Err(DesignError::NotAGInverse(GInverseBlock::Tau));
    }
    let upper_right = -(m_tau_ginv * &m12 * m22_ginv);
    let lower_right = m22_ginv + m22_ginv * m12.transpose() * m_tau_ginv * &m12 * m22_ginv;
    let mut g = DMatrix::zeros(p + q, p + q);
    g.view_mut((0, 0), (p, p)).copy_from(m_tau_ginv);
    g.view_mut((0, p), (p, q)).copy_from(&upper_right);
    g.view_mut((p, 0), (q, p))
        .copy_from(&upper_right.transpose());
    g.view_mut((p, p), (q, q)).copy_from(&lower_right);
    if !linalg::is_generalized_inverse(&m, &g, GINVERSE_TOL) {
        return Err(DesignError::NotAGInverse(GInverseBlock::Full));
    }
    Ok(GeneralizedInverse {
        matrix: g,
        construction: GInverseConstruction::BlockFormula,
    })
}

/// Block inverse with `M_τ⁻ = [[0, 0], [0, C⁻¹]]` and
/// `M_22⁻ = [[0, 0], [0, t I_t]]`. For the Senn design this is the pair
/// `(4n I_n, n I_n)` in the lower blocks.
pub fn explicit_block_ginverse(d: &Design) -> Result<GeneralizedInverse> {
    let n = d.n();
    let t = d.t();
    let c = contrast_information(d).matrix;
    if !is_feasible_matrix(&c) {
        return Err(DesignError::InfeasibleDesign);
    }
    let c_inv = linalg::spd_inverse(&c).ok_or(DesignError::InfeasibleDesign)?;
    let mut tau = DMatrix::zeros(n + 1, n + 1);
    tau.view_mut((1, 1), (n, n)).copy_from(&c_inv);
    let mut m22 = DMatrix::zeros(t + 1, t + 1);
    for k in 1..=t {
        m22[(k, k)] = t as f64;
    }
    block_generalized_inverse(d, &tau, &m22)
}

/// Block-formula inverse for designs matching a named constructor, the
/// Moore–Penrose inverse otherwise.
pub fn default_ginverse(d: &Design) -> Result<GeneralizedInverse> {
    match identify_named(d) {
        Some(_) => explicit_block_ginverse(d),
        None => Ok(moore_penrose_ginverse(d)),
    }
}

/// The vertices of the design polytope: every assignment of one allowed
/// treatment to each cohort. Indexed in mixed radix with cohort 1 as the
/// most significant digit, so index order is lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    spec: ModelSpec,
    radices: Vec<usize>,
    len: usize,
}

pub fn enumerate_vertices(spec: ModelSpec) -> Result<VertexSet> {
    if spec.n() > 8 {
        return Err(DesignError::TooLarge(format!(
            "vertex enumeration supports n <= 8, got {}",
            spec.n()
        )));
    }
    let radices: Vec<usize> = (0..spec.t()).map(|k| spec.allowed_count(k)).collect();
    let mut len = 1usize;
    for r in &radices {
        len = len.saturating_mul(*r);
        if len > MAX_VERTICES {
            return Err(DesignError::TooLarge(format!(
                "vertex count exceeds {MAX_VERTICES}"
            )));
        }
    }
    Ok(VertexSet { spec, radices, len })
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    /// Treatment given in each (0-based) cohort at vertex `index`.
    pub fn treatments(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        for k in (0..self.radices.len()).rev() {
            out[k] = index % self.radices[k];
            index /= self.radices[k];
        }
        out
    }

    pub fn weights(&self, index: usize) -> DMatrix<f64> {
        let t = self.spec.t();
        let mut w = DMatrix::zeros(self.spec.n() + 1, t);
        for (k, i) in self.treatments(index).into_iter().enumerate() {
            w[(i, k)] = 1.0 / t as f64;
        }
        w
    }

    pub fn design(&self, index: usize) -> Design {
        Design::new(self.spec, self.weights(index))
            .expect("vertices satisfy the design constraints")
    }

    /// Calls `f(index, value)` for every vertex where `value = Σ_k scores[(i_k, k)]`.
    fn for_each_sum(&self, scores: &DMatrix<f64>, mut f: impl FnMut(usize, f64)) {
        let t = self.radices.len();
        let mut digits = vec![0usize; t];
        for index in 0..self.len {
            let value: f64 = digits
                .iter()
                .enumerate()
                .map(|(k, &i)| scores[(i, k)])
                .sum();
            f(index, value);
            for k in (0..t).rev() {
                digits[k] += 1;
                if digits[k] < self.radices[k] {
                    break;
                }
                digits[k] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionClaim {
    E,
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub criterion: CriterionClaim,
    pub design: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificationStatus {
    Certified,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationResult {
    pub claim: Claim,
    pub status: CertificationStatus,
    /// `max_v LHS(v) − rhs`.
    pub worst_gap: f64,
    /// `min_v LHS(v) − rhs`; zero together with `worst_gap` means equality
    /// holds at every vertex.
    pub min_gap: f64,
    pub rhs: f64,
    pub witness_vertex_index: Option<usize>,
    /// Treatment per cohort (cohorts in order) at the witness vertex.
    pub witness_treatments: Option<Vec<usize>>,
    pub vertices_checked: usize,
    pub ginverse: GInverseConstruction,
    pub tolerance: f64,
}

impl CertificationResult {
    pub fn is_certified(&self) -> bool {
        self.status == CertificationStatus::Certified
    }

    /// Re-evaluates the status at another tolerance.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.status = if self.worst_gap <= tolerance {
            CertificationStatus::Certified
        } else {
            CertificationStatus::Violated
        };
        self
    }
}

/// `f(i,k)ᵀ W f(i,k)` for every cell, divided by `t` (the vertex mass per cohort).
fn cell_scores(spec: &ModelSpec, w: &DMatrix<f64>) -> DMatrix<f64> {
    let t = spec.t();
    let mu = spec.mu_index();
    DMatrix::from_fn(spec.n() + 1, t, |i, k| {
        let th = spec.theta_index(k);
        let a = spec.tau_index(i);
        let q =
            w[(a, a)] + w[(mu, mu)] + w[(th, th)] + 2.0 * (w[(a, mu)] + w[(a, th)] + w[(mu, th)]);
        q / t as f64
    })
}

/// `tr(M(ξ̃) W)` computed from the assembled moment matrix of `weights`.
pub fn normality_lhs(weights: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (moment_matrix_of(weights) * w).trace()
}

/// Normality LHS at every vertex, in index order.
pub fn vertex_lhs_values(vertices: &VertexSet, w: &DMatrix<f64>) -> Vec<f64> {
    let scores = cell_scores(&vertices.spec, w);
    let mut out = Vec::with_capacity(vertices.len());
    vertices.for_each_sum(&scores, |_, v| out.push(v));
    out
}

fn check_vertices(
    spec: ModelSpec,
    w: &DMatrix<f64>,
    rhs: f64,
    claim: Claim,
    ginverse: GInverseConstruction,
) -> Result<CertificationResult> {
    let vertices = enumerate_vertices(spec)?;
    let scores = cell_scores(&spec, w);
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    vertices.for_each_sum(&scores, |_, v| {
        max = max.max(v);
        min = min.min(v);
    });
    let mut witness = None;
    vertices.for_each_sum(&scores, |idx, v| {
        if witness.is_none() && v >= max - TIE_TOL {
            witness = Some(idx);
        }
    });
    let worst_gap = max - rhs;
    let result = CertificationResult {
        claim,
        status: CertificationStatus::Violated,
        worst_gap,
        min_gap: min - rhs,
        rhs,
        witness_vertex_index: witness,
        witness_treatments: witness.map(|i| vertices.treatments(i)),
        vertices_checked: vertices.len(),
        ginverse,
        tolerance: CERTIFICATION_TOL,
    };
    Ok(result.with_tolerance(CERTIFICATION_TOL))
}

fn design_label(d: &Design) -> String {
    match identify_named(d) {
        Some(k) => format!("{k}(n={})", d.n()),
        None => format!("custom-{}(n={})", d.kind(), d.n()),
    }
}

/// Checks `cᵀ Gᵀ M(v) G c ≤ cᵀ M⁻ c` at every vertex `v`.
pub fn certify_c_optimality(
    d: &Design,
    c: &DVector<f64>,
    g: &GeneralizedInverse,
) -> Result<CertificationResult> {
    let rhs = c_variance(d, c)?;
    let gc = g.matrix() * c;
    let w = &gc * gc.transpose();
    let claim = Claim {
        criterion: CriterionClaim::C,
        design: design_label(d),
        coefficients: Some(c.iter().copied().collect()),
    };
    check_vertices(d.spec(), &w, rhs, claim, g.construction())
}

/// Checks `tr(M(v) G A N_A E N_A Aᵀ Gᵀ) ≤ λ_min(N_A)` at every vertex `v`.
pub fn certify_e_optimality(
    d: &Design,
    g: &GeneralizedInverse,
    e_weight: &DMatrix<f64>,
) -> Result<CertificationResult> {
    let n = d.n();
    if e_weight.shape() != (n, n) {
        return Err(DesignError::InvalidWeightMatrix(format!(
            "expected {n}x{n}"
        )));
    }
    if linalg::max_abs_diff(e_weight, &e_weight.transpose()) > 1e-12 {
        return Err(DesignError::InvalidWeightMatrix(
            "not symmetric".to_string(),
        ));
    }
    if (e_weight.trace() - 1.0).abs() > 1e-10 {
        return Err(DesignError::InvalidWeightMatrix(format!(
            "trace {} differs from 1",
            e_weight.trace()
        )));
    }
    if linalg::min_eigenvalue(e_weight) < -1e-10 {
        return Err(DesignError::InvalidWeightMatrix(
            "not nonnegative definite".to_string(),
        ));
    }
    let na = contrast_information(d).matrix;
    if !is_feasible_matrix(&na) {
        return Err(DesignError::InfeasibleDesign);
    }
    let rhs = linalg::min_eigenvalue(&na);
    let a = ContrastSystem::new(&d.spec()).a();
    let ga = g.matrix() * a;
    let inner = &na * e_weight * &na;
    let w = linalg::symmetrize(&(&ga * inner * ga.transpose()));
    let claim = Claim {
        criterion: CriterionClaim::E,
        design: design_label(d),
        coefficients: None,
    };
    check_vertices(d.spec(), &w, rhs, claim, g.construction())
}

/// `E = 1_n 1_nᵀ / n`.
pub fn uniform_e_weight(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, n, 1.0 / n as f64)
}

/// E-certificate with the default `(G, E)` choices: the block inverse for
/// named designs and the Moore–Penrose inverse otherwise; `E = J/n` first
/// when λ_min is repeated or the design is a Senn-type E-optimal candidate,
/// then `E = hhᵀ` for the computed minimal eigenvector.
pub fn certify_e_default(d: &Design) -> Result<CertificationResult> {
    let g = default_ginverse(d)?;
    let na = contrast_information(d).matrix;
    if !is_feasible_matrix(&na) {
        return Err(DesignError::InfeasibleDesign);
    }
    let (vals, vecs) = linalg::sorted_eigen(&na);
    let n = d.n();
    let h = vecs.column(0).into_owned();
    let hh = &h * h.transpose();
    let repeated = vals[1] - vals[0] <= 1e-9 * vals[n - 1].abs().max(1.0);
    let senn_like = matches!(
        identify_named(d),
        Some(NamedDesignKind::Senn | NamedDesignKind::UniformlyExtendedSenn)
    );
    let candidates = if repeated || senn_like {
        vec![uniform_e_weight(n), hh]
    } else {
        vec![hh]
    };
    let mut best: Option<CertificationResult> = None;
    for e in candidates {
        let r = certify_e_optimality(d, &g, &e)?;
        if r.is_certified() {
            return Ok(r);
        }
        if best.as_ref().is_none_or(|b| r.worst_gap < b.worst_gap) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// c-certificate with the default inverse.
pub fn certify_c_default(d: &Design, c: &DVector<f64>) -> Result<CertificationResult> {
    certify_c_optimality(d, c, &default_ginverse(d)?)
}
