//! Linear descriptions of feasible design sets.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constructors::{senn_design, uniformly_extended_senn};
use crate::design::{Design, DesignKind, ModelSpec, WEIGHT_TOL};
use crate::error::{DesignError, Result};
use crate::lp::{self, LinearProgram, LpError};

/// `Σ coef · ξ(i,k) = rhs` over cells `(i, k)` with 0-based cohort `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEquality {
    pub cells: Vec<(usize, usize, f64)>,
    pub rhs: f64,
}

impl LinearEquality {
    pub fn evaluate(&self, w: &DMatrix<f64>) -> f64 {
        self.cells.iter().map(|&(i, k, c)| c * w[(i, k)]).sum()
    }
}

/// Weight matrices satisfying escalation, equal cohort sizes and any extra
/// linear equalities.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPolytope {
    spec: ModelSpec,
    extra: Vec<LinearEquality>,
}

impl DesignPolytope {
    pub fn base(spec: ModelSpec) -> Self {
        DesignPolytope {
            spec,
            extra: Vec::new(),
        }
    }

    pub fn with_equality(mut self, eq: LinearEquality) -> Result<Self> {
        let t = self.spec.t();
        if let Some(&(i, k, _)) = eq
            .cells
            .iter()
            .find(|&&(i, k, _)| i > self.spec.n() || k >= t)
        {
            return Err(DesignError::InvalidParameter(format!(
                "equality references cell ({i}, {}) outside the design",
                k + 1
            )));
        }
        self.extra.push(eq);
        Ok(self)
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn extra_equalities(&self) -> &[LinearEquality] {
        &self.extra
    }

    /// Allowed cells in column-major order; these are the LP variables.
    pub fn variables(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for k in 0..self.spec.t() {
            for i in 0..=self.spec.n() {
                if self.spec.allowed(i, k) {
                    v.push((i, k));
                }
            }
        }
        v
    }

    fn constraints(&self, vars: &[(usize, usize)]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let t = self.spec.t();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for k in 0..t {
            a.push(
                vars.iter()
                    .map(|&(_, kk)| if kk == k { 1.0 } else { 0.0 })
                    .collect(),
            );
            b.push(1.0 / t as f64);
        }
        for eq in &self.extra {
            let mut row = vec![0.0; vars.len()];
            for &(i, k, c) in &eq.cells {
                if let Some(j) = vars.iter().position(|&v| v == (i, k)) {
                    row[j] += c;
                }
            }
            a.push(row);
            b.push(eq.rhs);
        }
        (a, b)
    }

    /// Membership of a raw weight matrix, absolute tolerance `tol`.
    pub fn contains_weights(&self, w: &DMatrix<f64>, tol: f64) -> bool {
        let spec = &self.spec;
        if w.shape() != (spec.n() + 1, spec.t()) {
            return false;
        }
        for k in 0..spec.t() {
            for i in 0..=spec.n() {
                let v = w[(i, k)];
                if v < -tol || (!spec.allowed(i, k) && v.abs() > tol) {
                    return false;
                }
            }
            if (w.column(k).sum() - 1.0 / spec.t() as f64).abs() > tol {
                return false;
            }
        }
        self.extra
            .iter()
            .all(|eq| (eq.evaluate(w) - eq.rhs).abs() <= tol)
    }

    pub fn contains(&self, d: &Design) -> bool {
        d.spec() == self.spec && self.contains_weights(d.weights(), WEIGHT_TOL)
    }

    /// A vertex maximizing `⟨direction, ξ⟩`.
    pub fn linear_maximizer(&self, direction: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let vars = self.variables();
        let (a_eq, b_eq) = self.constraints(&vars);
        let objective = vars.iter().map(|&(i, k)| direction[(i, k)]).collect();
        let sol = lp::solve(&LinearProgram {
            objective,
            a_eq,
            b_eq,
        })
        .map_err(|e| match e {
            LpError::Infeasible => DesignError::EmptyPolytope,
            other => DesignError::InvalidParameter(other.to_string()),
        })?;
        let mut w = DMatrix::zeros(self.spec.n() + 1, self.spec.t());
        for (&(i, k), &x) in vars.iter().zip(&sol.x) {
            w[(i, k)] = if x.abs() < 1e-15 { 0.0 } else { x };
        }
        Ok(w)
    }

    /// A feasible point in the relative interior when one of the named
    /// designs or the cell barycenter belongs to the polytope; otherwise the
    /// average of the LP vertices along ± every coordinate.
    pub fn interior_point(&self) -> Result<DMatrix<f64>> {
        let mut candidates = Vec::new();
        match self.spec.kind() {
            DesignKind::Extended => candidates.push(uniformly_extended_senn(self.spec.n())?),
            DesignKind::Standard => candidates.push(senn_design(self.spec.n())?),
        }
        let bary = barycenter(&self.spec);
        if self.extra.is_empty() {
            // cell barycenter has full support, so C is nonsingular there
            return Ok(bary);
        }
        if let Some(d) = candidates.into_iter().find(|d| self.contains(d)) {
            return Ok(d.weights().clone());
        }
        if self.contains_weights(&bary, WEIGHT_TOL) {
            return Ok(bary);
        }
        let vars = self.variables();
        let mut acc = DMatrix::zeros(self.spec.n() + 1, self.spec.t());
        for &(i, k) in &vars {
            for sign in [1.0, -1.0] {
                let mut dir = DMatrix::zeros(self.spec.n() + 1, self.spec.t());
                dir[(i, k)] = sign;
                acc += self.linear_maximizer(&dir)?;
            }
        }
        Ok(acc / (2 * vars.len()) as f64)
    }

    /// Random point: a Dirichlet mixture of the interior point and
    /// `vertices` LP vertices drawn along Gaussian directions.
    pub fn sample_weights<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        vertices: usize,
    ) -> Result<DMatrix<f64>> {
        let mut points = vec![self.interior_point()?];
        for _ in 0..vertices {
            let dir = DMatrix::from_fn(self.spec.n() + 1, self.spec.t(), |_, _| {
                StandardNormal.sample(rng)
            });
            points.push(self.linear_maximizer(&dir)?);
        }
        let lambdas: Vec<f64> = points.iter().map(|_| Exp1.sample(rng)).collect();
        let total: f64 = lambdas.iter().sum();
        let mut w = DMatrix::zeros(self.spec.n() + 1, self.spec.t());
        for (p, l) in points.iter().zip(&lambdas) {
            w += p * (l / total);
        }
        Ok(w)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, vertices: usize) -> Result<Design> {
        Design::new(self.spec, self.sample_weights(rng, vertices)?)
    }
}

/// Uniform weight over the allowed cells of each cohort.
pub fn barycenter(spec: &ModelSpec) -> DMatrix<f64> {
    let t = spec.t();
    DMatrix::from_fn(spec.n() + 1, t, |i, k| {
        if spec.allowed(i, k) {
            1.0 / (t * spec.allowed_count(k)) as f64
        } else {
            0.0
        }
    })
}

/// Designs with placebo at `1/(2t)` in every cohort and each dose at total
/// proportion `1/(2n)`. For standard designs these equalities leave only the
/// Senn design.
pub fn e_optimal_class(spec: ModelSpec) -> DesignPolytope {
    let n = spec.n();
    let t = spec.t();
    let mut extra = Vec::new();
    for k in 0..t {
        extra.push(LinearEquality {
            cells: vec![(0, k, 1.0)],
            rhs: 1.0 / (2 * t) as f64,
        });
    }
    for i in 1..=n {
        extra.push(LinearEquality {
            cells: (0..t)
                .filter(|&k| spec.allowed(i, k))
                .map(|k| (i, k, 1.0))
                .collect(),
            rhs: 1.0 / (2 * n) as f64,
        });
    }
    DesignPolytope { spec, extra }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn e_class_contains_uniform_extension() {
        let p = e_optimal_class(ModelSpec::extended(4).unwrap());
        assert!(p.contains(&uniformly_extended_senn(4).unwrap()));
        assert!(!p.contains(&crate::constructors::highest_dose_extended_senn(4).unwrap()));
    }

    #[test]
    fn standard_e_class_is_a_single_point() {
        let spec = ModelSpec::standard(4).unwrap();
        let p = e_optimal_class(spec);
        let senn = senn_design(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let dir = DMatrix::from_fn(5, 4, |_, _| StandardNormal.sample(&mut rng));
            let v = p.linear_maximizer(&dir).unwrap();
            assert!(crate::linalg::max_abs_diff(&v, senn.weights()) < 1e-12);
        }
    }

    #[test]
    fn samples_are_members() {
        let p = e_optimal_class(ModelSpec::extended(3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = p.sample(&mut rng, 3).unwrap();
            assert!(p.contains(&d));
        }
    }

    #[test]
    fn lp_vertices_concentrate_cohorts_on_base_polytope() {
        let spec = ModelSpec::standard(3).unwrap();
        let p = DesignPolytope::base(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let dir = DMatrix::from_fn(4, 3, |_, _| StandardNormal.sample(&mut rng));
            let v = p.linear_maximizer(&dir).unwrap();
            for k in 0..3 {
                let nonzero = v.column(k).iter().filter(|x| **x > 1e-12).count();
                assert_eq!(nonzero, 1);
            }
        }
    }

    #[test]
    fn empty_polytope_detected() {
        let spec = ModelSpec::standard(2).unwrap();
        let p = DesignPolytope::base(spec)
            .with_equality(LinearEquality {
                cells: vec![(0, 0, 1.0)],
                rhs: 0.9,
            })
            .unwrap();
        assert!(matches!(
            p.linear_maximizer(&DMatrix::zeros(3, 2)),
            Err(DesignError::EmptyPolytope)
        ));
    }
}
