//! Random designs for property tests and batch comparisons.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::design::{is_feasible, Design, ModelSpec};
use crate::error::{DesignError, Result};

/// Each cohort gets an independent flat-Dirichlet split over its allowed
/// treatments, scaled to `1/t`. Redraws until the design is feasible.
pub fn random_design<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Design {
    loop {
        let t = spec.t();
        let mut w = DMatrix::zeros(spec.n() + 1, t);
        for k in 0..t {
            let draws: Vec<f64> = (0..spec.allowed_count(k))
                .map(|_| Exp1.sample(rng))
                .collect();
            let total: f64 = draws.iter().sum();
            for (i, g) in draws.iter().enumerate() {
                w[(i, k)] = g / (total * t as f64);
            }
        }
        if let Ok(d) = Design::new(spec, w) {
            if is_feasible(&d) {
                return d;
            }
        }
    }
}

/// Adds independent uniform noise in `±amplitude` to every allowed cell,
/// clamps at zero and rescales each cohort back to `1/t`.
pub fn perturb<R: Rng + ?Sized>(d: &Design, amplitude: f64, rng: &mut R) -> Result<Design> {
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(DesignError::InvalidParameter(format!(
            "perturbation amplitude {amplitude} must be nonnegative"
        )));
    }
    let spec = d.spec();
    let t = spec.t();
    let mut w = d.weights().clone();
    for k in 0..t {
        for i in 0..spec.allowed_count(k) {
            w[(i, k)] = (w[(i, k)] + rng.random_range(-amplitude..=amplitude)).max(0.0);
        }
        let sum = w.column(k).sum();
        if sum <= 0.0 {
            return Err(DesignError::InvalidParameter(
                "perturbation emptied a cohort".to_string(),
            ));
        }
        w.column_mut(k).scale_mut(1.0 / (sum * t as f64));
    }
    Design::new(spec, w)
}
