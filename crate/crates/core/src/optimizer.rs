//! Frank–Wolfe maximization of concave information criteria over a
//! [`DesignPolytope`].
//!
//! Criteria are functions of the contrast information matrix
//! `C = diag(Z 1) − t Z Zᵀ`, where `Z` is the dose block of the weights. With
//! `G = ∂f/∂C` the weight gradient is `∂f/∂ξ(i,k) = G_ii − 2t (G Z)_ik` for
//! doses and zero for placebo cells.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{contrast_information_from_weights, Design, Rational};
use crate::error::{DesignError, Result};
use crate::linalg;
use crate::polytope::DesignPolytope;
use crate::verify::{certify_e_default, CertificationResult};

/// A concave criterion of the contrast information matrix.
pub trait InformationCriterion: Send + Sync {
    fn name(&self) -> &str;

    /// Value and gradient `∂f/∂C` (symmetric), or `None` outside the domain.
    fn evaluate(&self, c: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)>;
}

/// `−trace(C⁻¹)`.
#[derive(Debug, Clone, Copy)]
pub struct ACriterion;

impl InformationCriterion for ACriterion {
    fn name(&self) -> &str {
        "A"
    }

    fn evaluate(&self, c: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
        let inv = linalg::spd_inverse(c)?;
        let value = -inv.trace();
        Some((value, &inv * &inv))
    }
}

/// `log det C`.
#[derive(Debug, Clone, Copy)]
pub struct DCriterion;

impl InformationCriterion for DCriterion {
    fn name(&self) -> &str {
        "D"
    }

    fn evaluate(&self, c: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
        let chol = nalgebra::Cholesky::new(linalg::symmetrize(c))?;
        let logdet = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Some((logdet, chol.inverse()))
    }
}

/// Soft minimum of the eigenvalues, `−β⁻¹ log Σ exp(−β λ_i)`.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedMinEigenvalue {
    pub beta: f64,
}

impl InformationCriterion for SmoothedMinEigenvalue {
    fn name(&self) -> &str {
        "E"
    }

    fn evaluate(&self, c: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
        let (vals, vecs) = linalg::sorted_eigen(c);
        let lmin = vals[0];
        let weights: Vec<f64> = vals
            .iter()
            .map(|l| (-self.beta * (l - lmin)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let value = lmin - total.ln() / self.beta;
        let n = c.nrows();
        let mut grad = DMatrix::zeros(n, n);
        for (j, w) in weights.iter().enumerate() {
            let v = vecs.column(j);
            grad += (v * v.transpose()) * (w / total);
        }
        Some((value, grad))
    }
}

#[derive(Clone)]
pub enum Objective {
    A,
    D,
    /// λ_min, optimized through a soft-min temperature schedule.
    E,
    Custom(Arc<dyn InformationCriterion>),
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::A => f.write_str("A"),
            Objective::D => f.write_str("D"),
            Objective::E => f.write_str("E"),
            Objective::Custom(c) => write!(f, "Custom({})", c.name()),
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Objective::A),
            "D" => Ok(Objective::D),
            "E" => Ok(Objective::E),
            other => Err(DesignError::Parse(format!("unknown objective '{other}'"))),
        }
    }
}

/// Soft-min temperatures used for the E objective, in order.
pub const E_TEMPERATURES: [f64; 4] = [1e2, 1e3, 1e4, 1e5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    ExactLineSearch,
    /// `γ = 2 / (k + 3)` at 0-based iteration `k`, so the start keeps positive
    /// mass; plain Frank–Wolfe steps only.
    Harmonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub stopping_gap: f64,
    pub step_rule: StepRule,
    /// One run per seed from a randomized start; empty means a single run
    /// from the default start.
    pub seeds: Vec<u64>,
    /// Iterations without the best gap halving before away steps are enabled.
    pub stall_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 200_000,
            stopping_gap: 1e-7,
            step_rule: StepRule::ExactLineSearch,
            seeds: Vec::new(),
            stall_window: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.stopping_gap.is_finite() || self.stopping_gap <= 0.0 {
            return Err(DesignError::InvalidParameter(
                "stopping gap must be positive".to_string(),
            ));
        }
        if self.max_iters == 0 {
            return Err(DesignError::InvalidParameter(
                "max_iters must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Toward,
    Away,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub objective: f64,
    pub gap: f64,
    pub step: f64,
    pub kind: StepKind,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub design: Design,
    /// Criterion value at the returned design (true λ_min for E).
    pub value: f64,
    /// Final Frank–Wolfe duality gap; for E, the worst normality gap of the
    /// equivalence-theorem check.
    pub gap: f64,
    pub iterations: usize,
    /// Gap within the stopping threshold; for E, the certificate holds.
    pub converged: bool,
    pub log: Vec<IterationLog>,
    /// Index into `SolverConfig::seeds` of the selected run.
    pub seed_index: Option<usize>,
    /// Equivalence-theorem check of the final iterate, E objective only.
    pub certification: Option<CertificationResult>,
}

/// `∂f/∂ξ` from `∂f/∂C`.
pub fn weight_gradient(weights: &DMatrix<f64>, grad_c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = weights.nrows() - 1;
    let t = weights.ncols() as f64;
    let z = weights.rows(1, n);
    let gz = grad_c * z;
    let mut out = DMatrix::zeros(weights.nrows(), weights.ncols());
    for i in 0..n {
        for k in 0..weights.ncols() {
            out[(i + 1, k)] = grad_c[(i, i)] - 2.0 * t * gz[(i, k)];
        }
    }
    out
}

/// Criterion value and weight gradient at a raw weight matrix.
pub fn evaluate_weights(
    crit: &dyn InformationCriterion,
    weights: &DMatrix<f64>,
) -> Option<(f64, DMatrix<f64>)> {
    let c = contrast_information_from_weights(weights);
    let (v, g) = crit.evaluate(&c)?;
    if !v.is_finite() {
        return None;
    }
    Some((v, weight_gradient(weights, &g)))
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

struct RunOutcome {
    weights: DMatrix<f64>,
    gap: f64,
    iterations: usize,
    converged: bool,
    log: Vec<IterationLog>,
}

/// Exact line search for a concave φ on `[0, max]`: Illinois regula falsi
/// on φ', treating points outside the domain as past the maximum.
fn line_search(
    crit: &dyn InformationCriterion,
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    max: f64,
) -> f64 {
    let slope = |g: f64| -> Option<f64> {
        let (_, grad) = evaluate_weights(crit, &(x + d * g))?;
        Some(inner(&grad, d))
    };
    let Some(s0) = slope(0.0) else {
        return 0.0;
    };
    if s0 <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut s_lo) = (0.0, s0);
    let (mut hi, mut s_hi) = match slope(max) {
        Some(s) if s >= 0.0 => return max,
        other => (max, other),
    };
    let mut side = 0i8;
    for _ in 0..100 {
        let mid = match s_hi {
            Some(sh) => {
                let m = lo + (hi - lo) * s_lo / (s_lo - sh);
                m.clamp(lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo))
            }
            None => 0.5 * (lo + hi),
        };
        match slope(mid) {
            Some(s) if s > 0.0 => {
                lo = mid;
                s_lo = s;
                if side == 1 {
                    s_hi = s_hi.map(|v| 0.5 * v);
                }
                side = 1;
            }
            Some(s) => {
                hi = mid;
                s_hi = Some(s);
                if side == -1 {
                    s_lo *= 0.5;
                }
                side = -1;
                if s == 0.0 {
                    return mid;
                }
            }
            None => {
                hi = mid;
                s_hi = None;
                side = 0;
            }
        }
        if s_lo <= 1e-12 * s0 || hi - lo <= 1e-15 * max.max(1.0) {
            break;
        }
    }
    lo
}

fn frank_wolfe(
    polytope: &DesignPolytope,
    crit: &dyn InformationCriterion,
    start: DMatrix<f64>,
    config: &SolverConfig,
    stopping_gap: f64,
    iteration_offset: usize,
    log: &mut Vec<IterationLog>,
) -> Result<RunOutcome> {
    let mut atoms: Vec<(DMatrix<f64>, f64)> = vec![(start.clone(), 1.0)];
    let mut x = start;
    let mut away_enabled = false;
    let mut best_gap = f64::INFINITY;
    let mut last_halving = 0usize;
    let mut gap = f64::INFINITY;

    for it in 0..config.max_iters {
        let (value, grad) = evaluate_weights(crit, &x)
            .ok_or(DesignError::SingularIterate(iteration_offset + it))?;
        let s = polytope.linear_maximizer(&grad)?;
        let fw_dir = &s - &x;
        gap = inner(&grad, &fw_dir);
        if gap < best_gap * 0.5 || best_gap.is_infinite() {
            best_gap = gap;
            last_halving = it;
        }
        if gap <= stopping_gap {
            return Ok(RunOutcome {
                weights: x,
                gap,
                iterations: it,
                converged: true,
                log: Vec::new(),
            });
        }
        if !away_enabled && it - last_halving >= config.stall_window {
            away_enabled = true;
        }

        let (step, kind) = match config.step_rule {
            StepRule::Harmonic => {
                let g = 2.0 / (it as f64 + 3.0);
                for a in atoms.iter_mut() {
                    a.1 *= 1.0 - g;
                }
                push_atom(&mut atoms, s, g);
                x += &fw_dir * g;
                (g, StepKind::Toward)
            }
            StepRule::ExactLineSearch => {
                let away = if away_enabled && atoms.len() > 1 {
                    atoms
                        .iter()
                        .enumerate()
                        .map(|(j, (a, _))| (j, inner(&grad, a)))
                        .min_by(|p, q| p.1.total_cmp(&q.1))
                } else {
                    None
                };
                let away_gain = away.map(|(j, ga)| (j, inner(&grad, &x) - ga));
                match away_gain {
                    Some((j, gain)) if gain > gap => {
                        let alpha = atoms[j].1;
                        let max = alpha / (1.0 - alpha);
                        let d = &x - &atoms[j].0;
                        let g = line_search(crit, &x, &d, max);
                        for a in atoms.iter_mut() {
                            a.1 *= 1.0 + g;
                        }
                        atoms[j].1 -= g;
                        let kind = if g >= max * (1.0 - 1e-12) {
                            atoms.remove(j);
                            StepKind::Drop
                        } else {
                            StepKind::Away
                        };
                        x += d * g;
                        (g, kind)
                    }
                    _ => {
                        let g = line_search(crit, &x, &fw_dir, 1.0);
                        for a in atoms.iter_mut() {
                            a.1 *= 1.0 - g;
                        }
                        atoms.retain(|a| a.1 > 0.0);
                        push_atom(&mut atoms, s, g);
                        x += &fw_dir * g;
                        (g, StepKind::Toward)
                    }
                }
            }
        };
        // re-project onto the hull of the active atoms
        if !atoms.is_empty() && kind != StepKind::Toward || it % 64 == 0 {
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            let mut y = DMatrix::zeros(x.nrows(), x.ncols());
            for (a, w) in &atoms {
                y += a * (w / total);
            }
            x = y;
        }
        log.push(IterationLog {
            iteration: iteration_offset + it,
            objective: value,
            gap,
            step,
            kind,
        });
    }
    Ok(RunOutcome {
        weights: x,
        gap,
        iterations: config.max_iters,
        converged: false,
        log: Vec::new(),
    })
}

fn push_atom(atoms: &mut Vec<(DMatrix<f64>, f64)>, s: DMatrix<f64>, weight: f64) {
    if weight <= 0.0 {
        return;
    }
    if let Some(a) = atoms
        .iter_mut()
        .find(|a| linalg::max_abs_diff(&a.0, &s) <= 1e-14)
    {
        a.1 += weight;
    } else {
        atoms.push((s, weight));
    }
}

/// Criteria solved in sequence, each with its own stopping gap. The soft-min
/// stages stop at their smoothing error `ln(n)/β` since solving further
/// would not move the true λ_min by more than that.
fn stages_for(
    objective: &Objective,
    n: usize,
    stopping_gap: f64,
) -> Vec<(Arc<dyn InformationCriterion>, f64)> {
    match objective {
        Objective::E => E_TEMPERATURES
            .iter()
            .map(|&beta| {
                let crit =
                    Arc::new(SmoothedMinEigenvalue { beta }) as Arc<dyn InformationCriterion>;
                (crit, stopping_gap.max((n as f64).ln() / beta))
            })
            .collect(),
        _ => criterion_for(objective)
            .into_iter()
            .map(|c| (c, stopping_gap))
            .collect(),
    }
}

fn criterion_for(objective: &Objective) -> Vec<Arc<dyn InformationCriterion>> {
    match objective {
        Objective::A => vec![Arc::new(ACriterion)],
        Objective::D => vec![Arc::new(DCriterion)],
        Objective::E => E_TEMPERATURES
            .iter()
            .map(|&beta| Arc::new(SmoothedMinEigenvalue { beta }) as Arc<dyn InformationCriterion>)
            .collect(),
        Objective::Custom(c) => vec![c.clone()],
    }
}

fn single_run(
    polytope: &DesignPolytope,
    objective: &Objective,
    start: DMatrix<f64>,
    config: &SolverConfig,
) -> Result<RunOutcome> {
    let stages = stages_for(objective, polytope.spec().n(), config.stopping_gap);
    let mut x = start;
    let mut log = Vec::new();
    let mut total_iters = 0;
    let mut outcome = None;
    for (crit, stage_gap) in &stages {
        if evaluate_weights(crit.as_ref(), &x).is_none() {
            // restart from the cell barycenter when the start is singular
            let fallback = polytope.interior_point()?;
            if evaluate_weights(crit.as_ref(), &fallback).is_none() {
                return Err(DesignError::SingularIterate(total_iters));
            }
            x = fallback;
        }
        let mut run = frank_wolfe(
            polytope,
            crit.as_ref(),
            x,
            config,
            *stage_gap,
            total_iters,
            &mut log,
        )?;
        total_iters += run.iterations;
        x = run.weights.clone();
        run.iterations = total_iters;
        outcome = Some(run);
    }
    let mut run = outcome.expect("at least one stage");
    run.log = log;
    Ok(run)
}

fn start_point(polytope: &DesignPolytope, seed: Option<u64>) -> Result<DMatrix<f64>> {
    let base = polytope.interior_point()?;
    match seed {
        None => Ok(base),
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let random = polytope.sample_weights(&mut rng, 4)?;
            Ok((base + random) * 0.5)
        }
    }
}

/// Maximizes `objective` over `polytope` with Frank–Wolfe; each linear
/// subproblem is solved exactly by the simplex routine.
pub fn maximize(
    polytope: &DesignPolytope,
    objective: &Objective,
    config: &SolverConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    // surfaces EmptyPolytope before any work
    polytope.linear_maximizer(&DMatrix::zeros(
        polytope.spec().n() + 1,
        polytope.spec().t(),
    ))?;

    let seeds: Vec<Option<u64>> = if config.seeds.is_empty() {
        vec![None]
    } else {
        config.seeds.iter().copied().map(Some).collect()
    };
    let runs: Vec<Result<RunOutcome>> = seeds
        .par_iter()
        .map(|seed| single_run(polytope, objective, start_point(polytope, *seed)?, config))
        .collect();

    let mut best: Option<(usize, RunOutcome, f64)> = None;
    for (idx, run) in runs.into_iter().enumerate() {
        let run = run?;
        let score = final_value(objective, &run.weights);
        if best.as_ref().is_none_or(|b| score > b.2) {
            best = Some((idx, run, score));
        }
    }
    let (idx, run, mut value) = best.expect("at least one run");
    let mut design = Design::new(polytope.spec(), clean(&run.weights))?;
    let certification = match objective {
        Objective::E => {
            for radius in SNAP_RADII {
                if let Some(snapped) = snap_rational(polytope, design.weights(), radius) {
                    let v = final_value(objective, snapped.weights());
                    if v >= value {
                        design = snapped;
                        value = v;
                        break;
                    }
                }
            }
            Some(certify_e_default(&design)?)
        }
        _ => None,
    };
    // for E the exact normality gap replaces the surrogate's
    let (gap, converged) = match &certification {
        Some(cert) => (cert.worst_gap.max(0.0), cert.is_certified()),
        None => (run.gap, run.converged),
    };
    Ok(OptimizationResult {
        design,
        value,
        gap,
        iterations: run.iterations,
        converged,
        log: run.log,
        seed_index: if config.seeds.is_empty() {
            None
        } else {
            Some(idx)
        },
        certification,
    })
}

fn final_value(objective: &Objective, w: &DMatrix<f64>) -> f64 {
    let c = contrast_information_from_weights(w);
    match objective {
        Objective::E => linalg::min_eigenvalue(&c),
        _ => criterion_for(objective)
            .last()
            .and_then(|crit| crit.evaluate(&c))
            .map_or(f64::NEG_INFINITY, |(v, _)| v),
    }
}

/// Radii, tried in order, within which an E iterate is replaced by the
/// simplest rationals; a snap is kept only if λ_min does not decrease.
pub const SNAP_RADII: [f64; 4] = [1e-7, 1e-6, 1e-5, 1e-4];

/// Simplest fraction in `[lo, hi]`, for `0 ≤ lo ≤ hi`.
fn simplest_between(lo: f64, hi: f64, depth: usize) -> Option<Rational> {
    let c = lo.ceil();
    if c <= hi {
        return Some(Rational::from_integer(c as i128));
    }
    if depth == 0 {
        return None;
    }
    let a = lo.floor();
    let inner = simplest_between(1.0 / (hi - a), 1.0 / (lo - a), depth - 1)?;
    if *inner.numer() == 0 {
        return None;
    }
    Some(Rational::from_integer(a as i128) + inner.recip())
}

/// Replaces every weight by the simplest fraction within `radius`, keeping
/// the result only if it is an exact member of the polytope.
pub fn snap_rational(polytope: &DesignPolytope, w: &DMatrix<f64>, radius: f64) -> Option<Design> {
    let spec = polytope.spec();
    let mut exact = vec![vec![Rational::from_integer(0); spec.t()]; spec.n() + 1];
    for k in 0..spec.t() {
        for i in 0..=spec.n() {
            if spec.allowed(i, k) {
                let x = w[(i, k)];
                exact[i][k] = simplest_between((x - radius).max(0.0), x + radius, 40)?;
            }
        }
    }
    let design = Design::from_rationals(spec, exact).ok()?;
    polytope
        .extra_equalities()
        .iter()
        .all(|eq| (eq.evaluate(design.weights()) - eq.rhs).abs() <= 1e-12)
        .then_some(design)
}

/// Clears round-off below 1e-15 so structural zeros stay exact.
fn clean(w: &DMatrix<f64>) -> DMatrix<f64> {
    w.map(|v| if v.abs() < 1e-15 { 0.0 } else { v })
}
