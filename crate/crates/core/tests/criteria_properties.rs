use dosedesign::constructors::{highest_dose_extended_senn, senn_design, uniformly_extended_senn};
use dosedesign::criteria::{
    a_criterion, avg_contrast_coefficients, c_variance, contrast_covariance, e_criterion, evaluate,
    lv_variances, mv_criterion,
};
use dosedesign::design::{contrast_information, tau_information};
use dosedesign::linalg::sorted_eigen;
use dosedesign::sampling::random_design;
use dosedesign::{DesignKind, ModelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Roots of the characteristic polynomial of a symmetric 2×2 or 3×3 matrix,
/// ascending, from the closed-form quadratic and trigonometric cubic.
fn char_poly_roots(m: &DMatrix<f64>) -> Vec<f64> {
    match m.nrows() {
        2 => {
            let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let mean = 0.5 * (a + d);
            let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
            vec![mean - r, mean + r]
        }
        3 => {
            let q = m.trace() / 3.0;
            let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
            let p2 = (0..3).map(|i| (m[(i, i)] - q).powi(2)).sum::<f64>() + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            if p == 0.0 {
                return vec![q; 3];
            }
            let b = (m - DMatrix::identity(3, 3) * q) / p;
            let phi = (b.determinant() / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
            let hi = q + 2.0 * p * phi.cos();
            let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            vec![lo, 3.0 * q - hi - lo, hi]
        }
        _ => unreachable!(),
    }
}

fn named_designs() -> Vec<dosedesign::Design> {
    (2..=8)
        .flat_map(|n| {
            [
                senn_design(n).unwrap(),
                uniformly_extended_senn(n).unwrap(),
                highest_dose_extended_senn(n).unwrap(),
            ]
        })
        .collect()
}

#[test]
fn eigen_reconstruction_on_constructed_designs() {
    for d in named_designs() {
        for m in [contrast_information(&d).matrix, tau_information(&d).matrix] {
            let (vals, vecs) = sorted_eigen(&m);
            let rebuilt = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
            assert!((rebuilt - &m).amax() <= 1e-10);
        }
    }
}

#[test]
fn eigenvalues_match_characteristic_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 2..=3 {
        for kind in [DesignKind::Standard, DesignKind::Extended] {
            let spec = ModelSpec::new(n, kind).unwrap();
            let mut designs = vec![random_design(spec, &mut rng), random_design(spec, &mut rng)];
            designs.push(match kind {
                DesignKind::Standard => senn_design(n).unwrap(),
                DesignKind::Extended => highest_dose_extended_senn(n).unwrap(),
            });
            for d in designs {
                let c = contrast_information(&d).matrix;
                let (vals, _) = sorted_eigen(&c);
                for (a, b) in vals.iter().zip(char_poly_roots(&c)) {
                    assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn standard_designs_never_beat_senn() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 2..=4 {
        let spec = ModelSpec::standard(n).unwrap();
        let bound = 4.0 * n as f64;
        for _ in 0..200 {
            let d = random_design(spec, &mut rng);
            assert!(e_criterion(&d).unwrap() <= 1.0 / bound + 1e-9);
            assert!(mv_criterion(&d).unwrap() >= bound - 1e-9);
            for v in lv_variances(&d).unwrap() {
                assert!(v >= bound - 1e-9);
            }
        }
    }
}

#[test]
fn senn_minimizes_worst_contrast_variance_at_n2() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let senn_worst = contrast_covariance(&senn_design(2).unwrap())
        .unwrap()
        .symmetric_eigenvalues()
        .max();
    let spec = ModelSpec::standard(2).unwrap();
    let directions: Vec<DVector<f64>> = (0..10_000)
        .map(|_| {
            let v = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            v.normalize()
        })
        .collect();
    for _ in 0..50 {
        let cov = contrast_covariance(&random_design(spec, &mut rng)).unwrap();
        let worst = directions
            .iter()
            .map(|x| x.dot(&(&cov * x)))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(senn_worst <= worst + 1e-9, "{senn_worst} > {worst}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn variance_orderings(n in 2usize..=6, extended in any::<bool>(), seed in any::<u64>()) {
        let kind = if extended { DesignKind::Extended } else { DesignKind::Standard };
        let d = random_design(ModelSpec::new(n, kind).unwrap(), &mut ChaCha8Rng::seed_from_u64(seed));
        let r = evaluate(&d).unwrap();
        prop_assert!(r.e > 0.0);
        prop_assert!(r.mv >= r.a / n as f64 - 1e-12 * r.a);
        let largest = contrast_covariance(&d).unwrap().symmetric_eigenvalues().max();
        prop_assert!(largest >= r.mv * (1.0 - 1e-12));
        prop_assert!((1.0 / r.e - largest).abs() <= 1e-8 * largest);
        let via_c = c_variance(&d, &avg_contrast_coefficients(&d.spec())).unwrap();
        prop_assert!((via_c - r.avg_contrast).abs() <= 1e-8 * r.avg_contrast.max(1.0));
        prop_assert!((a_criterion(&d).unwrap() - r.a).abs() <= 1e-12 * r.a);
    }

    #[test]
    fn final_stage_is_the_full_design_variance(n in 2usize..=5, seed in any::<u64>()) {
        // the last LV entry of an extended design uses every cohort
        let d = random_design(ModelSpec::extended(n).unwrap(), &mut ChaCha8Rng::seed_from_u64(seed));
        let lv = lv_variances(&d).unwrap();
        let cov = contrast_covariance(&d).unwrap();
        prop_assert_eq!(lv.len(), n + 1);
        prop_assert!((lv[n] - cov[(n - 1, n - 1)]).abs() <= 1e-8 * cov[(n - 1, n - 1)]);
        prop_assert!(lv[n - 1] >= lv[n] - 1e-9);
    }
}
