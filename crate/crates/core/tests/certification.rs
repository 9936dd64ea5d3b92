use dosedesign::constructors::{highest_dose_extended_senn, senn_design, uniformly_extended_senn};
use dosedesign::criteria::{dose_contrast_coefficients, e_criterion};
use dosedesign::design::{moment_matrix, tau_information};
use dosedesign::error::GInverseBlock;
use dosedesign::linalg::{is_generalized_inverse, pinv_symmetric};
use dosedesign::polytope::barycenter;
use dosedesign::sampling::{perturb, random_design};
use dosedesign::verify::*;
use dosedesign::{Design, DesignError, DesignKind, ModelSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_equality_everywhere(r: &CertificationResult) {
    assert!(r.is_certified(), "{r:?}");
    assert!(r.worst_gap.abs() <= 1e-10, "worst gap {}", r.worst_gap);
    assert!(r.min_gap.abs() <= 1e-10, "min gap {}", r.min_gap);
}

#[test]
fn e_certificates_hold_with_equality() {
    for n in 2..=6 {
        for d in [senn_design(n).unwrap(), uniformly_extended_senn(n).unwrap()] {
            let g = explicit_block_ginverse(&d).unwrap();
            assert_eq!(g.construction(), GInverseConstruction::BlockFormula);
            let r = certify_e_optimality(&d, &g, &uniform_e_weight(n)).unwrap();
            assert_equality_everywhere(&r);
            assert_equality_everywhere(&certify_e_default(&d).unwrap());
        }
    }
}

#[test]
fn e_certificate_accepts_min_eigenvector_weight() {
    for n in 2..=5 {
        let d = uniformly_extended_senn(n).unwrap();
        let h = DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt());
        let r = certify_e_optimality(&d, &default_ginverse(&d).unwrap(), &(&h * h.transpose()))
            .unwrap();
        assert!(r.is_certified());
    }
}

#[test]
fn latest_dose_certificates() {
    for n in 2..=6 {
        let s = senn_design(n).unwrap();
        let c = dose_contrast_coefficients(&s.spec(), n);
        let r = certify_c_optimality(&s, &c, &explicit_block_ginverse(&s).unwrap()).unwrap();
        assert_equality_everywhere(&r);
        assert!((r.rhs - 4.0 * n as f64).abs() < 1e-9);

        let h = highest_dose_extended_senn(n).unwrap();
        let c = dose_contrast_coefficients(&h.spec(), n);
        let r = certify_c_default(&h, &c).unwrap();
        assert!(r.is_certified(), "{r:?}");
        assert!((r.rhs - 2.0 * (n + 1) as f64).abs() < 1e-9);
    }
}

#[test]
fn suboptimal_designs_are_rejected() {
    let spec = ModelSpec::standard(4).unwrap();
    let uniform = Design::new(spec, barycenter(&spec)).unwrap();
    let c = dose_contrast_coefficients(&spec, 4);
    let r = certify_c_optimality(&uniform, &c, &moore_penrose_ginverse(&uniform)).unwrap();
    assert!(!r.is_certified());
    assert!(r.worst_gap > 0.0);
    assert!(dosedesign::criteria::c_variance(&senn_design(4).unwrap(), &c).unwrap() < r.rhs);

    // cohort 2 split away from the optimal replication proportions
    let w = DMatrix::from_row_slice(3, 2, &[0.25, 0.125, 0.25, 0.125, 0.0, 0.25]);
    let d = Design::new(ModelSpec::standard(2).unwrap(), w).unwrap();
    assert!(e_criterion(&d).unwrap() < 0.125);
    assert!(!certify_e_default(&d).unwrap().is_certified());

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let p = perturb(&senn_design(4).unwrap(), 0.01, &mut rng).unwrap();
        let r = certify_e_default(&p).unwrap();
        assert!(!r.is_certified());
        assert!(r.witness_vertex_index.is_some());
    }
}

#[test]
fn witness_is_smallest_maximizing_vertex() {
    let spec = ModelSpec::standard(3).unwrap();
    let d = Design::new(spec, barycenter(&spec)).unwrap();
    let c = dose_contrast_coefficients(&spec, 3);
    let g = moore_penrose_ginverse(&d);
    let r = certify_c_optimality(&d, &c, &g).unwrap();
    let gc = g.matrix() * &c;
    let vertices = enumerate_vertices(spec).unwrap();
    let values = vertex_lhs_values(&vertices, &(&gc * gc.transpose()));
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = values.iter().position(|&v| v >= max - 1e-12).unwrap();
    assert_eq!(r.witness_vertex_index, Some(first));
    assert_eq!(r.witness_treatments, Some(vertices.treatments(first)));
}

#[test]
fn supplied_blocks_are_validated() {
    let d = senn_design(3).unwrap();
    let m = moment_matrix(&d);
    let p = d.n() + 1;
    let m22 = m.view((p, p), (d.t() + 1, d.t() + 1)).into_owned();
    let good_tau = pinv_symmetric(&tau_information(&d).matrix);
    let good_m22 = pinv_symmetric(&m22);
    assert!(block_generalized_inverse(&d, &good_tau, &good_m22).is_ok());
    assert!(matches!(
        block_generalized_inverse(&d, &DMatrix::zeros(p, p), &good_m22),
        Err(DesignError::NotAGInverse(GInverseBlock::Tau))
    ));
    assert!(matches!(
        block_generalized_inverse(&d, &good_tau, &DMatrix::zeros(d.t() + 1, d.t() + 1)),
        Err(DesignError::NotAGInverse(GInverseBlock::Cohort))
    ));
}

#[test]
fn invalid_e_weights() {
    let d = senn_design(3).unwrap();
    let g = default_ginverse(&d).unwrap();
    for bad in [
        DMatrix::identity(3, 3),
        DMatrix::from_diagonal_element(2, 2, 0.5),
        DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.5, -0.5, 0.0])),
    ] {
        assert!(matches!(
            certify_e_optimality(&d, &g, &bad),
            Err(DesignError::InvalidWeightMatrix(_))
        ));
    }
}

#[test]
fn vertex_counts_follow_allowed_treatments() {
    for n in 2..=7 {
        let std = enumerate_vertices(ModelSpec::standard(n).unwrap()).unwrap();
        let expected: usize = (1..=n).map(|k| k + 1).product();
        assert_eq!(std.len(), expected);
        let ext = enumerate_vertices(ModelSpec::extended(n).unwrap()).unwrap();
        assert_eq!(ext.len(), expected * (n + 1));
    }
    let v = enumerate_vertices(ModelSpec::extended(3).unwrap()).unwrap();
    for idx in [0, 7, v.len() - 1] {
        assert!(v
            .design(idx)
            .weights()
            .iter()
            .all(|&x| x == 0.0 || x == 0.25));
    }
}

fn random_spec_design(n: usize, extended: bool, seed: u64) -> Design {
    let kind = if extended {
        DesignKind::Extended
    } else {
        DesignKind::Standard
    };
    random_design(
        ModelSpec::new(n, kind).unwrap(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constructed_inverses_are_generalized_inverses(n in 2usize..=5, extended in any::<bool>(), seed in any::<u64>()) {
        let d = random_spec_design(n, extended, seed);
        let m = moment_matrix(&d);
        let mp = moore_penrose_ginverse(&d);
        prop_assert!(is_generalized_inverse(&m, mp.matrix(), GINVERSE_TOL));
        let blocks = default_ginverse(&d).unwrap();
        prop_assert!(is_generalized_inverse(&m, blocks.matrix(), GINVERSE_TOL));
    }

    /// The normality LHS is linear in the design, so at any design it equals
    /// the vertex values mixed with product weights `Π_k t·ξ(v_k, k)`.
    #[test]
    fn vertex_check_covers_the_polytope(n in 2usize..=3, extended in any::<bool>(), seed in any::<u64>()) {
        let d = random_spec_design(n, extended, seed);
        let reference = if extended { uniformly_extended_senn(n).unwrap() } else { senn_design(n).unwrap() };
        let g = default_ginverse(&reference).unwrap();
        let c = dose_contrast_coefficients(&d.spec(), n);
        let gc = g.matrix() * c;
        let w = &gc * gc.transpose();
        let vertices = enumerate_vertices(d.spec()).unwrap();
        let values = vertex_lhs_values(&vertices, &w);
        let t = d.t() as f64;
        let mixed: f64 = (0..vertices.len())
            .map(|idx| {
                let weight: f64 = vertices
                    .treatments(idx)
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| t * d.weight(i, k))
                    .product();
                weight * values[idx]
            })
            .sum();
        let direct = normality_lhs(d.weights(), &w);
        prop_assert!((mixed - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        for idx in [0, vertices.len() / 2, vertices.len() - 1] {
            let lhs = normality_lhs(vertices.design(idx).weights(), &w);
            prop_assert!((lhs - values[idx]).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }
}
