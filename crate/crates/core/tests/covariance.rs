use feynwick::covariance::{
    build_dgff_green, build_fractional, build_gradient_covariance, build_membrane, continuum_green_box, laplacian, validate_spd,
    BuiltCovariance, CovarianceError, FieldSpec, LatticeDomain,
};
use feynwick::matrix::Matrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn residual(l: &DMatrix<f64>, g: &Matrix<f64>) -> f64 {
    let n = l.nrows();
    (l * g.to_nalgebra() - DMatrix::<f64>::identity(n, n)).amax()
}

fn domain() -> impl Strategy<Value = LatticeDomain> {
    (2usize..=3, 1usize..=4, 1usize..=4, 1usize..=3).prop_map(|(d, a, b, c)| {
        let sides = if d == 2 { vec![a, b] } else { vec![a, b, c] };
        LatticeDomain::new(sides).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn builders_are_spd_and_invert_their_operator(dom in domain(), alpha in 0.3f64..3.0) {
        let l = laplacian(&dom);
        let dgff = build_dgff_green(&dom).unwrap();
        prop_assert!(residual(&l, dgff.matrix()) < 1e-6);
        let membrane = build_membrane(&dom).unwrap();
        prop_assert!(residual(&(&l * &l), membrane.matrix()) < 1e-6);
        let frac = build_fractional(&dom, alpha).unwrap();
        let eig = l.clone().symmetric_eigen();
        let l_alpha = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.powf(alpha))) * eig.eigenvectors.transpose();
        prop_assert!(residual(&l_alpha, frac.matrix()) < 1e-6);
        for cov in [&dgff, &membrane, &frac] {
            prop_assert!(validate_spd(cov.matrix().clone()).is_ok());
        }
    }

    #[test]
    fn fractional_matches_direct_builders(dom in domain()) {
        let one = build_fractional(&dom, 1.0).unwrap();
        let two = build_fractional(&dom, 2.0).unwrap();
        prop_assert!(one.matrix().max_abs_diff(build_dgff_green(&dom).unwrap().matrix()) < 1e-8);
        prop_assert!(two.matrix().max_abs_diff(build_membrane(&dom).unwrap().matrix()) < 1e-8);
    }

    #[test]
    fn spectral_entries_match_dense(dom in domain(), alpha in prop::sample::select(vec![1.0, 1.5, 2.0])) {
        let spec = FieldSpec::from_value(serde_json::json!({"kind": "fractional", "d": dom.dimension(), "sides": dom.sides(), "alpha": alpha})).unwrap();
        let dense = build_fractional(&dom, alpha).unwrap();
        let all: Vec<usize> = (0..dom.site_count()).collect();
        prop_assert!(spec.covariance_at(&all).unwrap().max_abs_diff(dense.matrix()) < 1e-10);
    }

    #[test]
    fn gradient_covariance_is_difference_of_green(dom in domain(), axis in 0usize..2) {
        let grad = build_gradient_covariance(&dom, &[axis]).unwrap();
        let n = dom.site_count();
        let mut diff = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            diff[(x, x)] = -1.0;
            if let Some(y) = dom.step(x, axis) {
                diff[(x, y)] = 1.0;
            }
        }
        let g = build_dgff_green(&dom).unwrap().matrix().to_nalgebra();
        let expected = Matrix::from_nalgebra(&(&diff * g * diff.transpose()));
        prop_assert!(grad.matrix().max_abs_diff(&expected) < 1e-10);
        let spec = FieldSpec::from_value(serde_json::json!({"kind": "dgff-gradient", "d": dom.dimension(), "sides": dom.sides(), "directions": [axis]})).unwrap();
        let all: Vec<usize> = (0..n).collect();
        prop_assert!(spec.covariance_at(&all).unwrap().max_abs_diff(grad.matrix()) < 1e-10);
    }
}

#[test]
fn field_spec_json_paths() {
    let exact = FieldSpec::from_json(r#"{"kind": "explicit", "matrix": [[2, "1/3"], ["1/3", 1]]}"#).unwrap();
    assert!(matches!(exact.build().unwrap(), BuiltCovariance::Exact(_)));
    let asym = FieldSpec::from_json(r#"{"kind": "explicit", "matrix": [[2, 1], [0, 1]]}"#).unwrap();
    assert!(matches!(asym.build(), Err(CovarianceError::Asymmetric { .. })));
    let indefinite = FieldSpec::from_json(r#"{"kind": "explicit", "matrix": [[1, 2], [2, 1]]}"#).unwrap();
    assert!(matches!(indefinite.build(), Err(CovarianceError::NotPositiveDefinite { .. })));
    let lattice = FieldSpec::from_json(r#"{"kind": "membrane", "d": 2, "sides": [3]}"#).unwrap();
    let built = lattice.build().unwrap();
    assert_eq!(built.labels().len(), 9);
    assert_eq!(built.labels()[0], "1_1");
    assert!(FieldSpec::from_json(r#"{"kind": "dgff", "d": 2}"#).is_err());
    assert!(FieldSpec::from_json(r#"{"kind": "fractional", "d": 2, "sides": [3], "alpha": -1}"#).is_err());
    assert!(FieldSpec::from_json(r#"{"kind": "dgff", "d": 2, "sides": [3], "colour": 1}"#).is_err());
}

#[test]
fn continuum_green_is_symmetric_and_positive() {
    let x = [0.3, 0.4, 0.6];
    let y = [0.7, 0.45, 0.5];
    let a = continuum_green_box(3, &x, &y, 64).unwrap();
    let b = continuum_green_box(3, &y, &x, 64).unwrap();
    assert!(a > 0.0);
    assert!((a - b).abs() < 1e-12);
}
