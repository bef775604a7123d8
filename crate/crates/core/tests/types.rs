use nalgebra::{DMatrix, DVector};

use orthsc::{Dictionary, Error, LayerStack, Layer, RegCoeffs, Sample, SignPolicy};

#[test]
fn dictionary_construction_rules() {
    let mut nan = DMatrix::identity(2, 2);
    nan[(0, 1)] = f64::NAN;
    assert!(Dictionary::from_matrix(nan).is_err());
    let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.8]);
    assert!(matches!(Dictionary::orthogonal(skew.clone()), Err(Error::NotOrthogonal { .. })));
    assert!(Dictionary::unit_norm(skew.clone()).is_ok());
    assert!(!Dictionary::from_matrix(skew).unwrap().is_orthogonalized());
    assert!(Dictionary::from_matrix(DMatrix::identity(3, 2)).unwrap().is_orthogonalized());
    assert!(Dictionary::unit_norm(DMatrix::from_element(2, 1, 1.0)).is_err());
    assert!(Dictionary::orthogonal(DMatrix::identity(2, 3)).is_err());
}

#[test]
fn reg_sign_rules() {
    assert!(RegCoeffs::shared(0.0, SignPolicy::Free).is_ok());
    assert!(RegCoeffs::shared(-0.1, SignPolicy::Free).is_err());
    assert!(RegCoeffs::shared(0.0, SignPolicy::NonNegativeOnly).is_err());
    assert!(RegCoeffs::shared(f64::NAN, SignPolicy::Free).is_err());
    assert!(RegCoeffs::per_unit(DVector::from_vec(vec![-1.0, 2.0]), SignPolicy::Free).is_ok());
    assert!(RegCoeffs::per_unit(DVector::from_vec(vec![-1.0, 2.0]), SignPolicy::NonNegativeOnly).is_err());
}

#[test]
fn samples_reject_bad_values() {
    assert!(Sample::from_slice(&[]).is_err());
    assert!(Sample::from_slice(&[1.0, f64::INFINITY]).is_err());
}

#[test]
fn stack_dimension_chain() {
    let layer = |m: usize, n: usize| Layer {
        dictionary: Dictionary::orthogonal(DMatrix::identity(m, n)).unwrap(),
        reg: RegCoeffs::per_unit(DVector::zeros(n), SignPolicy::Free).unwrap(),
    };
    assert!(LayerStack::new(vec![layer(4, 3), layer(3, 2)], DMatrix::zeros(2, 2), DVector::zeros(2)).is_ok());
    assert!(LayerStack::new(vec![layer(4, 3), layer(2, 2)], DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
    assert!(LayerStack::new(vec![layer(4, 3)], DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
}
