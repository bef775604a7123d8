use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use orthsc::data::{apply_whitening, extract_patches_from, fit_whitening, synth::dead_leaves_set};
use orthsc::learning::*;
use orthsc::types::orthogonality_error;
use orthsc::{Exec, RegCoeffs, Sample, SignPolicy};

fn patches(count: usize) -> orthsc::data::PatchSet {
    let imgs = dead_leaves_set(40, 40, 2, 9).unwrap();
    let p = extract_patches_from(&imgs, 5, count, 1).unwrap();
    apply_whitening(&fit_whitening(&p, 1e-3).unwrap(), &p).unwrap()
}

proptest! {
    #[test]
    fn orthogonalize_is_orthonormal_and_idempotent(m in 1usize..10, extra in 0usize..3, raw in prop::collection::vec(-1.0f64..1.0, 100)) {
        let n = m.saturating_sub(extra).max(1);
        let a = DMatrix::from_iterator(m, n, raw.iter().copied().cycle().take(m * n)) + DMatrix::identity(m, n) * 2.5;
        let once = svd_orthogonalize(&a).unwrap();
        prop_assert!(once.orthogonality_error() <= 1e-8);
        prop_assert!(once.is_orthogonalized());
        let twice = svd_orthogonalize(once.matrix()).unwrap();
        prop_assert!((once.matrix() - twice.matrix()).amax() <= 1e-8);
    }
}

#[test]
fn orthogonalize_examples() {
    let d = svd_orthogonalize(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).unwrap();
    assert!((d.matrix() - DMatrix::identity(2, 2)).amax() < 1e-15);
    let wide = DMatrix::from_element(2, 3, 1.0);
    assert!(svd_orthogonalize(&wide).is_err());
    let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    assert!(matches!(svd_orthogonalize(&rank1), Err(orthsc::Error::RankDeficient { .. })));
}

#[test]
fn gradient_matches_finite_differences() {
    let data = patches(300);
    let phi = init_dictionary(25, 10, 3).unwrap();
    for reg in [
        RegCoeffs::shared(0.1, SignPolicy::Free).unwrap(),
        RegCoeffs::per_unit(DVector::from_fn(10, |i, _| 0.05 + 0.02 * i as f64), SignPolicy::NonNegativeOnly).unwrap(),
    ] {
        let g = dict_gradient(&phi, &data, &reg).unwrap();
        let fd = finite_diff_gradient(&phi, &data, &reg, 1e-6).unwrap();
        let rel = (&g - &fd).norm() / fd.norm();
        assert!(rel <= 1e-4, "relative error {rel}");
    }
}

#[test]
fn parallel_and_sequential_gradients_are_identical() {
    let data = patches(500);
    let phi = init_dictionary(25, 20, 4).unwrap();
    let reg = RegCoeffs::shared(0.1, SignPolicy::Free).unwrap();
    let a = dict_gradient_with(Exec::Sequential, phi.matrix(), &data, &reg).unwrap();
    let b = dict_gradient_with(Exec::Parallel, phi.matrix(), &data, &reg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn small_steps_decrease_loss_on_fixed_batch() {
    let data = patches(200);
    let samples = data.to_samples();
    let reg = RegCoeffs::shared(0.1, SignPolicy::Free).unwrap();
    let mut phi = init_dictionary(25, 16, 5).unwrap();
    let mut decreased = 0;
    let steps = 100;
    for _ in 0..steps {
        let before = recon_loss(&phi, samples.as_slice(), &reg).unwrap();
        phi = train_step(&phi, samples.as_slice(), &reg, 1e-3, true).unwrap();
        let after = recon_loss(&phi, samples.as_slice(), &reg).unwrap();
        decreased += usize::from(after < before);
        assert!(phi.orthogonality_error() <= 1e-8);
    }
    assert!(decreased * 100 >= 95 * steps, "{decreased} of {steps}");
}

#[test]
fn training_is_deterministic_and_keeps_constraint() {
    let data = patches(400);
    let mut cfg = TrainConfig::new(RegCoeffs::shared(0.1, SignPolicy::Free).unwrap(), 17);
    cfg.epochs = 3;
    cfg.batch_size = 50;
    let init = init_dictionary(25, 20, 8).unwrap();
    let a = train_dictionary(&init, &data, &cfg).unwrap();
    let b = train_dictionary(&init, &data, &cfg).unwrap();
    assert_eq!(a.dictionary, b.dictionary);
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.loss_curve.len(), 4);
    assert!(a.max_orthogonality_error <= 1e-8);
    assert!(a.final_loss() < a.initial_loss());

    cfg.orthogonalize_each_step = false;
    let c = train_dictionary(&init_dictionary(25, 40, 8).unwrap(), &data, &cfg).unwrap();
    for j in 0..40 {
        assert!((c.dictionary.matrix().column(j).norm() - 1.0).abs() < 1e-10);
    }
    assert!(orthogonality_error(c.dictionary.matrix()) > 1e-3);
}

#[test]
fn divergence_is_reported() {
    // residual energy outside span(Φ) overflows
    let samples: Vec<Sample> = (0..10).map(|i| Sample::from_slice(&[1.0, 1e200 * (i + 1) as f64]).unwrap()).collect();
    let cfg = TrainConfig::new(RegCoeffs::shared(0.1, SignPolicy::Free).unwrap(), 1);
    let init = orthsc::Dictionary::orthogonal(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
    let r = train_dictionary(&init, samples.as_slice(), &cfg);
    assert!(matches!(r, Err(orthsc::Error::Diverged { .. })), "{r:?}");
}

#[test]
fn spectral_centroid_orders_frequencies() {
    let side = 8;
    let wave = |k: f64| -> Vec<f64> {
        (0..side * side).map(|i| (std::f64::consts::TAU * k * (i % side) as f64 / side as f64).cos()).collect()
    };
    let low = spectral_centroid(&wave(1.0), side).unwrap();
    let high = spectral_centroid(&wave(4.0), side).unwrap();
    assert!((low - 0.25).abs() < 1e-9, "{low}");
    assert!((high - 1.0).abs() < 1e-9, "{high}");
}
