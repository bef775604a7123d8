use nalgebra::DVector;
use proptest::prelude::*;

use orthsc::sconv::*;
use orthsc::{Dictionary, FeatureMap, RegCoeffs, SignPolicy};

fn map(n: usize, b: usize, seed: u64) -> FeatureMap {
    let data = (0..n * n * b).map(|i| (((i as u64 + 1) * (seed * 2 + 1) * 2654435761) % 1000) as f64 / 500.0 - 1.0).collect();
    FeatureMap::new(n, b, data).unwrap()
}

#[test]
fn output_dims_follow_floor_formula() {
    for n in 1..=16 {
        for m in 1..=n {
            for stride in 1..=4 {
                let w = gather_windows(&map(n, 1, 0), m, stride).unwrap();
                assert_eq!(w.grid_side, (n - m) / stride + 1);
                assert_eq!(w.vectors.len(), w.grid_side * w.grid_side);
            }
        }
    }
}

fn orth_dict(d: usize, k: usize) -> Dictionary {
    let a = nalgebra::DMatrix::from_fn(d, k, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0 + if i == j { 20.0 } else { 0.0 });
    orthsc::learning::svd_orthogonalize(&a).unwrap()
}

proptest! {
    #[test]
    fn translation_covariance(n in 4usize..10, m in 1usize..4, stride in 1usize..3, shift in 1usize..3, seed in 0u64..50) {
        prop_assume!(m + stride * shift <= n);
        let b = 2;
        let big = map(n, b, seed);
        // crop the map starting at a stride multiple
        let off = stride * shift;
        let ns = n - off;
        let mut cropped = Vec::new();
        for i in 0..ns {
            for j in 0..ns {
                cropped.extend_from_slice(big.at(i + off, j + off));
            }
        }
        let small = FeatureMap::new(ns, b, cropped).unwrap();
        let phi = orth_dict(m * m * b, 2.min(m * m * b));
        let reg = RegCoeffs::per_unit(DVector::from_element(phi.n_atoms(), 0.1), SignPolicy::NonNegativeOnly).unwrap();
        let out_big = sconv_forward(&big, &phi, &reg, m, stride, ConvSolver::OrthClosedForm).unwrap();
        let out_small = sconv_forward(&small, &phi, &reg, m, stride, ConvSolver::OrthClosedForm).unwrap();
        for i in 0..out_small.side() {
            for j in 0..out_small.side() {
                prop_assert_eq!(out_small.at(i, j), out_big.at(i + shift, j + shift));
            }
        }
    }
}

#[test]
fn iterative_solver_matches_closed_form() {
    let fm = map(5, 2, 3);
    let phi = orth_dict(8, 5);
    let reg = RegCoeffs::per_unit(DVector::from_fn(5, |i, _| 0.05 * i as f64), SignPolicy::NonNegativeOnly).unwrap();
    let a = sconv_forward(&fm, &phi, &reg, 2, 1, ConvSolver::OrthClosedForm).unwrap();
    let b = sconv_forward(&fm, &phi, &reg, 2, 1, ConvSolver::GeneralIterative).unwrap();
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn parallel_matches_sequential() {
    let fm = map(9, 3, 1);
    let phi = orth_dict(12, 6);
    let reg = RegCoeffs::shared(0.2, SignPolicy::NonNegativeOnly).unwrap();
    let a = sconv_forward_with(orthsc::Exec::Sequential, &fm, &phi, &reg, 2, 1, ConvSolver::OrthClosedForm).unwrap();
    let b = sconv_forward_with(orthsc::Exec::Parallel, &fm, &phi, &reg, 2, 1, ConvSolver::OrthClosedForm).unwrap();
    assert_eq!(a, b);
}
