// SPDX-License-Identifier: Apache-2.0

use msc_core::linalg::Mat;
use msc_core::objective::{self, ReconInput, Reduction};
use msc_core::toytrain::collapse_metrics;
use msc_core::Rng;

#[test]
fn orthonormal_pair_hand_value() {
    let s = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let (loss, _) = objective::info_nce(&s, 0.4, Reduction::Mean).unwrap();
    assert!((loss - (1.0 + (-2.5f64).exp()).ln()).abs() < 1e-12);
    assert!((loss - 0.0789).abs() < 1e-4);
    let one = Mat::from_rows(&[vec![0.3]]).unwrap();
    assert_eq!(objective::info_nce(&one, 0.4, Reduction::Mean).unwrap().0, 0.0);
}

#[test]
fn color_loss_hand_value() {
    let pred = [[0.1, 0.2, 0.2], [0.5, 0.5, 0.5], [0.0; 3]];
    let target = [[0.0; 3], [0.5, 0.5, 0.5], [0.9; 3]];
    let mask = [true, true, false];
    let out = objective::color_loss(&[ReconInput {
        pred: &pred,
        target: &target,
        mask: &mask,
        valid: None,
    }])
    .unwrap();
    assert!((out.loss - 0.045).abs() < 1e-12);
    assert_eq!(out.count, 2);
}

#[test]
fn collapse_signatures() {
    let pairs: Vec<(usize, usize)> = (0..6).map(|i| (i, i)).collect();
    let constant = Mat::from_vec(6, 4, vec![0.7; 24]).unwrap();
    let (neg, std) = collapse_metrics(&constant, &constant, &pairs).unwrap();
    assert!((neg - 1.0).abs() < 1e-12);
    assert!(std.iter().all(|&s| s.abs() < 1e-12));

    let mut eye = Mat::zeros(4, 4);
    (0..4).for_each(|i| eye.set(i, i, 1.0));
    let (neg, _) = collapse_metrics(&eye, &eye, &pairs[..4]).unwrap();
    assert_eq!(neg, 0.0);
}

#[test]
fn random_gaussian_features_are_uncorrelated() {
    let mut rng = Rng::new(51);
    let (n, d) = (256, 32);
    let mut g = || Mat::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
    let (fq, fk) = (g(), g());
    let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    let (neg, std) = collapse_metrics(&fq, &fk, &pairs).unwrap();
    assert!(neg.abs() < 0.05, "{neg}");
    assert!(std.iter().all(|&s| (s - 1.0).abs() < 0.15));
}
