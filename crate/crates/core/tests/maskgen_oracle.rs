// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use msc_core::geom::Vec3;
use msc_core::linalg::{self, Mat};
use msc_core::maskgen::{self, MaskToken};
use msc_core::Rng;

#[test]
fn patch_partition_equals_floor_bucketing() {
    let mut rng = Rng::new(31);
    for _ in 0..50 {
        let g = rng.uniform(0.05, 0.5);
        let q: Vec<Vec3> = (0..400).map(|_| [rng.uniform(-1.0, 1.0), rng.unit(), rng.unit()]).collect();
        let k: Vec<Vec3> = (0..300).map(|_| [rng.unit(), rng.uniform(-1.0, 1.0), rng.unit()]).collect();
        let part = maskgen::partition_positions(&q, &k, g).unwrap();
        let bucket = |p: &Vec3| p.map(|v| (v / g).floor() as i64);
        let want: BTreeSet<[i64; 3]> = q.iter().chain(&k).map(bucket).collect();
        assert_eq!(part.patches, want.into_iter().collect::<Vec<_>>());
        for (i, p) in q.iter().enumerate() {
            assert_eq!(part.patches[part.query_patch[i] as usize], bucket(p));
        }
        for (i, p) in k.iter().enumerate() {
            assert_eq!(part.patches[part.key_patch[i] as usize], bucket(p));
        }
    }
}

#[test]
fn cross_masks_disjoint_with_exact_counts() {
    let mut rng = Rng::new(32);
    for trial in 0..1000 {
        let k_target = 2 + rng.below(499);
        // Points on a line of unit cells give exactly k_target patches.
        let q: Vec<Vec3> = (0..k_target).map(|i| [i as f64 + 0.5, 0.5, 0.5]).collect();
        let key: Vec<Vec3> = (0..k_target).rev().map(|i| [i as f64 + 0.5, 0.5, 0.5]).collect();
        let part = maskgen::partition_positions(&q, &key, 1.0).unwrap();
        assert_eq!(part.num_patches(), k_target);
        let tenths = trial % 6;
        let rate = tenths as f64 / 10.0;
        let masks = maskgen::sample_cross_masks(&part, rate, &mut rng).unwrap();
        let expect = tenths * k_target / 10;
        assert_eq!(masks.query_patches.len(), expect);
        assert_eq!(masks.key_patches.len(), expect);
        let qs: BTreeSet<u32> = masks.query_patches.iter().copied().collect();
        assert!(masks.key_patches.iter().all(|p| !qs.contains(p)));
        for (i, &m) in masks.query_mask.iter().enumerate() {
            assert_eq!(m, qs.contains(&part.query_patch[i]));
        }
    }
}

#[test]
fn token_gradient_is_sum_over_masked_rows() {
    let mut rng = Rng::new(33);
    let (n, d) = (12, 5);
    let f = Mat::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
    let w = Mat::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
    let mask: Vec<bool> = (0..n).map(|i| i % 3 == 1).collect();
    let token = MaskToken((0..d).map(|_| rng.normal()).collect());
    let loss = |t: &MaskToken| -> f64 {
        let out = maskgen::apply_mask_token(&f, &mask, t).unwrap();
        out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| (a * b).sin()).sum()
    };
    let out = maskgen::apply_mask_token(&f, &mask, &token).unwrap();
    let mut analytic = vec![0.0; d];
    for i in (0..n).filter(|&i| mask[i]) {
        let g: Vec<f64> = out.row(i).iter().zip(w.row(i)).map(|(a, b)| (a * b).cos() * b).collect();
        linalg::axpy(1.0, &g, &mut analytic);
    }
    let h = 1e-6;
    for (c, &want) in analytic.iter().enumerate() {
        let mut plus = token.clone();
        plus.0[c] += h;
        let mut minus = token.clone();
        minus.0[c] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        assert!((fd - want).abs() <= 1e-7 * fd.abs().max(1.0));
    }
}
