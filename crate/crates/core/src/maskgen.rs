// SPDX-License-Identifier: Apache-2.0

//! Contrastive cross masks over a shared patch lattice, and mask-token
//! substitution.

use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};
use crate::linalg::Mat;
use crate::rng::Rng;
use crate::viewgen::View;

pub type PatchKey = [i64; 3];

/// Both views bucketed on one lattice of cubes of side `grid`, using original
/// (pre-spatial-augmentation) positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPartition {
    pub grid: f64,
    /// Sorted, distinct patch keys occupied by either view.
    pub patches: Vec<PatchKey>,
    /// Per-point index into `patches`.
    pub query_patch: Vec<u32>,
    pub key_patch: Vec<u32>,
}

impl PatchPartition {
    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }
}

pub fn patch_key(p: Vec3, grid: f64) -> PatchKey {
    p.map(|v| geom::floor_i64(v / grid))
}

pub fn partition_patches(query: &View, key: &View, grid: f64) -> Result<PatchPartition> {
    partition_positions(&query.original_positions, &key.original_positions, grid)
}

pub fn partition_positions(query: &[Vec3], key: &[Vec3], grid: f64) -> Result<PatchPartition> {
    if !(grid > 0.0 && grid.is_finite()) {
        return Err(MscError::invalid("patch grid size must be > 0"));
    }
    let qk: Vec<PatchKey> = query.iter().map(|&p| patch_key(p, grid)).collect();
    let kk: Vec<PatchKey> = key.iter().map(|&p| patch_key(p, grid)).collect();
    let mut patches: Vec<PatchKey> = qk.iter().chain(&kk).copied().collect();
    patches.sort_unstable();
    patches.dedup();
    let lookup = |k: &PatchKey| patches.binary_search(k).expect("key in universe") as u32;
    Ok(PatchPartition {
        grid,
        query_patch: qk.iter().map(lookup).collect(),
        key_patch: kk.iter().map(lookup).collect(),
        patches,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossMaskPair {
    pub rate: f64,
    /// Patch indices masked in the query view, ascending.
    pub query_patches: Vec<u32>,
    pub key_patches: Vec<u32>,
    pub query_mask: Vec<bool>,
    pub key_mask: Vec<bool>,
}

impl CrossMaskPair {
    pub fn masked_count(&self) -> usize {
        self.query_mask.iter().chain(&self.key_mask).filter(|&&m| m).count()
    }
}

/// Number of patches masked per view: `⌊rate·K⌋`, capped at `K/2`.
pub fn masked_patch_count(rate: f64, num_patches: usize) -> usize {
    // absorb representation error of decimal rates such as 0.3
    let m = (rate * num_patches as f64 + 1e-9).floor() as usize;
    m.min(num_patches / 2)
}

/// Draws `2m` distinct patches; the first `m` are masked in the query view,
/// the rest in the key view.
pub fn sample_cross_masks(partition: &PatchPartition, rate: f64, rng: &mut Rng) -> Result<CrossMaskPair> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(MscError::invalid(format!("mask rate {rate} outside [0, 0.5]")));
    }
    let k = partition.num_patches();
    let m = masked_patch_count(rate, k);
    let drawn = rng.sample_indices(k, 2 * m);
    let mut query_patches: Vec<u32> = drawn[..m].iter().map(|&i| i as u32).collect();
    let mut key_patches: Vec<u32> = drawn[m..].iter().map(|&i| i as u32).collect();
    query_patches.sort_unstable();
    key_patches.sort_unstable();

    let mut in_query = vec![false; k];
    let mut in_key = vec![false; k];
    query_patches.iter().for_each(|&p| in_query[p as usize] = true);
    key_patches.iter().for_each(|&p| in_key[p as usize] = true);
    Ok(CrossMaskPair {
        rate,
        query_mask: partition.query_patch.iter().map(|&p| in_query[p as usize]).collect(),
        key_mask: partition.key_patch.iter().map(|&p| in_key[p as usize]).collect(),
        query_patches,
        key_patches,
    })
}

/// Learnable vector substituted for the input features of masked points.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskToken(pub Vec<f64>);

/// Rows of `features` where `mask` is set are replaced by the token; others
/// are copied unchanged.
pub fn apply_mask_token(features: &Mat, mask: &[bool], token: &MaskToken) -> Result<Mat> {
    if features.rows() != mask.len() {
        return Err(MscError::DimMismatch(format!(
            "{} feature rows, {} mask entries",
            features.rows(),
            mask.len()
        )));
    }
    if features.cols() != token.0.len() {
        return Err(MscError::DimMismatch(format!(
            "{} feature channels, token of length {}",
            features.cols(),
            token.0.len()
        )));
    }
    let mut out = features.clone();
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        out.row_mut(i).copy_from_slice(&token.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points(n: usize) -> Vec<Vec3> {
        (0..n).map(|i| [i as f64 + 0.5, 0.5, 0.5]).collect()
    }

    #[test]
    fn big_grid_single_patch() {
        let p = partition_positions(&grid_points(5), &grid_points(3), 100.0).unwrap();
        assert_eq!(p.num_patches(), 1);
    }

    #[test]
    fn ten_patches_rate_point_three() {
        let p = partition_positions(&grid_points(10), &grid_points(4), 1.0).unwrap();
        assert_eq!(p.num_patches(), 10);
        let m = sample_cross_masks(&p, 0.3, &mut Rng::new(1)).unwrap();
        assert_eq!(m.query_patches.len(), 3);
        assert_eq!(m.key_patches.len(), 3);
        assert!(m.query_patches.iter().all(|q| !m.key_patches.contains(q)));
        assert_eq!(m.query_mask.iter().filter(|&&b| b).count(), 3);
    }

    #[test]
    fn zero_rate_masks_nothing() {
        let p = partition_positions(&grid_points(10), &grid_points(10), 1.0).unwrap();
        let m = sample_cross_masks(&p, 0.0, &mut Rng::new(1)).unwrap();
        assert!(m.query_mask.iter().chain(&m.key_mask).all(|&b| !b));
    }

    #[test]
    fn half_rate_covers_every_patch_once() {
        let p = partition_positions(&grid_points(8), &grid_points(8), 1.0).unwrap();
        let m = sample_cross_masks(&p, 0.5, &mut Rng::new(2)).unwrap();
        for i in 0..8 {
            assert!(m.query_mask[i] ^ m.key_mask[i]);
        }
    }

    #[test]
    fn rejects_bad_rate_and_grid() {
        let p = partition_positions(&grid_points(4), &grid_points(4), 1.0).unwrap();
        assert!(sample_cross_masks(&p, 0.6, &mut Rng::new(0)).is_err());
        assert!(partition_positions(&grid_points(4), &[], 0.0).is_err());
    }

    #[test]
    fn token_substitution() {
        let f = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let t = MaskToken(vec![9.0, 8.0]);
        assert_eq!(apply_mask_token(&f, &[false, false], &t).unwrap(), f);
        let all = apply_mask_token(&f, &[true, true], &t).unwrap();
        assert_eq!(all.row(0), &[9.0, 8.0]);
        assert_eq!(all.row(1), &[9.0, 8.0]);
        let once = apply_mask_token(&f, &[true, false], &t).unwrap();
        assert_eq!(apply_mask_token(&once, &[true, false], &t).unwrap(), once);
        assert!(apply_mask_token(&f, &[true], &t).is_err());
        assert!(apply_mask_token(&f, &[true, true], &MaskToken(vec![1.0])).is_err());
    }
}
