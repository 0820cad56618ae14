// SPDX-License-Identifier: Apache-2.0

//! Two-view generation and query-view mixing.

use std::ops::Range;
use std::time::{Duration, Instant};

use crate::augment::{self, AugmentParams, GridFrame};
use crate::cloud::PointCloud;
use crate::error::{MscError, Result};
use crate::geom::Vec3;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Key,
}

/// An augmented copy of a source cloud.
///
/// `original_positions[i]` / `original_normals[i]` are the source row that
/// `cloud` point `i` descends from, before any spatial augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub cloud: PointCloud,
    pub original_positions: Vec<Vec3>,
    pub original_normals: Option<Vec<Vec3>>,
    pub role: Role,
}

impl View {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub query: View,
    pub key: View,
    pub source_scene_id: usize,
}

/// Wall time spent in each augmentation family.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub photometric: Duration,
    pub spatial: Duration,
    pub crop: Duration,
    pub grid_sample: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.photometric + self.spatial + self.crop + self.grid_sample
    }
}

pub fn generate_view(source: &PointCloud, params: &AugmentParams, role: Role, rng: &mut Rng) -> Result<View> {
    generate_view_timed(source, params, role, rng, &mut StageTimings::default())
}

/// [`generate_view`] that also accumulates per-stage wall time into `timings`.
pub fn generate_view_timed(
    source: &PointCloud,
    params: &AugmentParams,
    role: Role,
    rng: &mut Rng,
    timings: &mut StageTimings,
) -> Result<View> {
    if source.len() > u32::MAX as usize {
        return Err(MscError::invalid("source cloud too large"));
    }
    // Work on a copy whose origin_index holds source rows; relabel at the end.
    // Copy and relabel are billed to the first and last stage.
    let t = Instant::now();
    let mut work = PointCloud {
        positions: source.positions.clone(),
        colors: source.colors.clone(),
        normals: source.normals.clone(),
        origin_index: (0..source.len() as u32).collect(),
    };
    work = augment::jitter_brightness(work, params.brightness, rng);
    work = augment::jitter_contrast(work, params.contrast, rng);
    work = augment::jitter_saturation(work, params.saturation, rng);
    work = augment::jitter_hue(work, params.hue, rng);
    if rng.bernoulli(params.color_noise_prob) {
        work = augment::gaussian_color_noise(work, params.color_noise_sigma, rng);
    }
    timings.photometric += t.elapsed();

    let t = Instant::now();
    work = augment::spatial_chain(work, params, rng);
    timings.spatial += t.elapsed();

    let t = Instant::now();
    work = augment::random_crop(work, params.crop_keep_range, rng);
    timings.crop += t.elapsed();

    let t = Instant::now();
    let rows = match params.grid_frame {
        GridFrame::Augmented => augment::grid_sample_rows(&work.positions, params.voxel_size, rng),
        GridFrame::Original => {
            let original: Vec<Vec3> = work
                .origin_index
                .iter()
                .map(|&r| source.positions[r as usize])
                .collect();
            augment::grid_sample_rows(&original, params.voxel_size, rng)
        }
    };
    if rows.len() != work.len() {
        work = work.select(&rows);
    }
    if work.is_empty() {
        timings.grid_sample += t.elapsed();
        return Err(MscError::EmptyView);
    }
    let original_positions = work.origin_index.iter().map(|&r| source.positions[r as usize]).collect();
    let original_normals = source
        .normals
        .as_ref()
        .map(|ns| work.origin_index.iter().map(|&r| ns[r as usize]).collect());
    for r in &mut work.origin_index {
        *r = source.origin_index[*r as usize];
    }
    timings.grid_sample += t.elapsed();
    Ok(View {
        cloud: work,
        original_positions,
        original_normals,
        role,
    })
}

/// Two independent views of one source; each view gets its own child stream.
pub fn generate_pair(source: &PointCloud, params: &AugmentParams, scene_id: usize, rng: &mut Rng) -> Result<ViewPair> {
    let mut query_rng = rng.split();
    let mut key_rng = rng.split();
    Ok(ViewPair {
        query: generate_view(source, params, Role::Query, &mut query_rng)?,
        key: generate_view(source, params, Role::Key, &mut key_rng)?,
        source_scene_id: scene_id,
    })
}

/// Contiguous rows of a mixed query that came from batch entry `scene`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub scene: usize,
    pub rows: Range<usize>,
}

/// Concatenation of one or two query views.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedQuery {
    pub cloud: PointCloud,
    pub original_positions: Vec<Vec3>,
    pub original_normals: Option<Vec<Vec3>>,
    /// Per-point batch index of the owning scene.
    pub scene_ids: Vec<usize>,
    pub members: Vec<Member>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub queries: Vec<MixedQuery>,
    pub keys: Vec<View>,
    /// Batch order used for pairing: mixed query `m` holds entries
    /// `permutation[2m]` and `permutation[2m + 1]`.
    pub permutation: Vec<usize>,
}

impl MixedBatch {
    /// Recovers the query views in batch order.
    pub fn split_queries(&self) -> Vec<View> {
        let mut out: Vec<Option<View>> = vec![None; self.keys.len()];
        for mq in &self.queries {
            for m in &mq.members {
                let rows: Vec<usize> = m.rows.clone().collect();
                out[m.scene] = Some(View {
                    cloud: mq.cloud.select(&rows),
                    original_positions: mq.original_positions[m.rows.clone()].to_vec(),
                    original_normals: mq.original_normals.as_ref().map(|ns| ns[m.rows.clone()].to_vec()),
                    role: Role::Query,
                });
            }
        }
        out.into_iter().map(|v| v.expect("every scene is a member")).collect()
    }
}

fn concat(views: &[(usize, &View)]) -> MixedQuery {
    let total: usize = views.iter().map(|(_, v)| v.len()).sum();
    let with_normals = views.iter().all(|(_, v)| v.cloud.normals.is_some());
    let with_orig_normals = views.iter().all(|(_, v)| v.original_normals.is_some());
    let mut mq = MixedQuery {
        cloud: PointCloud {
            positions: Vec::with_capacity(total),
            colors: Vec::with_capacity(total),
            normals: with_normals.then(|| Vec::with_capacity(total)),
            origin_index: Vec::with_capacity(total),
        },
        original_positions: Vec::with_capacity(total),
        original_normals: with_orig_normals.then(|| Vec::with_capacity(total)),
        scene_ids: Vec::with_capacity(total),
        members: Vec::new(),
    };
    for &(scene, v) in views {
        let start = mq.cloud.positions.len();
        mq.cloud.positions.extend_from_slice(&v.cloud.positions);
        mq.cloud.colors.extend_from_slice(&v.cloud.colors);
        if let (Some(dst), Some(src)) = (mq.cloud.normals.as_mut(), v.cloud.normals.as_ref()) {
            dst.extend_from_slice(src);
        }
        mq.cloud.origin_index.extend_from_slice(&v.cloud.origin_index);
        mq.original_positions.extend_from_slice(&v.original_positions);
        if let (Some(dst), Some(src)) = (mq.original_normals.as_mut(), v.original_normals.as_ref()) {
            dst.extend_from_slice(src);
        }
        mq.scene_ids.extend(std::iter::repeat_n(scene, v.len()));
        mq.members.push(Member {
            scene,
            rows: start..start + v.len(),
        });
    }
    mq
}

/// Randomly pairs up query views and concatenates each pair; an odd leftover
/// stays alone. Key views are copied through untouched. Batches smaller than
/// two are returned unmixed.
pub fn mix_queries(batch: &[ViewPair], rng: &mut Rng) -> MixedBatch {
    let mut permutation: Vec<usize> = (0..batch.len()).collect();
    if batch.len() >= 2 {
        rng.shuffle(&mut permutation);
    }
    let queries = permutation
        .chunks(2)
        .map(|chunk| {
            let views: Vec<(usize, &View)> = chunk.iter().map(|&s| (s, &batch[s].query)).collect();
            concat(&views)
        })
        .collect();
    MixedBatch {
        queries,
        keys: batch.iter().map(|p| p.key.clone()).collect(),
        permutation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scene, SceneSpec};

    fn scene(seed: u64) -> PointCloud {
        synth_scene(&SceneSpec::default(), &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn identity_params_reproduce_source() {
        let src = scene(1);
        let params = AugmentParams::identity(1e-4);
        let v = generate_view(&src, &params, Role::Query, &mut Rng::new(3)).unwrap();
        assert_eq!(v.cloud, src);
        assert_eq!(v.original_positions, src.positions);
    }

    #[test]
    fn originals_index_source() {
        let src = scene(2);
        let v = generate_view(&src, &AugmentParams::default(), Role::Key, &mut Rng::new(4)).unwrap();
        assert!(v.len() <= src.len());
        for (i, &o) in v.cloud.origin_index.iter().enumerate() {
            assert_eq!(v.original_positions[i], src.positions[o as usize]);
            assert_eq!(v.original_normals.as_ref().unwrap()[i], src.normals.as_ref().unwrap()[o as usize]);
        }
    }

    #[test]
    fn original_frame_sampling_lands_on_source_lattice() {
        let src = scene(2);
        let params = AugmentParams {
            grid_frame: GridFrame::Original,
            voxel_size: 0.2,
            crop_keep_range: [1.0, 1.0],
            ..AugmentParams::default()
        };
        let a = generate_view(&src, &params, Role::Query, &mut Rng::new(1)).unwrap();
        let cells: std::collections::HashSet<[i64; 3]> = a
            .original_positions
            .iter()
            .map(|p| p.map(|v| (v / 0.2).floor() as i64))
            .collect();
        assert_eq!(cells.len(), a.len());
    }

    #[test]
    fn empty_view_error() {
        let src = PointCloud::default();
        let err = generate_view(&src, &AugmentParams::default(), Role::Query, &mut Rng::new(0));
        assert!(matches!(err, Err(MscError::EmptyView)));
    }

    #[test]
    fn mixing_batch_of_one_is_identity() {
        let src = scene(3);
        let pair = generate_pair(&src, &AugmentParams::default(), 0, &mut Rng::new(0)).unwrap();
        let mixed = mix_queries(std::slice::from_ref(&pair), &mut Rng::new(1));
        assert_eq!(mixed.queries.len(), 1);
        assert_eq!(mixed.queries[0].cloud, pair.query.cloud);
        assert_eq!(mixed.split_queries(), vec![pair.query]);
    }

    #[test]
    fn mixing_two_concatenates() {
        let batch: Vec<ViewPair> = (0..2)
            .map(|s| generate_pair(&scene(s), &AugmentParams::default(), s as usize, &mut Rng::new(s)).unwrap())
            .collect();
        let mixed = mix_queries(&batch, &mut Rng::new(9));
        assert_eq!(mixed.queries.len(), 1);
        assert_eq!(mixed.queries[0].cloud.len(), batch[0].query.len() + batch[1].query.len());
        let split = mixed.split_queries();
        assert_eq!(split[0], batch[0].query);
        assert_eq!(split[1], batch[1].query);
        for (k, p) in mixed.keys.iter().zip(&batch) {
            assert_eq!(*k, p.key);
        }
    }
}
