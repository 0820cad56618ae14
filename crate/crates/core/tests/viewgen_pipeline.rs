// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;

use msc_core::augment::AugmentParams;
use msc_core::synth::{synth_scene, SceneSpec};
use msc_core::viewgen::{self, Role};
use msc_core::{PointCloud, Rng};

fn dense_scene(seed: u64) -> PointCloud {
    let spec = SceneSpec {
        density: 300.0,
        ..SceneSpec::default()
    };
    synth_scene(&spec, &mut Rng::new(seed)).unwrap()
}

#[test]
fn views_share_points_in_nearly_every_seed() {
    let params = AugmentParams::default();
    let mut shared = 0;
    for seed in 0..100 {
        let scene = dense_scene(seed);
        assert!(scene.len() >= 10_000);
        let pair = viewgen::generate_pair(&scene, &params, 0, &mut Rng::new(1000 + seed)).unwrap();
        let q: HashSet<u32> = pair.query.cloud.origin_index.iter().copied().collect();
        if pair.key.cloud.origin_index.iter().any(|o| q.contains(o)) {
            shared += 1;
        }
    }
    assert!(shared >= 99, "{shared} of 100");
}

#[test]
fn split_streams_rotate_differently() {
    let scene = dense_scene(1);
    let params = AugmentParams {
        crop_keep_range: [1.0, 1.0],
        ..AugmentParams::default()
    };
    let mut rng = Rng::new(2);
    let mut a = rng.split();
    let mut b = rng.split();
    let va = viewgen::generate_view(&scene, &params, Role::Query, &mut a).unwrap();
    let vb = viewgen::generate_view(&scene, &params, Role::Key, &mut b).unwrap();
    assert_ne!(va.cloud.positions, vb.cloud.positions);
}

#[test]
fn pairs_are_deterministic_per_seed() {
    let scene = dense_scene(3);
    let params = AugmentParams::default();
    let a = viewgen::generate_pair(&scene, &params, 5, &mut Rng::new(7)).unwrap();
    let b = viewgen::generate_pair(&scene, &params, 5, &mut Rng::new(7)).unwrap();
    assert_eq!(a, b);
    let c = viewgen::generate_pair(&scene, &params, 5, &mut Rng::new(8)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn mixing_eight_pairs_conserves_every_point() {
    let params = AugmentParams::default();
    let mut rng = Rng::new(4);
    let batch: Vec<_> = (0..8)
        .map(|i| {
            let scene = synth_scene(&SceneSpec::default(), &mut Rng::new(40 + i)).unwrap();
            viewgen::generate_pair(&scene, &params, i as usize, &mut rng).unwrap()
        })
        .collect();
    let mixed = viewgen::mix_queries(&batch, &mut rng);
    assert_eq!(mixed.queries.len(), 4);

    let mut seen = vec![0usize; batch.len()];
    for mq in &mixed.queries {
        assert_eq!(mq.members.len(), 2);
        for m in &mq.members {
            seen[m.scene] += 1;
            assert!(mq.scene_ids[m.rows.clone()].iter().all(|&s| s == m.scene));
            assert_eq!(&mq.cloud.positions[m.rows.clone()], batch[m.scene].query.cloud.positions.as_slice());
            assert_eq!(&mq.original_positions[m.rows.clone()], batch[m.scene].query.original_positions.as_slice());
        }
        assert_eq!(mq.cloud.len(), mq.members.iter().map(|m| m.rows.len()).sum::<usize>());
    }
    assert!(seen.iter().all(|&c| c == 1));
    let split = mixed.split_queries();
    for (s, v) in split.iter().enumerate() {
        assert_eq!(v, &batch[s].query);
    }
    for (s, k) in mixed.keys.iter().enumerate() {
        assert_eq!(k, &batch[s].key);
    }
}
