// SPDX-License-Identifier: Apache-2.0

use msc_core::augment::AugmentParams;
use msc_core::correspond::{self, SpatialIndex};
use msc_core::geom::{self, Vec3};
use msc_core::viewgen::{self, Role, View};
use msc_core::{PointCloud, Rng};

fn view_of(points: Vec<Vec3>, originals: Vec<Vec3>, role: Role) -> View {
    let n = points.len();
    View {
        cloud: PointCloud::new(points, vec![[0.5; 3]; n], None).unwrap(),
        original_positions: originals,
        original_normals: None,
        role,
    }
}

#[test]
fn grid_matcher_equals_bruteforce_on_random_views() {
    let mut rng = Rng::new(21);
    for _ in 0..100 {
        let eps = rng.uniform(0.01, 0.1);
        let base: Vec<Vec3> = (0..500).map(|_| [rng.unit(), rng.unit(), rng.unit()]).collect();
        let jitter = |p: Vec3, rng: &mut Rng| geom::add(p, [rng.normal() * eps, rng.normal() * eps, rng.normal() * eps]);
        let q: Vec<Vec3> = base.iter().map(|&p| jitter(p, &mut rng)).collect();
        let k: Vec<Vec3> = base.iter().map(|&p| jitter(p, &mut rng)).collect();
        let qv = view_of(q.clone(), q, Role::Query);
        let kv = view_of(k.clone(), k, Role::Key);
        let fast = correspond::match_views(&qv, &kv, eps, usize::MAX, &mut rng).unwrap();
        let slow = correspond::match_views_bruteforce(&qv, &kv, eps, None, &mut rng).unwrap();
        assert_eq!(fast, slow);
    }
}

#[test]
fn generated_pair_matches_bruteforce() {
    let scene = msc_core::synth::synth_scene(&Default::default(), &mut Rng::new(3)).unwrap();
    let pair = viewgen::generate_pair(&scene, &AugmentParams::default(), 0, &mut Rng::new(4)).unwrap();
    let mut rng = Rng::new(5);
    let fast = correspond::match_views(&pair.query, &pair.key, 0.02, usize::MAX, &mut rng).unwrap();
    let slow = correspond::match_views_bruteforce(&pair.query, &pair.key, 0.02, None, &mut rng).unwrap();
    assert!(!fast.is_empty());
    assert_eq!(fast, slow);
}

#[test]
fn identical_clouds_match_every_point() {
    let mut rng = Rng::new(6);
    let pts: Vec<Vec3> = (0..300).map(|_| [rng.unit() * 5.0, rng.unit() * 5.0, rng.unit()]).collect();
    let map = correspond::match_positions(&pts, &pts, 1e-6);
    assert_eq!(map.len(), pts.len());
    assert!(map.pairs.iter().all(|&(i, j)| i == j));
}

#[test]
fn knn_equals_sorted_scan() {
    let mut rng = Rng::new(7);
    let pts: Vec<Vec3> = (0..800).map(|_| [rng.unit(), rng.unit() * 0.3, rng.unit() * 2.0]).collect();
    let index = SpatialIndex::build(&pts, 0.07);
    for _ in 0..50 {
        let q = [rng.unit(), rng.unit(), rng.unit()];
        let k = 1 + rng.below(30);
        let got: Vec<usize> = index.knn(&pts, q, k).into_iter().map(|(i, _)| i).collect();
        let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, &p)| (geom::dist2(p, q), i)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = all[..k].iter().map(|&(_, i)| i).collect();
        assert_eq!(got, want);
    }
}
