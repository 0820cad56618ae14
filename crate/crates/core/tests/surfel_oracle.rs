// SPDX-License-Identifier: Apache-2.0

use msc_core::geom;
use msc_core::surfel;
use msc_core::synth::synth_sphere;
use msc_core::{PointCloud, Rng};

#[test]
fn tilted_plane_normals_exact() {
    let mut rng = Rng::new(41);
    let normal = geom::normalize([0.3, -0.2, 1.0]);
    let u = geom::normalize(geom::cross(normal, [1.0, 0.0, 0.0]));
    let v = geom::cross(normal, u);
    let positions: Vec<_> = (0..2000)
        .map(|_| geom::add(geom::scale(u, rng.uniform(-1.0, 1.0)), geom::scale(v, rng.uniform(-1.0, 1.0))))
        .collect();
    let cloud = PointCloud::new(positions, vec![[0.5; 3]; 2000], None).unwrap();
    let est = surfel::estimate_normals(&cloud, 16, None).unwrap();
    for (n, ok) in est.normals.iter().zip(&est.valid) {
        assert!(ok);
        let angle = geom::dot(*n, normal).clamp(-1.0, 1.0).acos();
        assert!(angle < 1e-3, "{angle}");
    }
}

#[test]
fn sphere_mean_angular_error_below_five_degrees() {
    for (seed, density) in [(1, 400.0), (2, 600.0), (3, 1000.0)] {
        let center = [0.0, 0.0, 1.0];
        let cloud = synth_sphere(center, 0.5, density, &mut Rng::new(seed)).unwrap();
        let est = surfel::estimate_normals(&cloud, 16, None).unwrap();
        let truth = cloud.normals.as_ref().unwrap();
        let total: f64 = est
            .normals
            .iter()
            .zip(truth)
            .map(|(a, b)| geom::dot(*a, *b).abs().clamp(0.0, 1.0).acos())
            .sum();
        let mean_deg = (total / cloud.len() as f64).to_degrees();
        assert!(mean_deg < 5.0, "density {density}: {mean_deg}");
    }
}
