// SPDX-License-Identifier: Apache-2.0

//! Surfel normals by local PCA, for clouds that do not carry normals.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::correspond::SpatialIndex;
use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};

pub const DEFAULT_K: usize = 16;

/// Height of the default orientation reference above the centroid, meters.
pub const DEFAULT_REFERENCE_LIFT: f64 = 2.0;

/// Ratio of middle to largest covariance eigenvalue below which a
/// neighborhood counts as collinear.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    /// Unit normals; rows with `valid[i] == false` hold `(0, 0, 1)`.
    pub normals: Vec<Vec3>,
    pub valid: Vec<bool>,
    pub k: usize,
    pub reference: Vec3,
}

pub fn default_reference(cloud: &PointCloud) -> Vec3 {
    geom::add(cloud.centroid(), [0.0, 0.0, DEFAULT_REFERENCE_LIFT])
}

fn cell_size_for(points: &[Vec3], k: usize) -> f64 {
    let Some((lo, hi)) = geom::bounds(points) else {
        return 1.0;
    };
    let mut ext = geom::sub(hi, lo);
    ext.sort_by(|a, b| b.total_cmp(a));
    // treat the cloud as a surface spanned by its two largest extents
    let area = (ext[0] * ext[1]).max(ext[0] * ext[0] * 1e-6);
    let cell = 0.5 * (area * k as f64 / points.len() as f64).sqrt();
    if cell.is_finite() && cell > 0.0 {
        cell
    } else {
        1.0
    }
}

/// Per point, the smallest-eigenvalue eigenvector of the covariance of its
/// `k` nearest neighbors, flipped to face `reference` (default: centroid
/// raised by 2 m).
pub fn estimate_normals(cloud: &PointCloud, k: usize, reference: Option<Vec3>) -> Result<NormalEstimate> {
    let n = cloud.len();
    if k < 3 || n < k {
        return Err(MscError::invalid(format!("normal estimation needs n >= k >= 3 (n = {n}, k = {k})")));
    }
    let reference = reference.unwrap_or_else(|| default_reference(cloud));
    let points = &cloud.positions;
    let index = SpatialIndex::build(points, cell_size_for(points, k));

    let (normals, valid): (Vec<Vec3>, Vec<bool>) = points
        .par_iter()
        .map(|&p| {
            let nbrs = index.knn(points, p, k);
            let mean = geom::scale(
                nbrs.iter().fold([0.0; 3], |acc, &(i, _)| geom::add(acc, points[i])),
                1.0 / nbrs.len() as f64,
            );
            let mut cov = Matrix3::<f64>::zeros();
            for &(i, _) in &nbrs {
                let d = Vector3::from(geom::sub(points[i], mean));
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let largest = eig.eigenvalues[order[2]];
            let middle = eig.eigenvalues[order[1]];
            if largest.is_nan() || largest <= 0.0 || middle <= RANK_TOL * largest {
                return ([0.0, 0.0, 1.0], false);
            }
            let v = eig.eigenvectors.column(order[0]);
            let mut normal = geom::normalize([v[0], v[1], v[2]]);
            if geom::dot(normal, geom::sub(reference, p)) < 0.0 {
                normal = geom::scale(normal, -1.0);
            }
            (normal, true)
        })
        .unzip();
    Ok(NormalEstimate {
        normals,
        valid,
        k,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn plane(n: usize, seed: u64) -> PointCloud {
        let mut rng = Rng::new(seed);
        let pos = (0..n).map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0]).collect();
        PointCloud::new(pos, vec![[0.5; 3]; n], None).unwrap()
    }

    #[test]
    fn plane_normals_face_up() {
        let est = estimate_normals(&plane(400, 1), 16, None).unwrap();
        for (n, v) in est.normals.iter().zip(&est.valid) {
            assert!(*v);
            assert!(geom::norm(geom::sub(*n, [0.0, 0.0, 1.0])) < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn plane_normals_face_reference_below() {
        let est = estimate_normals(&plane(100, 2), 8, Some([0.0, 0.0, -5.0])).unwrap();
        assert!(est.normals.iter().all(|n| n[2] < -0.999_999));
    }

    #[test]
    fn whole_cloud_neighborhood() {
        let est = estimate_normals(&plane(16, 3), 16, None).unwrap();
        assert_eq!(est.normals.len(), 16);
        assert!(est.valid.iter().all(|&v| v));
    }

    #[test]
    fn collinear_flagged_invalid() {
        let pos = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let c = PointCloud::new(pos, vec![[0.0; 3]; 10], None).unwrap();
        let est = estimate_normals(&c, 4, None).unwrap();
        assert!(est.valid.iter().all(|&v| !v));
    }

    #[test]
    fn rejects_small_inputs() {
        assert!(estimate_normals(&plane(5, 1), 8, None).is_err());
        assert!(estimate_normals(&plane(5, 1), 2, None).is_err());
    }
}
