// SPDX-License-Identifier: Apache-2.0

//! Positive-pair matching between two views in the original frame.

use rustc_hash::FxHashMap;

use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};
use crate::rng::Rng;
use crate::viewgen::View;

/// Uniform grid hash over a point set.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell: f64,
    inv_cell: f64,
    cells: FxHashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl SpatialIndex {
    pub fn build(points: &[Vec3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let inv_cell = 1.0 / cell;
        let mut cells: FxHashMap<[i64; 3], Vec<u32>> = FxHashMap::default();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let c = p.map(|v| geom::floor_i64(v * inv_cell));
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            cells.entry(c).or_default().push(i as u32);
        }
        Self {
            cell,
            inv_cell,
            cells,
            lo,
            hi,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn cell_of(&self, p: Vec3) -> [i64; 3] {
        p.map(|v| geom::floor_i64(v * self.inv_cell))
    }

    fn visit_shell(&self, center: [i64; 3], ring: i64, mut f: impl FnMut(&[u32])) {
        for dz in -ring..=ring {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(ids) = self.cells.get(&key) {
                        f(ids);
                    }
                }
            }
        }
    }

    /// Calls `f(index, squared_distance)` for every indexed point within
    /// `radius` of `q`.
    pub fn for_each_within(&self, points: &[Vec3], q: Vec3, radius: f64, mut f: impl FnMut(usize, f64)) {
        let r2 = radius * radius;
        let rings = (radius * self.inv_cell).ceil() as i64;
        let center = self.cell_of(q);
        for ring in 0..=rings.max(1) {
            self.visit_shell(center, ring, |ids| {
                for &i in ids {
                    let d2 = geom::dist2(points[i as usize], q);
                    if d2 <= r2 {
                        f(i as usize, d2);
                    }
                }
            });
        }
    }

    /// Nearest indexed point within `radius`; ties go to the smaller index.
    pub fn nearest_within(&self, points: &[Vec3], q: Vec3, radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.for_each_within(points, q, radius, |i, d2| {
            if best.is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && i < bi)) {
                best = Some((i, d2));
            }
        });
        best
    }

    /// Exact `k` nearest neighbors of `q` (including `q` itself if indexed),
    /// ordered by `(squared distance, index)`.
    pub fn knn(&self, points: &[Vec3], q: Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut found: Vec<(usize, f64)> = Vec::new();
        if k == 0 || self.cells.is_empty() {
            return found;
        }
        let center = self.cell_of(q);
        let max_ring = (0..3)
            .map(|a| (center[a] - self.lo[a]).abs().max((self.hi[a] - center[a]).abs()))
            .max()
            .unwrap_or(0);
        let by_dist = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        for ring in 0..=max_ring {
            self.visit_shell(center, ring, |ids| {
                found.extend(ids.iter().map(|&i| (i as usize, geom::dist2(points[i as usize], q))));
            });
            if found.len() >= k {
                found.sort_unstable_by(by_dist);
                found.truncate(k);
                // Anything outside the visited block is at least `ring` cells away.
                let reach = ring as f64 * self.cell;
                if found[k - 1].1 <= reach * reach {
                    return found;
                }
            }
        }
        found.sort_unstable_by(by_dist);
        found.truncate(k);
        found
    }
}

/// Matched `(query row, key row)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorrespondenceMap {
    pub pairs: Vec<(usize, usize)>,
}

impl CorrespondenceMap {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Uniform random subset of `n_max` pairs, kept in query order.
    pub fn subsample(&mut self, n_max: usize, rng: &mut Rng) {
        if self.pairs.len() <= n_max {
            return;
        }
        let mut keep = rng.sample_indices(self.pairs.len(), n_max);
        keep.sort_unstable();
        self.pairs = keep.into_iter().map(|i| self.pairs[i]).collect();
    }
}

fn check_args(epsilon: f64, n_max: usize) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MscError::invalid("matching epsilon must be > 0"));
    }
    if n_max == 0 {
        return Err(MscError::invalid("n_max must be >= 1"));
    }
    Ok(())
}

/// For each query point, the nearest key point by original-position distance
/// if it lies within `epsilon`. More than `n_max` matches are subsampled
/// uniformly.
pub fn match_views(query: &View, key: &View, epsilon: f64, n_max: usize, rng: &mut Rng) -> Result<CorrespondenceMap> {
    check_args(epsilon, n_max)?;
    let mut map = match_positions(&query.original_positions, &key.original_positions, epsilon);
    map.subsample(n_max, rng);
    Ok(map)
}

/// Grid-accelerated matching without subsampling.
pub fn match_positions(query: &[Vec3], key: &[Vec3], epsilon: f64) -> CorrespondenceMap {
    if query.is_empty() || key.is_empty() {
        return CorrespondenceMap::default();
    }
    let index = SpatialIndex::build(key, epsilon);
    let pairs = query
        .iter()
        .enumerate()
        .filter_map(|(i, &q)| index.nearest_within(key, q, epsilon).map(|(j, _)| (i, j)))
        .collect();
    CorrespondenceMap { pairs }
}

/// Matches between two views restricted to rows unmasked on both sides,
/// then subsampled to `n_max`.
pub fn match_unmasked(
    query: &View,
    key: &View,
    query_mask: &[bool],
    key_mask: &[bool],
    epsilon: f64,
    n_max: usize,
    rng: &mut Rng,
) -> Result<CorrespondenceMap> {
    check_args(epsilon, n_max)?;
    if query_mask.len() != query.len() || key_mask.len() != key.len() {
        return Err(MscError::DimMismatch("mask length differs from view".into()));
    }
    let mut map = match_positions(&query.original_positions, &key.original_positions, epsilon);
    map.pairs.retain(|&(i, j)| !query_mask[i] && !key_mask[j]);
    map.subsample(n_max, rng);
    Ok(map)
}

/// Exhaustive reference matcher; `n_max = None` disables subsampling.
pub fn match_views_bruteforce(query: &View, key: &View, epsilon: f64, n_max: Option<usize>, rng: &mut Rng) -> Result<CorrespondenceMap> {
    check_args(epsilon, n_max.unwrap_or(1))?;
    let r2 = epsilon * epsilon;
    let mut pairs = Vec::new();
    for (i, &q) in query.original_positions.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, &k) in key.original_positions.iter().enumerate() {
            let d2 = geom::dist2(q, k);
            if d2 <= r2 && best.is_none_or(|(_, bd)| d2 < bd) {
                best = Some((j, d2));
            }
        }
        if let Some((j, _)) = best {
            pairs.push((i, j));
        }
    }
    let mut map = CorrespondenceMap { pairs };
    if let Some(n) = n_max {
        map.subsample(n, rng);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::viewgen::Role;

    fn view_of(points: Vec<Vec3>) -> View {
        let n = points.len();
        View {
            cloud: PointCloud::new(points.clone(), vec![[0.5; 3]; n], None).unwrap(),
            original_positions: points,
            original_normals: None,
            role: Role::Query,
        }
    }

    fn random_points(n: usize, rng: &mut Rng) -> Vec<Vec3> {
        (0..n).map(|_| [rng.unit(), rng.unit(), rng.unit()]).collect()
    }

    #[test]
    fn identical_views_match_diagonal() {
        let pts = random_points(300, &mut Rng::new(1));
        let v = view_of(pts);
        let m = match_views(&v, &v, 1e-6, 300, &mut Rng::new(0)).unwrap();
        assert_eq!(m.pairs, (0..300).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn far_views_do_not_match() {
        let a = view_of(random_points(50, &mut Rng::new(1)));
        let b = view_of(random_points(50, &mut Rng::new(2)).into_iter().map(|p| geom::add(p, [10.0, 0.0, 0.0])).collect());
        assert!(match_views(&a, &b, 0.1, 100, &mut Rng::new(0)).unwrap().is_empty());
    }

    #[test]
    fn ties_prefer_smaller_key_index() {
        let q = view_of(vec![[0.0; 3]]);
        let k = view_of(vec![[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0], [0.0, 0.1, 0.0]]);
        let m = match_views(&q, &k, 0.2, 4, &mut Rng::new(0)).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        let b = match_views_bruteforce(&q, &k, 0.2, None, &mut Rng::new(0)).unwrap();
        assert_eq!(b, m);
    }

    #[test]
    fn subsample_caps_and_keeps_order() {
        let v = view_of(random_points(100, &mut Rng::new(3)));
        let m = match_views(&v, &v, 1e-6, 10, &mut Rng::new(0)).unwrap();
        assert_eq!(m.len(), 10);
        assert!(m.pairs.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn empty_inputs() {
        let e = view_of(vec![]);
        let v = view_of(random_points(5, &mut Rng::new(3)));
        assert!(match_views_bruteforce(&e, &v, 0.1, None, &mut Rng::new(0)).unwrap().is_empty());
        assert!(match_views(&v, &e, 0.1, 5, &mut Rng::new(0)).unwrap().is_empty());
    }

    #[test]
    fn bad_arguments() {
        let v = view_of(random_points(5, &mut Rng::new(3)));
        assert!(match_views(&v, &v, 0.0, 5, &mut Rng::new(0)).is_err());
        assert!(match_views(&v, &v, 0.1, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn knn_matches_sort() {
        let mut rng = Rng::new(8);
        let pts = random_points(400, &mut rng);
        let index = SpatialIndex::build(&pts, 0.07);
        for q in random_points(20, &mut rng) {
            let got = index.knn(&pts, q, 16);
            let mut all: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, &p)| (i, geom::dist2(p, q))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, all[..16].to_vec());
        }
        assert_eq!(index.knn(&pts, [0.5; 3], 1000).len(), 400);
    }

    #[test]
    fn radius_query_beyond_cell() {
        let mut rng = Rng::new(5);
        let pts = random_points(300, &mut rng);
        let index = SpatialIndex::build(&pts, 0.05);
        let q = [0.5; 3];
        let mut got = Vec::new();
        index.for_each_within(&pts, q, 0.2, |i, _| got.push(i));
        got.sort_unstable();
        let want: Vec<usize> = (0..300).filter(|&i| geom::dist2(pts[i], q) <= 0.04).collect();
        assert_eq!(got, want);
    }
}
