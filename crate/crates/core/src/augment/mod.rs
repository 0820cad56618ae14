// SPDX-License-Identifier: Apache-2.0

//! Stochastic augmentation operators.
//!
//! Each operator takes the cloud by value and returns the transformed cloud.
//! Photometric operators touch only `colors`; spatial operators touch only
//! `positions` and `normals`; sampling operators drop rows. The `apply_*`
//! functions take an already drawn parameter so tests can pin it.

pub mod color;

use std::f64::consts::PI;

use crate::cloud::PointCloud;
use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};
use crate::rng::Rng;

use color::{hsv_to_rgb, luminance, rgb_to_hsv};

/// Tolerance band around the drawn keep fraction in [`random_crop`].
pub const CROP_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of the hue circle, `[0, 0.5]`.
    pub hue: f64,
    pub color_noise_sigma: f64,
    pub color_noise_prob: f64,
    /// z-rotation angle drawn from `[-rot_z_max, rot_z_max]`.
    pub rot_z_max: f64,
    pub rot_xy_max: f64,
    pub flip_prob: f64,
    pub scale_range: [f64; 2],
    pub voxel_size: f64,
    pub grid_frame: GridFrame,
    pub crop_keep_range: [f64; 2],
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.2,
            hue: 0.025,
            color_noise_sigma: 0.01,
            color_noise_prob: 0.95,
            rot_z_max: PI,
            rot_xy_max: PI / 64.0,
            flip_prob: 0.5,
            scale_range: [0.9, 1.1],
            voxel_size: 0.02,
            grid_frame: GridFrame::Augmented,
            crop_keep_range: [0.6, 1.0],
        }
    }
}

impl AugmentParams {
    /// Parameters under which every operator is the identity, provided the
    /// cloud has no two points closer than `voxel_size` per axis cell.
    pub fn identity(voxel_size: f64) -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            color_noise_sigma: 0.0,
            color_noise_prob: 0.0,
            rot_z_max: 0.0,
            rot_xy_max: 0.0,
            flip_prob: 0.0,
            scale_range: [1.0, 1.0],
            voxel_size,
            grid_frame: GridFrame::Augmented,
            crop_keep_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("color_noise_sigma", self.color_noise_sigma),
            ("rot_z_max", self.rot_z_max),
            ("rot_xy_max", self.rot_xy_max),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MscError::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(MscError::invalid("hue must lie in [0, 0.5]"));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("color_noise_prob", self.color_noise_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MscError::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(MscError::invalid("scale range needs 0 < lo <= hi"));
        }
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(MscError::invalid("voxel_size must be > 0"));
        }
        let [lo, hi] = self.crop_keep_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(MscError::invalid("crop keep range must satisfy 0 < lo <= hi <= 1"));
        }
        Ok(())
    }
}

/// Which coordinates `grid_sample` buckets on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFrame {
    Augmented,
    Original,
}

impl std::str::FromStr for GridFrame {
    type Err = MscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augmented" => Ok(GridFrame::Augmented),
            "original" => Ok(GridFrame::Original),
            _ => Err(MscError::invalid(format!("unknown grid frame {s:?}"))),
        }
    }
}

#[inline]
fn clamp01(c: Vec3) -> Vec3 {
    c.map(|v| v.clamp(0.0, 1.0))
}

// ---- photometric -------------------------------------------------------

pub fn apply_brightness(mut cloud: PointCloud, factor: f64) -> PointCloud {
    if factor == 1.0 {
        return cloud;
    }
    for c in &mut cloud.colors {
        *c = clamp01(geom::scale(*c, factor));
    }
    cloud
}

pub fn jitter_brightness(cloud: PointCloud, strength: f64, rng: &mut Rng) -> PointCloud {
    let f = rng.uniform(1.0 - strength, 1.0 + strength);
    apply_brightness(cloud, f)
}

pub fn apply_contrast(mut cloud: PointCloud, factor: f64) -> PointCloud {
    if cloud.is_empty() || factor == 1.0 {
        return cloud;
    }
    let mean = cloud.colors.iter().map(|&c| luminance(c)).sum::<f64>() / cloud.len() as f64;
    for c in &mut cloud.colors {
        *c = clamp01(c.map(|v| mean + factor * (v - mean)));
    }
    cloud
}

pub fn jitter_contrast(cloud: PointCloud, strength: f64, rng: &mut Rng) -> PointCloud {
    let f = rng.uniform(1.0 - strength, 1.0 + strength);
    apply_contrast(cloud, f)
}

pub fn apply_saturation(mut cloud: PointCloud, factor: f64) -> PointCloud {
    if factor == 1.0 {
        return cloud;
    }
    for c in &mut cloud.colors {
        let gray = luminance(*c);
        *c = clamp01(c.map(|v| gray + factor * (v - gray)));
    }
    cloud
}

pub fn jitter_saturation(cloud: PointCloud, strength: f64, rng: &mut Rng) -> PointCloud {
    let f = rng.uniform(1.0 - strength, 1.0 + strength);
    apply_saturation(cloud, f)
}

pub fn apply_hue_shift(mut cloud: PointCloud, delta: f64) -> PointCloud {
    if delta == 0.0 {
        return cloud;
    }
    for c in &mut cloud.colors {
        let [h, s, v] = rgb_to_hsv(*c);
        *c = clamp01(hsv_to_rgb([(h + delta).rem_euclid(1.0), s, v]));
    }
    cloud
}

pub fn jitter_hue(cloud: PointCloud, max_shift: f64, rng: &mut Rng) -> PointCloud {
    let delta = rng.uniform(-max_shift, max_shift);
    apply_hue_shift(cloud, delta)
}

pub fn gaussian_color_noise(mut cloud: PointCloud, sigma: f64, rng: &mut Rng) -> PointCloud {
    if sigma == 0.0 {
        return cloud;
    }
    for c in &mut cloud.colors {
        *c = clamp01(c.map(|v| v + sigma * rng.normal()));
    }
    cloud
}

// ---- spatial -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Rotates positions about `pivot` and normals about the origin.
pub fn apply_rotation(mut cloud: PointCloud, axis: Axis, angle: f64, pivot: Vec3) -> PointCloud {
    if angle == 0.0 {
        return cloud;
    }
    let m = geom::axis_rotation(axis.index(), angle);
    for p in &mut cloud.positions {
        *p = geom::add(pivot, geom::mat_vec(&m, geom::sub(*p, pivot)));
    }
    if let Some(normals) = cloud.normals.as_mut() {
        for n in normals {
            *n = geom::mat_vec(&m, *n);
        }
    }
    cloud
}

/// Angle drawn from `[-max_angle, max_angle]`. z rotations pivot on the
/// centroid; x/y tilts pivot on the coordinate origin.
pub fn rotate(cloud: PointCloud, axis: Axis, max_angle: f64, rng: &mut Rng) -> PointCloud {
    let angle = rng.uniform(-max_angle, max_angle);
    let pivot = match axis {
        Axis::Z => cloud.centroid(),
        Axis::X | Axis::Y => [0.0; 3],
    };
    apply_rotation(cloud, axis, angle, pivot)
}

/// Mirrors the chosen coordinate about the centroid plane.
pub fn apply_flip(mut cloud: PointCloud, axis: Axis) -> PointCloud {
    let a = axis.index();
    let center = cloud.centroid()[a];
    for p in &mut cloud.positions {
        p[a] = 2.0 * center - p[a];
    }
    if let Some(normals) = cloud.normals.as_mut() {
        for n in normals {
            n[a] = -n[a];
        }
    }
    cloud
}

pub fn flip(cloud: PointCloud, axis: Axis, prob: f64, rng: &mut Rng) -> PointCloud {
    if rng.bernoulli(prob) {
        apply_flip(cloud, axis)
    } else {
        cloud
    }
}

/// Isotropic scaling about the centroid; normals are unchanged.
pub fn apply_scale(mut cloud: PointCloud, factor: f64) -> PointCloud {
    if factor == 1.0 {
        return cloud;
    }
    let c = cloud.centroid();
    for p in &mut cloud.positions {
        *p = geom::add(c, geom::scale(geom::sub(*p, c), factor));
    }
    cloud
}

pub fn scale(cloud: PointCloud, range: [f64; 2], rng: &mut Rng) -> PointCloud {
    let s = rng.uniform(range[0], range[1]);
    apply_scale(cloud, s)
}

/// An affine map `x ↦ a·x + b` with its normal transform.
#[derive(Debug, Clone, Copy)]
struct Affine {
    a: [[f64; 3]; 3],
    b: Vec3,
    normal: [[f64; 3]; 3],
    identity: bool,
}

impl Affine {
    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn new() -> Self {
        Self {
            a: Self::IDENTITY,
            b: [0.0; 3],
            normal: Self::IDENTITY,
            identity: true,
        }
    }

    /// Follows the current map with `x ↦ m·(x − pivot) + pivot`.
    fn then_linear(&mut self, m: &[[f64; 3]; 3], pivot: Vec3, normal: &[[f64; 3]; 3]) {
        self.a = geom::mat_mul(m, &self.a);
        self.b = geom::add(geom::mat_vec(m, geom::sub(self.b, pivot)), pivot);
        self.normal = geom::mat_mul(normal, &self.normal);
        self.identity = false;
    }

    fn apply(&self, p: Vec3) -> Vec3 {
        geom::add(geom::mat_vec(&self.a, p), self.b)
    }
}

/// Rotations, flips and scaling as one affine map applied in a single pass.
/// Draws and results match `rotate` (z, x, y), `flip` (x, y) and `scale`
/// applied in turn, up to rounding.
pub fn spatial_chain(mut cloud: PointCloud, params: &AugmentParams, rng: &mut Rng) -> PointCloud {
    let c0 = cloud.centroid();
    let mut map = Affine::new();
    for (axis, max) in [(Axis::Z, params.rot_z_max), (Axis::X, params.rot_xy_max), (Axis::Y, params.rot_xy_max)] {
        let angle = rng.uniform(-max, max);
        if angle != 0.0 {
            let pivot = if axis == Axis::Z { map.apply(c0) } else { [0.0; 3] };
            let m = geom::axis_rotation(axis.index(), angle);
            map.then_linear(&m, pivot, &m);
        }
    }
    for axis in [Axis::X, Axis::Y] {
        if rng.bernoulli(params.flip_prob) {
            let mut f = Affine::IDENTITY;
            f[axis.index()][axis.index()] = -1.0;
            map.then_linear(&f, map.apply(c0), &f);
        }
    }
    let s = rng.uniform(params.scale_range[0], params.scale_range[1]);
    if s != 1.0 {
        let m = [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]];
        map.then_linear(&m, map.apply(c0), &Affine::IDENTITY);
    }
    if map.identity {
        return cloud;
    }
    for p in &mut cloud.positions {
        *p = map.apply(*p);
    }
    if let Some(normals) = cloud.normals.as_mut() {
        for n in normals {
            *n = geom::mat_vec(&map.normal, *n);
        }
    }
    cloud
}

// ---- sampling ----------------------------------------------------------

/// Rows kept by voxel grid sampling of `positions`: one representative per
/// occupied voxel `⌊p / voxel_size⌋`, drawn uniformly among its inhabitants.
/// Returned in ascending row order.
pub fn grid_sample_rows(positions: &[Vec3], voxel_size: f64, rng: &mut Rng) -> Vec<usize> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let inv = 1.0 / voxel_size;
    let cell = |p: &Vec3| p.map(|v| geom::floor_i64(v * inv));
    let mut lo = cell(&positions[0]);
    let mut hi = lo;
    for c in positions.iter().map(cell) {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let bits: Vec<u32> = (0..3)
        .map(|a| 64 - ((hi[a] - lo[a]) as u64).leading_zeros())
        .collect();
    assert!(
        bits.iter().sum::<u32>() <= 64,
        "voxel lattice too large to pack ({bits:?} bits)"
    );
    let key = |p: &Vec3| {
        let c = cell(p);
        ((c[0] - lo[0]) as u64) << (bits[1] + bits[2]) | ((c[1] - lo[1]) as u64) << bits[2] | (c[2] - lo[2]) as u64
    };
    // LSD radix sort is stable, so rows within a voxel stay ascending.
    if bits.iter().sum::<u32>() <= 32 {
        let mut keyed: Vec<(u32, u32)> = positions.iter().enumerate().map(|(row, p)| (key(p) as u32, row as u32)).collect();
        radsort::sort_by_key(&mut keyed, |&(k, _)| k);
        pick_per_cell(&keyed, rng)
    } else {
        let mut keyed: Vec<(u64, u32)> = positions.iter().enumerate().map(|(row, p)| (key(p), row as u32)).collect();
        radsort::sort_by_key(&mut keyed, |&(k, _)| k);
        pick_per_cell(&keyed, rng)
    }
}

/// One uniformly drawn row per run of equal keys, in ascending row order.
fn pick_per_cell<K: Copy + Eq>(keyed: &[(K, u32)], rng: &mut Rng) -> Vec<usize> {
    let n = keyed.len();
    let mut keep = vec![false; n];
    let mut start = 0;
    while start < n {
        let key = keyed[start].0;
        let mut end = start + 1;
        while end < n && keyed[end].0 == key {
            end += 1;
        }
        let pick = if end - start == 1 {
            start
        } else {
            start + rng.below(end - start)
        };
        keep[keyed[pick].1 as usize] = true;
        start = end;
    }
    keep.iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect()
}

pub fn grid_sample(cloud: PointCloud, voxel_size: f64, rng: &mut Rng) -> PointCloud {
    let rows = grid_sample_rows(&cloud.positions, voxel_size, rng);
    if rows.len() == cloud.len() {
        return cloud;
    }
    cloud.select(&rows)
}

/// Rows kept by a cube crop around a random seed point. The half-extent is the
/// Chebyshev radius that keeps `round(ρ·n)` points; ties at that radius are
/// kept. Falls back to all rows if the kept fraction leaves `ρ ± 2%`.
pub fn random_crop_rows(positions: &[Vec3], keep_range: [f64; 2], rng: &mut Rng) -> Vec<usize> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let rho = rng.uniform(keep_range[0], keep_range[1]);
    let seed = positions[rng.below(n)];
    let target = ((rho * n as f64).round() as usize).clamp(1, n);
    if target == n {
        return (0..n).collect();
    }
    let radius = |p: &Vec3| {
        (p[0] - seed[0])
            .abs()
            .max((p[1] - seed[1]).abs())
            .max((p[2] - seed[2]).abs())
    };
    let half_extent = kth_smallest(positions.iter().map(radius).collect(), target - 1);
    let rows: Vec<usize> = positions
        .iter()
        .enumerate()
        .filter_map(|(i, p)| (radius(p) <= half_extent).then_some(i))
        .collect();
    let kept = rows.len() as f64 / n as f64;
    if (kept - rho).abs() <= CROP_TOLERANCE {
        rows
    } else {
        (0..n).collect()
    }
}

/// The `k`-th smallest (0-based) of non-negative finite `values`. A
/// histogram pass narrows the search to one bucket before selecting.
fn kth_smallest(values: Vec<f64>, k: usize) -> f64 {
    const BUCKETS: usize = 4096;
    let max = values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let scale = BUCKETS as f64 / max;
    let bucket = |v: f64| ((v * scale) as usize).min(BUCKETS - 1);
    let mut counts = vec![0usize; BUCKETS];
    for &v in &values {
        counts[bucket(v)] += 1;
    }
    let mut below = 0;
    let mut b = 0;
    while below + counts[b] <= k {
        below += counts[b];
        b += 1;
    }
    let mut inside: Vec<f64> = values.into_iter().filter(|&v| bucket(v) == b).collect();
    *inside.select_nth_unstable_by(k - below, f64::total_cmp).1
}

pub fn random_crop(cloud: PointCloud, keep_range: [f64; 2], rng: &mut Rng) -> PointCloud {
    let rows = random_crop_rows(&cloud.positions, keep_range, rng);
    if rows.len() == cloud.len() {
        return cloud;
    }
    cloud.select(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_cloud(values: &[f64]) -> PointCloud {
        let n = values.len();
        PointCloud::new(
            (0..n).map(|i| [i as f64, 0.0, 0.0]).collect(),
            values.iter().map(|&v| [v; 3]).collect(),
            None,
        )
        .unwrap()
    }

    fn cube_corners() -> PointCloud {
        let mut pos = Vec::new();
        for i in 0..8 {
            pos.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        // nudge inward so every corner sits strictly inside the half-open voxel
        let pos = pos.into_iter().map(|p| p.map(|v| v * 0.999 + 0.0005)).collect();
        PointCloud::new(pos, vec![[0.5; 3]; 8], None).unwrap()
    }

    #[test]
    fn brightness_cases() {
        assert_eq!(
            jitter_brightness(gray_cloud(&[0.3]), 0.0, &mut Rng::new(0)).colors[0],
            [0.3; 3]
        );
        let c = apply_brightness(gray_cloud(&[0.5]), 1.2).colors[0];
        assert!(c.iter().all(|v| (v - 0.6).abs() < 1e-15));
        assert_eq!(apply_brightness(gray_cloud(&[0.9]), 1.5).colors[0], [1.0; 3]);
    }

    #[test]
    fn contrast_cases() {
        let base = gray_cloud(&[0.2, 0.8]);
        assert_eq!(apply_contrast(base.clone(), 1.0), base);
        let c = apply_contrast(base, 0.5);
        assert!((c.colors[0][0] - 0.35).abs() < 1e-12);
        assert!((c.colors[1][2] - 0.65).abs() < 1e-12);
        let uniform = PointCloud::new(vec![[0.0; 3], [1.0; 3]], vec![[0.3, 0.3, 0.3]; 2], None).unwrap();
        let out = apply_contrast(uniform.clone(), 1.7);
        for (a, b) in out.colors.iter().flatten().zip(uniform.colors.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(apply_contrast(PointCloud::default(), 2.0).is_empty());
    }

    #[test]
    fn saturation_cases() {
        let red = PointCloud::new(vec![[0.0; 3]], vec![[1.0, 0.0, 0.0]], None).unwrap();
        assert_eq!(apply_saturation(red.clone(), 1.0).colors, red.colors);
        let half = apply_saturation(red.clone(), 0.5).colors[0];
        for (a, b) in half.iter().zip([0.6495, 0.1495, 0.1495]) {
            assert!((a - b).abs() < 1e-12, "{half:?}");
        }
        let gray = apply_saturation(red, 0.0).colors[0];
        assert!(gray.iter().all(|v| (v - 0.299).abs() < 1e-12));
    }

    #[test]
    fn hue_cases() {
        let red = PointCloud::new(vec![[0.0; 3]], vec![[1.0, 0.0, 0.0]], None).unwrap();
        let g = apply_hue_shift(red, 1.0 / 3.0).colors[0];
        for (a, b) in g.iter().zip([0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut rng = Rng::new(4);
        let colors: Vec<Vec3> = (0..200).map(|_| [rng.unit(), rng.unit(), rng.unit()]).collect();
        let cloud = PointCloud::new(vec![[0.0; 3]; 200], colors.clone(), None)
            .map(|mut c| {
                c.positions = (0..200).map(|i| [i as f64; 3]).collect();
                c
            })
            .unwrap();
        let back = apply_hue_shift(apply_hue_shift(cloud, 0.137), -0.137);
        for (a, b) in back.colors.iter().flatten().zip(colors.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_cases() {
        let c = gray_cloud(&[0.5; 4]);
        assert_eq!(gaussian_color_noise(c.clone(), 0.0, &mut Rng::new(1)), c);
        let noisy = gaussian_color_noise(gray_cloud(&[0.0, 1.0, 0.5]), 0.5, &mut Rng::new(1));
        assert!(noisy.colors.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rotate_unit_x_about_origin() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0]], vec![[0.0; 3]], Some(vec![[1.0, 0.0, 0.0]])).unwrap();
        let r = apply_rotation(c, Axis::Z, PI / 2.0, [0.0; 3]);
        assert!(geom::norm(geom::sub(r.positions[0], [0.0, 1.0, 0.0])) < 1e-15);
        assert!((geom::norm(r.normals.unwrap()[0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flip_and_scale_basics() {
        let c = gray_cloud(&[0.1, 0.2, 0.3]);
        assert_eq!(flip(c.clone(), Axis::X, 0.0, &mut Rng::new(0)), c);
        let twice = apply_flip(apply_flip(c.clone(), Axis::X), Axis::X);
        for (a, b) in twice.positions.iter().flatten().zip(c.positions.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(apply_scale(c.clone(), 1.0), c);
        let s = apply_scale(c, 1.5);
        assert!((geom::norm(geom::sub(s.positions[2], s.positions[0])) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scale_bounding_box_volume() {
        let c = cube_corners();
        let volume = |c: &PointCloud| {
            let (lo, hi) = geom::bounds(&c.positions).unwrap();
            (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
        };
        let s = apply_scale(c.clone(), 1.3);
        assert!((volume(&s) / volume(&c) - 1.3f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn grid_sample_cube_corners() {
        assert_eq!(grid_sample(cube_corners(), 2.0, &mut Rng::new(0)).len(), 1);
        assert_eq!(grid_sample(cube_corners(), 0.5, &mut Rng::new(0)).len(), 8);
        assert!(grid_sample(PointCloud::default(), 0.5, &mut Rng::new(0)).is_empty());
    }

    #[test]
    fn grid_sample_picks_every_inhabitant_eventually() {
        let c = cube_corners();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            let s = grid_sample(c.clone(), 2.0, &mut Rng::new(seed));
            seen.insert(s.origin_index[0]);
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn crop_identity_and_subset() {
        let mut rng = Rng::new(11);
        let pos: Vec<Vec3> = (0..1000).map(|_| [rng.unit(), rng.unit(), rng.unit()]).collect();
        let c = PointCloud::new(pos, vec![[0.5; 3]; 1000], None).unwrap();
        assert_eq!(random_crop(c.clone(), [1.0, 1.0], &mut Rng::new(2)), c);
        let cropped = random_crop(c.clone(), [0.3, 0.5], &mut Rng::new(2));
        assert!((290..=520).contains(&cropped.len()), "{}", cropped.len());
        assert!(cropped.origin_index.iter().all(|i| c.origin_index.contains(i)));
        assert!(random_crop(PointCloud::default(), [0.5, 0.5], &mut Rng::new(0)).is_empty());
    }

    #[test]
    fn params_validation() {
        assert!(AugmentParams::default().validate().is_ok());
        let bad = AugmentParams {
            hue: 0.7,
            ..AugmentParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentParams {
            crop_keep_range: [0.0, 1.0],
            ..AugmentParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spatial_chain_matches_operator_sequence() {
        let mut rng = Rng::new(12);
        let n = 200;
        let positions: Vec<Vec3> = (0..n).map(|_| [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.unit()]).collect();
        let normals: Vec<Vec3> = (0..n).map(|_| geom::normalize([rng.normal(), rng.normal(), rng.normal()])).collect();
        let cloud = PointCloud::new(positions, vec![[0.5; 3]; n], Some(normals)).unwrap();
        let params = AugmentParams {
            rot_xy_max: 0.5,
            ..AugmentParams::default()
        };
        for seed in 0..50 {
            let mut a = Rng::new(seed);
            let mut b = Rng::new(seed);
            let mut seq = rotate(cloud.clone(), Axis::Z, params.rot_z_max, &mut a);
            seq = rotate(seq, Axis::X, params.rot_xy_max, &mut a);
            seq = rotate(seq, Axis::Y, params.rot_xy_max, &mut a);
            seq = flip(seq, Axis::X, params.flip_prob, &mut a);
            seq = flip(seq, Axis::Y, params.flip_prob, &mut a);
            seq = scale(seq, params.scale_range, &mut a);
            let chain = spatial_chain(cloud.clone(), &params, &mut b);
            assert_eq!(a.next_u64(), b.next_u64());
            let close = |x: &[Vec3], y: &[Vec3]| x.iter().zip(y).all(|(p, q)| geom::dist2(*p, *q) < 1e-22);
            assert!(close(&seq.positions, &chain.positions));
            assert!(close(seq.normals.as_ref().unwrap(), chain.normals.as_ref().unwrap()));
        }
        let id = AugmentParams::identity(0.1);
        assert_eq!(spatial_chain(cloud.clone(), &id, &mut rng), cloud);
    }

    #[test]
    fn kth_smallest_matches_sort() {
        let mut rng = Rng::new(13);
        for _ in 0..200 {
            let n = 1 + rng.below(3000);
            let distinct = 1 + rng.below(50);
            let ties = rng.bernoulli(0.5);
            let values: Vec<f64> = (0..n)
                .map(|_| if ties { rng.below(distinct) as f64 } else { rng.uniform(0.0, 5.0) })
                .collect();
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let k = rng.below(n);
            assert_eq!(kth_smallest(values, k), sorted[k]);
        }
        let spread: Vec<f64> = (0..1000).map(|i| (i as f64).powi(3)).collect();
        assert_eq!(kth_smallest(spread, 10), 1000.0);
        assert_eq!(kth_smallest(vec![0.0; 5], 3), 0.0);
    }
}
