// SPDX-License-Identifier: Apache-2.0

//! Synthetic indoor scenes: a room shell with boxes and spheres, sampled at a
//! fixed surface density, carrying analytic normals.

use crate::cloud::PointCloud;
use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shell {
    /// Floor plus four walls.
    Room,
    FloorOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorScheme {
    /// Fixed palette indexed by primitive.
    Palette,
    /// Random base color per primitive.
    Random,
}

impl ColorScheme {
    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(ColorScheme::Palette),
            1 => Some(ColorScheme::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Room size in meters; the floor spans `[0, x] × [0, y]` at `z = 0`.
    pub extent: Vec3,
    pub shell: Shell,
    pub boxes: usize,
    pub spheres: usize,
    /// Points per square meter of surface.
    pub density: f64,
    pub colors: ColorScheme,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: [3.0, 3.0, 2.0],
            shell: Shell::Room,
            boxes: 3,
            spheres: 2,
            density: 50.0,
            colors: ColorScheme::Palette,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.extent.iter().all(|&e| e.is_finite() && e > 0.0) {
            return Err(MscError::invalid("scene extent must be positive"));
        }
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(MscError::invalid("scene density must be positive"));
        }
        Ok(())
    }
}

const PALETTE: [Vec3; 8] = [
    [0.78, 0.74, 0.66],
    [0.55, 0.62, 0.70],
    [0.70, 0.55, 0.45],
    [0.45, 0.65, 0.50],
    [0.80, 0.70, 0.35],
    [0.60, 0.45, 0.65],
    [0.35, 0.50, 0.75],
    [0.85, 0.45, 0.40],
];

/// A planar rectangle `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
struct Rect {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    normal: Vec3,
}

impl Rect {
    fn area(&self) -> f64 {
        geom::norm(geom::cross(self.u, self.v))
    }
}

struct Builder<'a> {
    spec: &'a SceneSpec,
    positions: Vec<Vec3>,
    colors: Vec<Vec3>,
    normals: Vec<Vec3>,
    primitive: usize,
}

impl Builder<'_> {
    fn base_color(&mut self, rng: &mut Rng) -> Vec3 {
        let c = match self.spec.colors {
            ColorScheme::Palette => PALETTE[self.primitive % PALETTE.len()],
            ColorScheme::Random => [
                rng.uniform(0.15, 0.85),
                rng.uniform(0.15, 0.85),
                rng.uniform(0.15, 0.85),
            ],
        };
        self.primitive += 1;
        c
    }

    /// Base color plus a gentle linear ramp across the room.
    fn shade(&self, base: Vec3, p: Vec3) -> Vec3 {
        let e = self.spec.extent;
        let t = (p[0] / e[0] + p[1] / e[1] + p[2] / e[2]) / 3.0 - 0.5;
        [
            (base[0] + 0.2 * t).clamp(0.0, 1.0),
            (base[1] + 0.1 * t).clamp(0.0, 1.0),
            (base[2] - 0.15 * t).clamp(0.0, 1.0),
        ]
    }

    fn count_for(&self, area: f64, what: &str) -> usize {
        let n = (area * self.spec.density).round() as usize;
        if n == 0 {
            log::warn!("{what} receives no points at density {}; omitted", self.spec.density);
        }
        n
    }

    fn rects(&mut self, rects: &[Rect], what: &str, rng: &mut Rng) {
        let base = self.base_color(rng);
        for r in rects {
            let n = self.count_for(r.area(), what);
            for _ in 0..n {
                let (s, t) = (rng.unit(), rng.unit());
                let p = geom::add(r.origin, geom::add(geom::scale(r.u, s), geom::scale(r.v, t)));
                self.positions.push(p);
                self.colors.push(self.shade(base, p));
                self.normals.push(r.normal);
            }
        }
    }

    fn sphere(&mut self, center: Vec3, radius: f64, rng: &mut Rng) {
        let base = self.base_color(rng);
        let n = self.count_for(4.0 * std::f64::consts::PI * radius * radius, "sphere");
        for _ in 0..n {
            let dir = loop {
                let g = [rng.normal(), rng.normal(), rng.normal()];
                let len = geom::norm(g);
                if len > 1e-9 {
                    break geom::scale(g, 1.0 / len);
                }
            };
            let p = geom::add(center, geom::scale(dir, radius));
            self.positions.push(p);
            self.colors.push(self.shade(base, p));
            self.normals.push(dir);
        }
    }
}

/// Samples a scene described by `spec`.
pub fn synth_scene(spec: &SceneSpec, rng: &mut Rng) -> Result<PointCloud> {
    spec.validate()?;
    let [ex, ey, ez] = spec.extent;
    let mut b = Builder {
        spec,
        positions: Vec::new(),
        colors: Vec::new(),
        normals: Vec::new(),
        primitive: 0,
    };

    b.rects(
        &[Rect {
            origin: [0.0; 3],
            u: [ex, 0.0, 0.0],
            v: [0.0, ey, 0.0],
            normal: [0.0, 0.0, 1.0],
        }],
        "floor",
        rng,
    );
    if spec.shell == Shell::Room {
        let walls = [
            ([0.0, 0.0, 0.0], [0.0, ey, 0.0], [1.0, 0.0, 0.0]),
            ([ex, 0.0, 0.0], [0.0, ey, 0.0], [-1.0, 0.0, 0.0]),
            ([0.0, 0.0, 0.0], [ex, 0.0, 0.0], [0.0, 1.0, 0.0]),
            ([0.0, ey, 0.0], [ex, 0.0, 0.0], [0.0, -1.0, 0.0]),
        ];
        for (origin, u, normal) in walls {
            b.rects(
                &[Rect {
                    origin,
                    u,
                    v: [0.0, 0.0, ez],
                    normal,
                }],
                "wall",
                rng,
            );
        }
    }

    for _ in 0..spec.boxes {
        let size = [
            rng.uniform(0.3, 1.0).min(0.5 * ex),
            rng.uniform(0.3, 1.0).min(0.5 * ey),
            rng.uniform(0.3, 1.2).min(0.8 * ez),
        ];
        let lo = [
            rng.uniform(0.0, ex - size[0]),
            rng.uniform(0.0, ey - size[1]),
            0.0,
        ];
        let hi = geom::add(lo, size);
        let (sx, sy, sz) = (size[0], size[1], size[2]);
        let faces = [
            Rect {
                origin: [lo[0], lo[1], hi[2]],
                u: [sx, 0.0, 0.0],
                v: [0.0, sy, 0.0],
                normal: [0.0, 0.0, 1.0],
            },
            Rect {
                origin: lo,
                u: [0.0, sy, 0.0],
                v: [0.0, 0.0, sz],
                normal: [-1.0, 0.0, 0.0],
            },
            Rect {
                origin: [hi[0], lo[1], lo[2]],
                u: [0.0, sy, 0.0],
                v: [0.0, 0.0, sz],
                normal: [1.0, 0.0, 0.0],
            },
            Rect {
                origin: lo,
                u: [sx, 0.0, 0.0],
                v: [0.0, 0.0, sz],
                normal: [0.0, -1.0, 0.0],
            },
            Rect {
                origin: [lo[0], hi[1], lo[2]],
                u: [sx, 0.0, 0.0],
                v: [0.0, 0.0, sz],
                normal: [0.0, 1.0, 0.0],
            },
        ];
        b.rects(&faces, "box face", rng);
    }

    for _ in 0..spec.spheres {
        let radius = rng
            .uniform(0.15, 0.45)
            .min(0.45 * ex.min(ey).min(ez));
        let center = [
            rng.uniform(radius, ex - radius),
            rng.uniform(radius, ey - radius),
            rng.uniform(radius, ez - radius),
        ];
        b.sphere(center, radius, rng);
    }

    PointCloud::new(b.positions, b.colors, Some(b.normals))
}

/// A sphere-only cloud, used by normal-estimation checks.
pub fn synth_sphere(center: Vec3, radius: f64, density: f64, rng: &mut Rng) -> Result<PointCloud> {
    let spec = SceneSpec {
        extent: [1.0; 3],
        shell: Shell::FloorOnly,
        boxes: 0,
        spheres: 0,
        density,
        colors: ColorScheme::Palette,
    };
    spec.validate()?;
    let mut b = Builder {
        spec: &spec,
        positions: Vec::new(),
        colors: Vec::new(),
        normals: Vec::new(),
        primitive: 0,
    };
    b.sphere(center, radius, rng);
    PointCloud::new(b.positions, b.colors, Some(b.normals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_only_square_meter() {
        let spec = SceneSpec {
            extent: [1.0, 1.0, 1.0],
            shell: Shell::FloorOnly,
            boxes: 0,
            spheres: 0,
            density: 100.0,
            colors: ColorScheme::Palette,
        };
        let c = synth_scene(&spec, &mut Rng::new(0)).unwrap();
        assert_eq!(c.len(), 100);
        for (p, n) in c.positions.iter().zip(c.normals.as_ref().unwrap()) {
            assert_eq!(*n, [0.0, 0.0, 1.0]);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn sphere_points_on_surface() {
        let center = [0.3, -0.2, 1.1];
        let c = synth_sphere(center, 0.4, 300.0, &mut Rng::new(9)).unwrap();
        assert!(c.len() > 500);
        for (p, n) in c.positions.iter().zip(c.normals.as_ref().unwrap()) {
            let d = geom::sub(*p, center);
            assert!((geom::norm(d) - 0.4).abs() < 1e-6);
            let radial = geom::scale(d, 1.0 / 0.4);
            assert!(geom::norm(geom::sub(radial, *n)) < 1e-6);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec::default();
        let a = synth_scene(&spec, &mut Rng::new(5)).unwrap();
        let b = synth_scene(&spec, &mut Rng::new(5)).unwrap();
        let c = synth_scene(&spec, &mut Rng::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn room_normals_point_inward() {
        let c = synth_scene(&SceneSpec::default(), &mut Rng::new(1)).unwrap();
        let mid = [1.5, 1.5, 1.0];
        let normals = c.normals.as_ref().unwrap();
        // shell points: the interior lies on the normal side
        for (p, n) in c.positions.iter().zip(normals).take(9 * 50) {
            assert!(geom::dot(geom::sub(mid, *p), *n) > 0.0);
        }
    }

    #[test]
    fn sparse_density_omits_primitives() {
        let spec = SceneSpec {
            density: 1e-3,
            ..SceneSpec::default()
        };
        let c = synth_scene(&spec, &mut Rng::new(1)).unwrap();
        assert_eq!(c.len(), 0);
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SceneSpec {
            density: 0.0,
            ..SceneSpec::default()
        };
        assert!(synth_scene(&spec, &mut Rng::new(1)).is_err());
    }
}
