// SPDX-License-Identifier: Apache-2.0

//! RGB/HSV conversion and luminance, all channels in `[0, 1]`.

use crate::geom::Vec3;

pub const LUMA: Vec3 = [0.299, 0.587, 0.114];

#[inline]
pub fn luminance(c: Vec3) -> f64 {
    LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]
}

/// Hue in `[0, 1)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(c: Vec3) -> Vec3 {
    let [r, g, b] = c;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    [(h / 6.0).rem_euclid(1.0), s, v]
}

pub fn hsv_to_rgb(hsv: Vec3) -> Vec3 {
    let [h, s, v] = hsv;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i64).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        assert_eq!(rgb_to_hsv([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        let g = rgb_to_hsv([0.0, 1.0, 0.0]);
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-15);
        let back = hsv_to_rgb([2.0 / 3.0, 1.0, 1.0]);
        assert!((back[2] - 1.0).abs() < 1e-12 && back[0].abs() < 1e-12);
    }

    #[test]
    fn gray_has_zero_saturation() {
        assert_eq!(rgb_to_hsv([0.4, 0.4, 0.4]), [0.0, 0.0, 0.4]);
        assert_eq!(hsv_to_rgb([0.7, 0.0, 0.4]), [0.4, 0.4, 0.4]);
    }
}
