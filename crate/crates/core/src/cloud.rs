// SPDX-License-Identifier: Apache-2.0

use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};

/// Tolerance on the length of a stored normal.
pub const NORMAL_UNIT_TOL: f64 = 1e-6;

/// A colored point set with optional normals.
///
/// `origin_index[i]` names the row of the ancestor cloud point `i` descends
/// from. A freshly loaded or synthesized cloud has `origin_index = 0..n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub origin_index: Vec<u32>,
}

impl PointCloud {
    /// Builds a cloud with `origin_index = 0..n` and checks invariants.
    pub fn new(positions: Vec<Vec3>, colors: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        let n = positions.len();
        let cloud = Self {
            positions,
            colors,
            normals,
            origin_index: (0..n as u32).collect(),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.len() != n || self.origin_index.len() != n {
            return Err(MscError::DimMismatch(format!(
                "positions {n}, colors {}, origin_index {}",
                self.colors.len(),
                self.origin_index.len()
            )));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(MscError::DimMismatch(format!(
                    "positions {n}, normals {}",
                    normals.len()
                )));
            }
            for (i, nrm) in normals.iter().enumerate() {
                let len = geom::norm(*nrm);
                if !((1.0 - NORMAL_UNIT_TOL)..=(1.0 + NORMAL_UNIT_TOL)).contains(&len) {
                    return Err(MscError::invalid(format!("normal {i} has length {len}")));
                }
            }
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(MscError::invalid(format!("position {i} is not finite")));
            }
        }
        for (i, c) in self.colors.iter().enumerate() {
            if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(MscError::invalid(format!("color {i} outside [0, 1]")));
            }
        }
        let mut seen = self.origin_index.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(MscError::invalid("origin_index values repeat"));
        }
        Ok(())
    }

    /// Rows `rows` of this cloud, in the given order, all fields carried.
    pub fn select(&self, rows: &[usize]) -> PointCloud {
        PointCloud {
            positions: rows.iter().map(|&r| self.positions[r]).collect(),
            colors: rows.iter().map(|&r| self.colors[r]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| rows.iter().map(|&r| ns[r]).collect()),
            origin_index: rows.iter().map(|&r| self.origin_index[r]).collect(),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        geom::centroid(&self.positions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PointCloud {
        PointCloud::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vec![[0.1, 0.2, 0.3], [1.0, 1.0, 1.0]],
            Some(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]),
        )
        .unwrap()
    }

    #[test]
    fn new_assigns_identity_origin() {
        assert_eq!(tiny().origin_index, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_color() {
        let err = PointCloud::new(vec![[0.0; 3]], vec![[1.5, 0.0, 0.0]], None);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_non_unit_normal() {
        let err = PointCloud::new(vec![[0.0; 3]], vec![[0.0; 3]], Some(vec![[0.0, 0.0, 2.0]]));
        assert!(err.is_err());
    }

    #[test]
    fn rejects_repeated_origin() {
        let mut c = tiny();
        c.origin_index = vec![4, 4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn select_keeps_all_fields() {
        let c = tiny().select(&[1]);
        assert_eq!(c.positions, vec![[1.0, 0.0, 0.0]]);
        assert_eq!(c.normals.unwrap(), vec![[1.0, 0.0, 0.0]]);
        assert_eq!(c.origin_index, vec![1]);
    }
}
