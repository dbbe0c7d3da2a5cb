//! Small geometric helpers shared across modules.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Axis-aligned box in scene units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    /// Per-axis side lengths.
    pub fn extent(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn diagonal(&self) -> f64 {
        let d = Vector3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        );
        d.norm()
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_aabb(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    /// Grow every face outward by `pad` scene units.
    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: [self.min[0] - pad, self.min[1] - pad, self.min[2] - pad],
            max: [self.max[0] + pad, self.max[1] + pad, self.max[2] + pad],
        }
    }

    /// Map a point into the unit cube of this box, clamped to [0,1]³.
    pub fn normalize_clamped(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for i in 0..3 {
            let extent = self.max[i] - self.min[i];
            out[i] = ((p[i] - self.min[i]) / extent).clamp(0.0, 1.0);
        }
        out
    }

    /// Parametric intersection of `origin + t*dir` with the box, clipped to
    /// [t_near, t_far]. Returns None when the ray misses entirely.
    pub fn clip_ray(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        t_near: f64,
        t_far: f64,
    ) -> Option<(f64, f64)> {
        let mut t0 = t_near;
        let mut t1 = t_far;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_ray_through_unit_box() {
        let b = Aabb::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
        let (t0, t1) = b
            .clip_ray(&Vector3::new(0.0, 0.0, -3.0), &Vector3::new(0.0, 0.0, 1.0), 0.05, 1000.0)
            .unwrap();
        assert!((t0 - 2.0).abs() < 1e-12);
        assert!((t1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clip_ray_miss() {
        let b = Aabb::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
        assert!(b
            .clip_ray(&Vector3::new(0.0, 5.0, -3.0), &Vector3::new(0.0, 0.0, 1.0), 0.05, 1000.0)
            .is_none());
    }

    #[test]
    fn normalize_clamps_outside_points() {
        let b = Aabb::new([0.0, 0.0, 0.0], [2.0, 2.0, 2.0]);
        let p = b.normalize_clamped(&Vector3::new(-1.0, 1.0, 5.0));
        assert_eq!(p, Vector3::new(0.0, 0.5, 1.0));
    }
}
