//! Analytic organ primitives: exact ray intersections, outward normals,
//! surface areas, uniform surface sampling, and point-to-surface distances.
//! Everything downstream (rendering, ground-truth clouds, label transfer)
//! leans on these being exact, so no meshes are involved anywhere.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

/// Shape in its local frame. Capsule axis runs along local z from -half_length
/// to +half_length; ellipsoid semi-axes align with local x/y/z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
    Capsule { half_length: f64, radius: f64 },
}

/// One plant organ: a placed shape with semantic class, scene-wide instance
/// ID, and albedo.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganPrimitive {
    pub shape: Shape,
    /// 1=stem, 2=leaf, 3=fruit, 4=flower (0 is reserved for background).
    pub semantic_class: u8,
    pub instance_id: u32,
    /// Local-to-world rotation.
    pub rot: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub base_color: [f64; 3],
}

impl OrganPrimitive {
    fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.transpose() * (p - self.center)
    }

    /// Smallest intersection t > t_min of `origin + t*dir` with the surface,
    /// together with the outward world-frame unit normal at the hit.
    pub fn intersect(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
    ) -> Option<(f64, Vector3<f64>)> {
        let o = self.to_local(origin);
        let d = self.rot.transpose() * dir;
        let hit = match self.shape {
            Shape::Sphere { radius } => intersect_sphere(&o, &d, radius, t_min)
                .map(|t| (t, (o + t * d) / radius)),
            Shape::Ellipsoid { semi_axes } => {
                let a = Vector3::new(semi_axes[0], semi_axes[1], semi_axes[2]);
                let os = o.component_div(&a);
                let ds = d.component_div(&a);
                intersect_unit_quadric(&os, &ds, t_min).map(|t| {
                    let q = o + t * d;
                    let n = Vector3::new(q.x / (a.x * a.x), q.y / (a.y * a.y), q.z / (a.z * a.z));
                    (t, n.normalize())
                })
            }
            Shape::Capsule { half_length, radius } => {
                intersect_capsule(&o, &d, half_length, radius, t_min)
            }
        };
        hit.map(|(t, n_local)| (t, self.rot * n_local))
    }

    /// Exact surface area (ellipsoid by adaptive-resolution quadrature).
    pub fn surface_area(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
            Shape::Ellipsoid { semi_axes } => ellipsoid_area(semi_axes),
            Shape::Capsule { half_length, radius } => {
                let pi = std::f64::consts::PI;
                2.0 * pi * radius * (2.0 * half_length) + 4.0 * pi * radius * radius
            }
        }
    }

    /// Uniform sample on the surface: world position and outward world normal.
    pub fn sample_surface(&self, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
        let (p_local, n_local) = match self.shape {
            Shape::Sphere { radius } => {
                let u = unit_sphere_dir(rng);
                (radius * u, u)
            }
            Shape::Ellipsoid { semi_axes } => sample_ellipsoid(semi_axes, rng),
            Shape::Capsule { half_length, radius } => sample_capsule(half_length, radius, rng),
        };
        (self.rot * p_local + self.center, self.rot * n_local)
    }

    /// Unsigned distance from a world point to the surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let q = self.to_local(p);
        match self.shape {
            Shape::Sphere { radius } => (q.norm() - radius).abs(),
            Shape::Ellipsoid { semi_axes } => ellipsoid_surface_distance(semi_axes, &q),
            Shape::Capsule { half_length, radius } => {
                let z = q.z.clamp(-half_length, half_length);
                let on_axis = Vector3::new(0.0, 0.0, z);
                ((q - on_axis).norm() - radius).abs()
            }
        }
    }

    /// World-frame axis-aligned bounding box.
    pub fn aabb(&self) -> crate::geom::Aabb {
        let (local_center_extent, pad) = match self.shape {
            Shape::Sphere { radius } => (Vector3::zeros(), Vector3::repeat(radius)),
            Shape::Ellipsoid { semi_axes } => {
                // Rotated-ellipsoid AABB: half-extent_i = sqrt(sum_j (R_ij a_j)^2).
                let a = semi_axes;
                let mut ext = Vector3::zeros();
                for i in 0..3 {
                    let mut s = 0.0;
                    for (j, aj) in a.iter().enumerate() {
                        let r = self.rot[(i, j)] * aj;
                        s += r * r;
                    }
                    ext[i] = s.sqrt();
                }
                return crate::geom::Aabb::new(
                    [self.center.x - ext.x, self.center.y - ext.y, self.center.z - ext.z],
                    [self.center.x + ext.x, self.center.y + ext.y, self.center.z + ext.z],
                );
            }
            Shape::Capsule { half_length, radius } => {
                let axis = self.rot * Vector3::new(0.0, 0.0, half_length);
                let ext = Vector3::new(axis.x.abs(), axis.y.abs(), axis.z.abs());
                (ext, Vector3::repeat(radius))
            }
        };
        let ext = local_center_extent + pad;
        crate::geom::Aabb::new(
            [self.center.x - ext.x, self.center.y - ext.y, self.center.z - ext.z],
            [self.center.x + ext.x, self.center.y + ext.y, self.center.z + ext.z],
        )
    }
}

fn intersect_sphere(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, t_min: f64) -> Option<f64> {
    // |o + t d|^2 = r^2 with |d| = 1.
    let b = o.dot(d);
    let c = o.dot(o) - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    smallest_root(-b - s, -b + s, t_min)
}

/// Unit-sphere intersection with a non-unit direction (scaled ellipsoid space).
fn intersect_unit_quadric(o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64) -> Option<f64> {
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    smallest_root((-b - s) / a, (-b + s) / a, t_min)
}

fn intersect_capsule(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    h: f64,
    r: f64,
    t_min: f64,
) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut consider = |t: f64, n: Vector3<f64>| {
        if t > t_min && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };

    // Infinite cylinder x^2 + y^2 = r^2, valid while |z| <= h.
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / a, (-b + s) / a] {
                let z = o.z + t * d.z;
                if z.abs() <= h {
                    let p = o + t * d;
                    consider(t, Vector3::new(p.x / r, p.y / r, 0.0));
                }
            }
        }
    }

    // Hemispherical caps at z = ±h.
    for cap_z in [h, -h] {
        let cc = Vector3::new(0.0, 0.0, cap_z);
        let oc = o - cc;
        let b = oc.dot(d);
        let c = oc.dot(&oc) - r * r;
        let disc = b * b - c;
        if disc < 0.0 {
            continue;
        }
        let s = disc.sqrt();
        for t in [-b - s, -b + s] {
            let p = o + t * d;
            // The cap owns the region beyond its end plane.
            if (cap_z > 0.0 && p.z >= h) || (cap_z < 0.0 && p.z <= -h) {
                consider(t, (p - cc) / r);
            }
        }
    }
    best
}

fn smallest_root(t0: f64, t1: f64, t_min: f64) -> Option<f64> {
    if t0 > t_min {
        Some(t0)
    } else if t1 > t_min {
        Some(t1)
    } else {
        None
    }
}

fn unit_sphere_dir(rng: &mut impl Rng) -> Vector3<f64> {
    // Uniform via z ∈ [-1,1], azimuth ∈ [0,2π).
    let z = rng.gen::<f64>() * 2.0 - 1.0;
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

fn sample_ellipsoid(axes: [f64; 3], rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    let [a, b, c] = axes;
    // Rejection against the area-distortion factor of the unit-sphere map.
    let g_max = (b * c).max(a * c).max(a * b);
    loop {
        let u = unit_sphere_dir(rng);
        let g = ((b * c * u.x).powi(2) + (a * c * u.y).powi(2) + (a * b * u.z).powi(2)).sqrt();
        if rng.gen::<f64>() * g_max <= g {
            let p = Vector3::new(a * u.x, b * u.y, c * u.z);
            let n = Vector3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).normalize();
            return (p, n);
        }
    }
}

fn sample_capsule(h: f64, r: f64, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    let pi = std::f64::consts::PI;
    let side = 2.0 * pi * r * (2.0 * h);
    let caps = 4.0 * pi * r * r;
    if rng.gen::<f64>() * (side + caps) < side {
        let z = (rng.gen::<f64>() * 2.0 - 1.0) * h;
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        let n = Vector3::new(phi.cos(), phi.sin(), 0.0);
        (Vector3::new(r * n.x, r * n.y, z), n)
    } else {
        let u = unit_sphere_dir(rng);
        let (cap_z, n) = if u.z >= 0.0 {
            (h, u)
        } else {
            (-h, u)
        };
        (Vector3::new(0.0, 0.0, cap_z) + r * n, n)
    }
}

/// Ellipsoid area by midpoint quadrature of |∂r/∂θ × ∂r/∂φ| on a 512×512 grid;
/// relative error below 1e-5 for the aspect ratios used here.
fn ellipsoid_area(axes: [f64; 3]) -> f64 {
    let [a, b, c] = axes;
    let n_theta = 512;
    let n_phi = 512;
    let pi = std::f64::consts::PI;
    let dt = pi / n_theta as f64;
    let dp = 2.0 * pi / n_phi as f64;
    let mut area = 0.0;
    for i in 0..n_theta {
        let theta = (i as f64 + 0.5) * dt;
        let (st, ct) = theta.sin_cos();
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * dp;
            let (sp, cp) = phi.sin_cos();
            // |∂r/∂θ × ∂r/∂φ| for r = (a sinθ cosφ, b sinθ sinφ, c cosθ)
            let x = b * c * st * st * cp;
            let y = a * c * st * st * sp;
            let z = a * b * st * ct;
            area += (x * x + y * y + z * z).sqrt() * dt * dp;
        }
    }
    area
}

/// Nearest-surface distance for a local-frame point via the Lagrange parameter
/// of the closest-point conditions, solved by bracketed bisection. Points deep
/// inside near the short axis may bind to a marginally suboptimal surface
/// point; label transfer only needs stable nearest-primitive ordering.
fn ellipsoid_surface_distance(axes: [f64; 3], q: &Vector3<f64>) -> f64 {
    let a2 = [axes[0] * axes[0], axes[1] * axes[1], axes[2] * axes[2]];
    let g = |t: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            let d = t + a2[i];
            let x = axes[i] * q[i] / d;
            s += x * x;
        }
        s
    };
    let min_a2 = a2.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut lo = -min_a2 + 1e-12 * min_a2.max(1.0);
    if g(lo) <= 1.0 {
        // Point is (numerically) on the degenerate axis; fall back to the
        // closest axis endpoint of the shortest semi-axis.
        let k = (0..3).min_by(|&i, &j| a2[i].partial_cmp(&a2[j]).unwrap()).unwrap();
        let mut p = *q;
        p[k] = axes[k] * if q[k] >= 0.0 { 1.0 } else { -1.0 };
        let mut best = (p - q).norm();
        for i in 0..3 {
            if i == k {
                continue;
            }
            let mut p = *q;
            p[i] = axes[i] * if q[i] >= 0.0 { 1.0 } else { -1.0 };
            best = best.min((p - q).norm());
        }
        return best;
    }
    let mut hi = lo.max(0.0) + axes.iter().cloned().fold(0.0, f64::max) * (1.0 + q.norm());
    while g(hi) > 1.0 {
        hi = hi * 2.0 + 1.0;
    }
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let x = Vector3::new(
        a2[0] * q.x / (t + a2[0]),
        a2[1] * q.y / (t + a2[1]),
        a2[2] * q.z / (t + a2[2]),
    );
    (x - q).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(radius: f64) -> OrganPrimitive {
        OrganPrimitive {
            shape: Shape::Sphere { radius },
            semantic_class: 4,
            instance_id: 1,
            rot: Matrix3::identity(),
            center: Vector3::zeros(),
            base_color: [1.0, 1.0, 1.0],
        }
    }

    #[test]
    fn sphere_axis_hit() {
        let s = sphere(1.0);
        let (t, n) = s
            .intersect(&Vector3::new(0.0, 0.0, -3.0), &Vector3::new(0.0, 0.0, 1.0), 0.0)
            .unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn ellipsoid_hit_matches_scaled_sphere() {
        let e = OrganPrimitive {
            shape: Shape::Ellipsoid { semi_axes: [2.0, 1.0, 0.5] },
            ..sphere(0.0)
        };
        let (t, _) = e
            .intersect(&Vector3::new(-5.0, 0.0, 0.0), &Vector3::new(1.0, 0.0, 0.0), 0.0)
            .unwrap();
        assert!((t - 3.0).abs() < 1e-12);
        // Graze just outside the short axis: miss.
        assert!(e
            .intersect(&Vector3::new(-5.0, 0.0, 0.51), &Vector3::new(1.0, 0.0, 0.0), 0.0)
            .is_none());
    }

    #[test]
    fn capsule_side_and_cap_hits() {
        let c = OrganPrimitive {
            shape: Shape::Capsule { half_length: 1.0, radius: 0.25 },
            ..sphere(0.0)
        };
        let (t, n) = c
            .intersect(&Vector3::new(-2.0, 0.0, 0.5), &Vector3::new(1.0, 0.0, 0.0), 0.0)
            .unwrap();
        assert!((t - 1.75).abs() < 1e-12);
        assert!((n - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        // Straight down onto the top cap.
        let (t, n) = c
            .intersect(&Vector3::new(0.0, 0.0, 3.0), &Vector3::new(0.0, 0.0, -1.0), 0.0)
            .unwrap();
        assert!((t - 1.75).abs() < 1e-12);
        assert!((n - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn areas_match_closed_forms() {
        let pi = std::f64::consts::PI;
        assert!((sphere(2.0).surface_area() - 16.0 * pi).abs() < 1e-9);
        let e = OrganPrimitive { shape: Shape::Ellipsoid { semi_axes: [1.0, 1.0, 1.0] }, ..sphere(0.0) };
        assert!((e.surface_area() - 4.0 * pi).abs() / (4.0 * pi) < 1e-5);
        let c = OrganPrimitive { shape: Shape::Capsule { half_length: 1.5, radius: 0.5 }, ..sphere(0.0) };
        let expected = 2.0 * pi * 0.5 * 3.0 + 4.0 * pi * 0.25;
        assert!((c.surface_area() - expected).abs() < 1e-9);
    }

    #[test]
    fn surface_samples_lie_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shapes = [
            Shape::Sphere { radius: 0.7 },
            Shape::Ellipsoid { semi_axes: [0.9, 0.4, 0.2] },
            Shape::Capsule { half_length: 0.8, radius: 0.3 },
        ];
        for shape in shapes {
            let p = OrganPrimitive { shape, ..sphere(0.0) };
            for _ in 0..500 {
                let (pt, n) = p.sample_surface(&mut rng);
                assert!(p.surface_distance(&pt) < 1e-9);
                assert!((n.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ellipsoid_distance_against_dense_surface_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = OrganPrimitive {
            shape: Shape::Ellipsoid { semi_axes: [1.2, 0.6, 0.3] },
            ..sphere(0.0)
        };
        for _ in 0..50 {
            let q = Vector3::new(
                (rng.gen::<f64>() - 0.5) * 4.0,
                (rng.gen::<f64>() - 0.5) * 4.0,
                (rng.gen::<f64>() - 0.5) * 4.0,
            );
            let d = e.surface_distance(&q);
            // Lower-bound check from 20k surface samples: the reported distance
            // can only beat the sampled minimum by a vanishing margin.
            let mut sampled = f64::INFINITY;
            for _ in 0..20_000 {
                let (pt, _) = e.sample_surface(&mut rng);
                sampled = sampled.min((pt - q).norm());
            }
            assert!(d <= sampled + 1e-9, "distance {d} exceeds sampled minimum {sampled}");
            assert!(d >= sampled - 0.05, "distance {d} far below sampled minimum {sampled}");
        }
    }
}
