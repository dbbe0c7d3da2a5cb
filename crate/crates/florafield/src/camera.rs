//! Pinhole camera model: world↔pixel projection, ray generation, and
//! depth-based visibility tests shared by the renderer and the cross-view
//! voting step.
//!
//! Conventions: right-handed frames, camera looks down +z in its own frame,
//! image origin at the top-left corner, v grows downward. Integer pixel (x, y)
//! covers the unit square [x, x+1)×[y, y+1); rays are cast through centers.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::invalid("principal point outside image"));
        }
        Ok(())
    }
}

/// World-to-camera rigid transform: `p_cam = rot * p_world + trans`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rot: Matrix3::identity(), trans: Vector3::zeros() }
    }

    /// Proper-rotation check: ‖RᵀR − I‖∞ < 1e-9 and det ≈ +1.
    pub fn validate(&self) -> Result<()> {
        let gram = self.rot.transpose() * self.rot - Matrix3::identity();
        let dev = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dev >= 1e-9 {
            return Err(Error::invalid(format!("rotation not orthonormal (dev {dev:.2e})")));
        }
        if (self.rot.determinant() - 1.0).abs() >= 1e-9 {
            return Err(Error::invalid("rotation determinant is not +1"));
        }
        Ok(())
    }

    /// Camera at `eye` looking toward `target`, image upright w.r.t. `world_up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, world_up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut down = -world_up;
        if down.cross(&z).norm() < 1e-9 {
            // Optical axis parallel to up: any horizontal works.
            down = Vector3::new(1.0, 0.0, 0.0);
        }
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let trans = -rot * eye;
        Pose { rot, trans }
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p_world + self.trans
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rot.transpose() * self.trans
    }
}

/// Camera ray in world coordinates with sampling bounds.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + t * self.direction
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Continuous image coordinates plus camera-frame depth (z > 0). May lie
    /// outside the frame; callers decide what out-of-frame means.
    OnPlane { u: f64, v: f64, depth: f64 },
    Behind,
}

pub fn project_world_to_pixel(point: &Vector3<f64>, intr: &Intrinsics, pose: &Pose) -> Projection {
    let p = pose.to_camera(point);
    if p.z <= 0.0 {
        return Projection::Behind;
    }
    Projection::OnPlane {
        u: intr.fx * p.x / p.z + intr.cx,
        v: intr.fy * p.y / p.z + intr.cy,
        depth: p.z,
    }
}

/// Invert the projection: world point seen at continuous image coordinates
/// (u, v) with camera-frame depth z > 0.
pub fn unproject_pixel(
    u: f64,
    v: f64,
    depth: f64,
    intr: &Intrinsics,
    pose: &Pose,
) -> Vector3<f64> {
    let p_cam = Vector3::new(
        (u - intr.cx) / intr.fx * depth,
        (v - intr.cy) / intr.fy * depth,
        depth,
    );
    pose.rot.transpose() * (p_cam - pose.trans)
}

/// Ray through continuous image coordinates (u, v). Rejects out-of-frame pixels.
pub fn pixel_to_ray(
    u: f64,
    v: f64,
    intr: &Intrinsics,
    pose: &Pose,
    t_near: f64,
    t_far: f64,
) -> Result<Ray> {
    if !(u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64) {
        return Err(Error::invalid(format!("pixel ({u}, {v}) outside {}x{} frame", intr.width, intr.height)));
    }
    if !(t_near > 0.0 && t_near < t_far) {
        return Err(Error::invalid("require 0 < t_near < t_far"));
    }
    let dir_cam = Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let direction = (pose.rot.transpose() * dir_cam).normalize();
    Ok(Ray { origin: pose.center(), direction, t_near, t_far })
}

/// One posed view with its depth raster (row-major, +∞ where nothing was hit),
/// as needed by visibility queries.
#[derive(Debug, Clone, Copy)]
pub struct CameraView<'a> {
    pub intr: &'a Intrinsics,
    pub pose: &'a Pose,
    pub depth: &'a [f32],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Visible,
    Occluded,
    Outside,
}

/// Classify a world point against a view: `Outside` when the projection leaves
/// the frame or falls behind the camera, `Occluded` when the projected depth
/// exceeds the stored depth by more than `depth_tolerance`, else `Visible`.
pub fn is_visible(point: &Vector3<f64>, view: CameraView<'_>, depth_tolerance: f64) -> Visibility {
    let (u, v, depth) = match project_world_to_pixel(point, view.intr, view.pose) {
        Projection::Behind => return Visibility::Outside,
        Projection::OnPlane { u, v, depth } => (u, v, depth),
    };
    let (w, h) = (view.intr.width, view.intr.height);
    if !(u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64) {
        return Visibility::Outside;
    }
    let (x, y) = (u as u32, v as u32);
    let stored = view.depth[(y * w + x) as usize] as f64;
    if depth > stored + depth_tolerance {
        Visibility::Occluded
    } else {
        Visibility::Visible
    }
}

/// Default occlusion tolerance: 1% of the scene bounding-box diagonal.
pub fn default_depth_tolerance(bounds: &crate::geom::Aabb) -> f64 {
    0.01 * bounds.diagonal()
}

/// One camera as stored on disk and passed between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpec {
    pub intr: Intrinsics,
    pub pose: Pose,
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    /// Row-major world-to-camera rotation.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<&CameraSpec> for CameraRecord {
    fn from(c: &CameraSpec) -> Self {
        let r = &c.pose.rot;
        CameraRecord {
            fx: c.intr.fx,
            fy: c.intr.fy,
            cx: c.intr.cx,
            cy: c.intr.cy,
            width: c.intr.width,
            height: c.intr.height,
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: [c.pose.trans.x, c.pose.trans.y, c.pose.trans.z],
        }
    }
}

impl TryFrom<CameraRecord> for CameraSpec {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<CameraSpec> {
        let m = r.rotation;
        let spec = CameraSpec {
            intr: Intrinsics {
                fx: r.fx,
                fy: r.fy,
                cx: r.cx,
                cy: r.cy,
                width: r.width,
                height: r.height,
            },
            pose: Pose {
                rot: Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]),
                trans: Vector3::new(r.translation[0], r.translation[1], r.translation[2]),
            },
        };
        spec.intr.validate()?;
        spec.pose.validate()?;
        Ok(spec)
    }
}

pub fn save_cameras(path: &std::path::Path, cameras: &[CameraSpec]) -> Result<()> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    let json = serde_json::to_string_pretty(&records)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_cameras(path: &std::path::Path) -> Result<Vec<CameraSpec>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    records.into_iter().map(CameraSpec::try_from).collect()
}

/// Independent projection path used by tests: build the full 4×4 homogeneous
/// pipeline (intrinsic matrix × extrinsic matrix) and divide once at the end.
pub fn project_homogeneous(
    point: &Vector3<f64>,
    intr: &Intrinsics,
    pose: &Pose,
) -> Option<(f64, f64, f64)> {
    let mut ext = Matrix4::identity();
    ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rot);
    ext.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.trans);
    let k = Matrix4::new(
        intr.fx, 0.0, intr.cx, 0.0,
        0.0, intr.fy, intr.cy, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let h = k * ext * Vector4::new(point.x, point.y, point.z, 1.0);
    if h.z <= 0.0 {
        return None;
    }
    Some((h.x / h.z, h.y / h.z, h.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_intr() -> Intrinsics {
        Intrinsics { fx: 100.0, fy: 100.0, cx: 80.0, cy: 60.0, width: 160, height: 120 }
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            rng.gen::<f64>() * std::f64::consts::TAU,
        );
        Pose {
            rot: rot.into_inner(),
            trans: Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() * 2.0),
        }
    }

    #[test]
    fn optical_axis_point_lands_on_principal_point() {
        let p = project_world_to_pixel(&Vector3::new(0.0, 0.0, 1.0), &test_intr(), &Pose::identity());
        match p {
            Projection::OnPlane { u, v, depth } => {
                assert_eq!((u, v, depth), (80.0, 60.0, 1.0));
            }
            Projection::Behind => panic!("expected on-plane projection"),
        }
    }

    #[test]
    fn negative_depth_is_behind() {
        let p = project_world_to_pixel(&Vector3::new(0.0, 0.0, -1.0), &test_intr(), &Pose::identity());
        assert_eq!(p, Projection::Behind);
    }

    #[test]
    fn unproject_inverts_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let intr = test_intr();
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let p = Vector3::new(
                (rng.gen::<f64>() - 0.5) * 4.0,
                (rng.gen::<f64>() - 0.5) * 4.0,
                (rng.gen::<f64>() - 0.5) * 4.0,
            );
            if let Projection::OnPlane { u, v, depth } = project_world_to_pixel(&p, &intr, &pose) {
                let back = unproject_pixel(u, v, depth, &intr, &pose);
                assert!((back - p).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_homogeneous_matrix_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let intr = test_intr();
        let mut checked = 0;
        while checked < 20 {
            let pose = random_pose(&mut rng);
            let point = Vector3::new(
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
            );
            let direct = project_world_to_pixel(&point, &intr, &pose);
            match (direct, project_homogeneous(&point, &intr, &pose)) {
                (Projection::OnPlane { u, v, depth }, Some((hu, hv, hd))) => {
                    assert!((u - hu).abs() < 1e-9 && (v - hv).abs() < 1e-9 && (depth - hd).abs() < 1e-9);
                    checked += 1;
                }
                (Projection::Behind, None) => {}
                _ => panic!("projection paths disagree on behind-camera"),
            }
        }
    }

    #[test]
    fn center_pixel_ray_is_optical_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let intr = test_intr();
        let ray = pixel_to_ray(intr.cx, intr.cy, &intr, &pose, 0.05, 1000.0).unwrap();
        let axis = pose.rot.transpose() * Vector3::new(0.0, 0.0, 1.0);
        assert!((ray.direction - axis).norm() < 1e-12);
        assert!((ray.origin - pose.center()).norm() < 1e-12);
    }

    #[test]
    fn ray_reprojects_to_its_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let intr = test_intr();
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let u = rng.gen::<f64>() * intr.width as f64;
            let v = rng.gen::<f64>() * intr.height as f64;
            let ray = pixel_to_ray(u, v, &intr, &pose, 0.05, 1000.0).unwrap();
            let t = 0.1 + rng.gen::<f64>() * 50.0;
            match project_world_to_pixel(&ray.at(t), &intr, &pose) {
                Projection::OnPlane { u: ru, v: rv, .. } => {
                    assert!((ru - u).abs() < 1e-6 && (rv - v).abs() < 1e-6);
                }
                Projection::Behind => panic!("re-projection fell behind the camera"),
            }
        }
    }

    #[test]
    fn out_of_frame_pixel_rejected() {
        let intr = test_intr();
        assert!(pixel_to_ray(-1.0, 5.0, &intr, &Pose::identity(), 0.05, 1000.0).is_err());
        assert!(pixel_to_ray(0.0, 120.0, &intr, &Pose::identity(), 0.05, 1000.0).is_err());
    }

    #[test]
    fn ray_bounds_stored_as_given() {
        let intr = test_intr();
        let ray = pixel_to_ray(5.0, 5.0, &intr, &Pose::identity(), 0.05, 1000.0).unwrap();
        assert_eq!((ray.t_near, ray.t_far), (0.05, 1000.0));
    }

    #[test]
    fn rigid_invariance_of_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let intr = test_intr();
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let point = Vector3::new(rng.gen(), rng.gen(), 2.0 + rng.gen::<f64>());
            let xform = random_pose(&mut rng);
            // Same rigid motion applied to scene and camera: p' = Q p + q,
            // pose' composed so that pose'(p') == pose(p).
            let point2 = xform.rot * point + xform.trans;
            let pose2 = Pose {
                rot: pose.rot * xform.rot.transpose(),
                trans: pose.trans - pose.rot * xform.rot.transpose() * xform.trans,
            };
            let a = project_world_to_pixel(&point, &intr, &pose);
            let b = project_world_to_pixel(&point2, &intr, &pose2);
            match (a, b) {
                (
                    Projection::OnPlane { u: u1, v: v1, depth: d1 },
                    Projection::OnPlane { u: u2, v: v2, depth: d2 },
                ) => {
                    assert!((u1 - u2).abs() < 1e-9 && (v1 - v2).abs() < 1e-9 && (d1 - d2).abs() < 1e-9);
                }
                (Projection::Behind, Projection::Behind) => {}
                _ => panic!("rigid transform changed behind-camera status"),
            }
        }
    }

    #[test]
    fn visibility_classification_and_tolerance_monotonicity() {
        let intr = test_intr();
        let pose = Pose::identity();
        let mut depth = vec![f32::INFINITY; (intr.width * intr.height) as usize];
        let idx = (60 * intr.width + 80) as usize;
        depth[idx] = 2.0;
        let view = CameraView { intr: &intr, pose: &pose, depth: &depth };

        // Depth equal to the stored value: visible.
        assert_eq!(is_visible(&Vector3::new(0.0, 0.0, 2.0), view, 0.01), Visibility::Visible);
        // 10x tolerance past the surface: occluded.
        assert_eq!(is_visible(&Vector3::new(0.0, 0.0, 2.1), view, 0.01), Visibility::Occluded);
        // Behind the camera or outside the frame: outside.
        assert_eq!(is_visible(&Vector3::new(0.0, 0.0, -1.0), view, 0.01), Visibility::Outside);
        assert_eq!(is_visible(&Vector3::new(10.0, 0.0, 2.0), view, 0.01), Visibility::Outside);
        // Enlarging the tolerance never turns visible into occluded.
        for tol in [0.0, 0.05, 0.11, 1.0] {
            let v = is_visible(&Vector3::new(0.0, 0.0, 2.1), view, tol);
            if tol > 0.1 {
                assert_eq!(v, Visibility::Visible);
            }
            let still = is_visible(&Vector3::new(0.0, 0.0, 2.0), view, tol);
            assert_eq!(still, Visibility::Visible);
        }
    }

    #[test]
    fn camera_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        let cams = vec![
            CameraSpec {
                intr: test_intr(),
                pose: Pose::look_at(
                    Vector3::new(2.0, -1.0, 1.5),
                    Vector3::zeros(),
                    Vector3::new(0.0, 0.0, 1.0),
                ),
            },
            CameraSpec { intr: test_intr(), pose: Pose::identity() },
        ];
        save_cameras(&path, &cams).unwrap();
        let loaded = load_cameras(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in cams.iter().zip(&loaded) {
            assert!((a.pose.rot - b.pose.rot).norm() < 1e-12);
            assert!((a.pose.trans - b.pose.trans).norm() < 1e-12);
            assert_eq!(a.intr, b.intr);
        }
    }

    #[test]
    fn look_at_produces_proper_rotation_facing_target() {
        let eye = Vector3::new(3.0, -2.0, 1.0);
        let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0));
        pose.validate().unwrap();
        assert!((pose.center() - eye).norm() < 1e-12);
        let target_cam = pose.to_camera(&Vector3::zeros());
        assert!(target_cam.x.abs() < 1e-12 && target_cam.y.abs() < 1e-12);
        assert!((target_cam.z - eye.norm()).abs() < 1e-12);
    }
}
