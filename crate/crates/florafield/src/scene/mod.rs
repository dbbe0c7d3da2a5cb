//! Synthetic plant scenes: procedural generation from analytic primitives,
//! camera rig construction, ground-truth surface clouds, exact per-view
//! rendering, and the label-corruption stage that manufactures realistic
//! instance-segmentation failures for the matcher to repair.

pub mod corrupt;
pub mod primitives;
pub mod render;

pub use corrupt::{
    corrupt_labels, reconstruct_true_ids, CorruptionConfig, CorruptionEvent, CorruptionLog,
};
pub use primitives::{OrganPrimitive, Shape};
pub use render::{render_view, RenderedView};

use crate::camera::{CameraSpec, Intrinsics, Pose};
use crate::cloud::LabeledPointCloud;
use crate::geom::Aabb;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Number of organs to generate per semantic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganCounts {
    pub stems: usize,
    pub leaves: usize,
    pub fruits: usize,
    pub flowers: usize,
}

impl OrganCounts {
    pub fn total(&self) -> usize {
        self.stems + self.leaves + self.fruits + self.flowers
    }
}

/// A complete synthetic scene: primitives, world bounds, and the directional
/// light used for shading (unit vector pointing *toward* the light).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<OrganPrimitive>,
    pub bounds: Aabb,
    pub light_dir: Vector3<f64>,
}

impl SceneSpec {
    /// Distinct semantic classes present (background excluded).
    pub fn semantic_classes(&self) -> Vec<u8> {
        let mut classes: Vec<u8> = self.primitives.iter().map(|p| p.semantic_class).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    pub fn num_instances(&self) -> usize {
        self.primitives.len()
    }

    /// Nearest primitive by exact surface distance; ties break toward the
    /// lower instance ID.
    pub fn nearest_primitive(&self, p: &Vector3<f64>) -> &OrganPrimitive {
        self.primitives
            .iter()
            .map(|prim| (prim.surface_distance(p), prim.instance_id, prim))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
            .map(|(_, _, prim)| prim)
            .expect("scene has at least one primitive")
    }
}

/// Grow a plant inside `bounds`: stems form a connected chain of capsules
/// rising from the floor, and leaves/fruits/flowers attach to the chain with
/// their surfaces touching the stem. Deterministic in `seed`. Fails if an
/// organ cannot be placed inside the bounds after repeated attempts.
pub fn build_plant(seed: u64, counts: &OrganCounts, bounds: &Aabb) -> Result<SceneSpec> {
    if counts.stems == 0 {
        return Err(Error::invalid("a plant needs at least one stem segment"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = [
        bounds.max[0] - bounds.min[0],
        bounds.max[1] - bounds.min[1],
        bounds.max[2] - bounds.min[2],
    ];
    let scale = ext.iter().cloned().fold(f64::INFINITY, f64::min) * 0.5;
    let center = bounds.center();

    let mut primitives = Vec::with_capacity(counts.total());
    let mut next_id: u32 = 1;

    // Stem chain: joints from the floor upward with bounded lateral drift.
    let stem_radius = 0.055 * scale;
    let total_height = 0.78 * ext[2];
    let seg_len = total_height / counts.stems as f64;
    let mut joints = Vec::with_capacity(counts.stems + 1);
    joints.push(Vector3::new(center[0], center[1], bounds.min[2] + 0.04 * ext[2]));
    for i in 0..counts.stems {
        let prev: Vector3<f64> = joints[i];
        let drift = 0.22 * seg_len;
        let dir = Vector3::new(
            (rng.gen::<f64>() - 0.5) * 2.0 * drift,
            (rng.gen::<f64>() - 0.5) * 2.0 * drift,
            seg_len,
        )
        .normalize();
        joints.push(prev + dir * seg_len);
    }
    for i in 0..counts.stems {
        let a = joints[i];
        let b = joints[i + 1];
        let mid = (a + b) * 0.5;
        let axis = b - a;
        let prim = OrganPrimitive {
            shape: Shape::Capsule { half_length: axis.norm() * 0.5, radius: stem_radius },
            semantic_class: 1,
            instance_id: next_id,
            rot: rotation_from_z(&axis.normalize()),
            center: mid,
            base_color: class_color(1, next_id, &mut rng),
        };
        if !bounds.contains_aabb(&prim.aabb()) {
            return Err(Error::invalid("stem chain escaped the scene bounds"));
        }
        primitives.push(prim);
        next_id += 1;
    }

    // Attachment helper: point on the chain at parameter t in [0,1].
    let chain_point = |t: f64| -> (Vector3<f64>, Vector3<f64>) {
        let ft = t * counts.stems as f64;
        let i = (ft.floor() as usize).min(counts.stems - 1);
        let local = ft - i as f64;
        let a = joints[i];
        let b = joints[i + 1];
        (a + (b - a) * local, (b - a).normalize())
    };

    let place = |class: u8,
                     count: usize,
                     t_range: (f64, f64),
                     rng: &mut ChaCha8Rng,
                     primitives: &mut Vec<OrganPrimitive>,
                     next_id: &mut u32|
     -> Result<()> {
        for _ in 0..count {
            let mut placed = false;
            for _attempt in 0..1000 {
                let t = t_range.0 + rng.gen::<f64>() * (t_range.1 - t_range.0);
                let (anchor, stem_dir) = chain_point(t);
                let azimuth = rng.gen::<f64>() * std::f64::consts::TAU;
                // Outward direction roughly perpendicular to the stem.
                let side = perpendicular_at(&stem_dir, azimuth);
                let (shape, offset, rot) = match class {
                    2 => {
                        let semi = [0.30 * scale, 0.17 * scale, 0.055 * scale];
                        let pitch = (rng.gen::<f64>() - 0.3) * 0.9;
                        let rot = leaf_rotation(&side, pitch);
                        (Shape::Ellipsoid { semi_axes: semi }, stem_radius + semi[0] * 0.92, rot)
                    }
                    3 => {
                        let semi = [0.085 * scale, 0.085 * scale, 0.115 * scale];
                        let rot = Matrix3::identity();
                        (Shape::Ellipsoid { semi_axes: semi }, stem_radius + semi[0] * 0.95, rot)
                    }
                    4 => {
                        let r = 0.10 * scale;
                        (Shape::Sphere { radius: r }, stem_radius + r * 0.95, Matrix3::identity())
                    }
                    _ => unreachable!("only classes 2-4 attach to the stem"),
                };
                let center_pos = anchor + side * offset;
                let prim = OrganPrimitive {
                    shape,
                    semantic_class: class,
                    instance_id: *next_id,
                    rot,
                    center: center_pos,
                    base_color: class_color(class, *next_id, rng),
                };
                if bounds.contains_aabb(&prim.aabb()) {
                    primitives.push(prim);
                    *next_id += 1;
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::invalid(format!(
                    "could not place a class-{class} organ inside the scene bounds"
                )));
            }
        }
        Ok(())
    };

    place(2, counts.leaves, (0.25, 0.85), &mut rng, &mut primitives, &mut next_id)?;
    place(3, counts.fruits, (0.35, 0.75), &mut rng, &mut primitives, &mut next_id)?;
    place(4, counts.flowers, (0.80, 0.98), &mut rng, &mut primitives, &mut next_id)?;

    Ok(SceneSpec {
        primitives,
        bounds: *bounds,
        light_dir: Vector3::new(0.35, -0.25, 0.9).normalize(),
    })
}

/// Evenly spaced ring of inward-looking cameras on a hemisphere above the
/// scene center. `elevation_deg` is the angle above the horizontal plane.
pub fn camera_ring(
    n_views: usize,
    intr: &Intrinsics,
    radius: f64,
    elevation_deg: f64,
    target: &Vector3<f64>,
) -> Vec<CameraSpec> {
    let el = elevation_deg.to_radians();
    (0..n_views)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / n_views as f64;
            let eye = target
                + Vector3::new(
                    radius * el.cos() * az.cos(),
                    radius * el.cos() * az.sin(),
                    radius * el.sin(),
                );
            CameraSpec {
                intr: *intr,
                pose: Pose::look_at(eye, *target, Vector3::new(0.0, 0.0, 1.0)),
            }
        })
        .collect()
}

/// Area-weighted uniform sample of the plant surface with shaded colors and
/// ground-truth labels. Deterministic in `seed`.
pub fn sample_gt_cloud(scene: &SceneSpec, n_points: usize, seed: u64) -> LabeledPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = scene.primitives.iter().map(|p| p.surface_area()).collect();
    let mut cum = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cum.push(acc);
    }
    let total = acc;

    let mut cloud = LabeledPointCloud::with_capacity(n_points);
    for _ in 0..n_points {
        let x = rng.gen::<f64>() * total;
        let idx = cum.partition_point(|&c| c < x).min(areas.len() - 1);
        let prim = &scene.primitives[idx];
        let (pos, normal) = prim.sample_surface(&mut rng);
        let rgb = render::shade(prim, &normal, &scene.light_dir);
        cloud.push(pos, rgb, prim.semantic_class, prim.instance_id);
    }
    cloud
}

/// Rotation taking local +z to `dir` (unit). Stable for any direction.
fn rotation_from_z(dir: &Vector3<f64>) -> Matrix3<f64> {
    let z = *dir;
    let helper = if z.z.abs() < 0.9 {
        Vector3::new(0.0, 0.0, 1.0)
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Unit vector perpendicular to `axis` at the given azimuth around it.
fn perpendicular_at(axis: &Vector3<f64>, azimuth: f64) -> Vector3<f64> {
    let frame = rotation_from_z(axis);
    let x = frame.column(0).into_owned();
    let y = frame.column(1).into_owned();
    (x * azimuth.cos() + y * azimuth.sin()).normalize()
}

/// Leaf frame: major axis along the outward direction, then pitched about the
/// horizontal so blades droop or rise naturally.
fn leaf_rotation(outward: &Vector3<f64>, pitch: f64) -> Matrix3<f64> {
    let major = (outward * pitch.cos() + Vector3::new(0.0, 0.0, 1.0) * pitch.sin()).normalize();
    let minor_seed = Vector3::new(0.0, 0.0, 1.0).cross(&major);
    let minor = if minor_seed.norm() < 1e-9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        minor_seed.normalize()
    };
    let normal = major.cross(&minor);
    Matrix3::from_columns(&[major, minor, normal])
}

/// Per-class base palette with mild per-instance variation; channels stay
/// well away from the black background.
fn class_color(class: u8, _instance: u32, rng: &mut impl Rng) -> [f64; 3] {
    let base = match class {
        1 => [0.45, 0.36, 0.22],
        2 => [0.25, 0.62, 0.28],
        3 => [0.80, 0.28, 0.24],
        4 => [0.88, 0.83, 0.45],
        _ => [0.5, 0.5, 0.5],
    };
    let mut out = [0.0; 3];
    for (o, b) in out.iter_mut().zip(base) {
        let jitter = (rng.gen::<f64>() - 0.5) * 0.12;
        *o = (b + jitter).clamp(0.22, 1.0);
    }
    out
}

// ---------------------------------------------------------------------------
// JSON persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
    light_dir: [f64; 3],
    primitives: Vec<PrimitiveRecord>,
}

#[derive(Serialize, Deserialize)]
struct PrimitiveRecord {
    shape: ShapeRecord,
    semantic_class: u8,
    instance_id: u32,
    /// Row-major local-to-world rotation.
    rotation: [f64; 9],
    center: [f64; 3],
    base_color: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ShapeRecord {
    Sphere { radius: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
    Capsule { half_length: f64, radius: f64 },
}

impl From<&SceneSpec> for SceneRecord {
    fn from(s: &SceneSpec) -> Self {
        SceneRecord {
            bounds_min: s.bounds.min,
            bounds_max: s.bounds.max,
            light_dir: [s.light_dir.x, s.light_dir.y, s.light_dir.z],
            primitives: s
                .primitives
                .iter()
                .map(|p| PrimitiveRecord {
                    shape: match p.shape {
                        Shape::Sphere { radius } => ShapeRecord::Sphere { radius },
                        Shape::Ellipsoid { semi_axes } => ShapeRecord::Ellipsoid { semi_axes },
                        Shape::Capsule { half_length, radius } => {
                            ShapeRecord::Capsule { half_length, radius }
                        }
                    },
                    semantic_class: p.semantic_class,
                    instance_id: p.instance_id,
                    rotation: {
                        let mut r = [0.0; 9];
                        for i in 0..3 {
                            for j in 0..3 {
                                r[i * 3 + j] = p.rot[(i, j)];
                            }
                        }
                        r
                    },
                    center: [p.center.x, p.center.y, p.center.z],
                    base_color: p.base_color,
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneRecord> for SceneSpec {
    type Error = Error;
    fn try_from(r: SceneRecord) -> Result<Self> {
        let light = Vector3::new(r.light_dir[0], r.light_dir[1], r.light_dir[2]);
        if (light.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("scene light direction must be a unit vector"));
        }
        let primitives = r
            .primitives
            .into_iter()
            .map(|p| {
                let rot = Matrix3::from_fn(|i, j| p.rotation[i * 3 + j]);
                let det = rot.determinant();
                if (det - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!(
                        "primitive {} rotation determinant {det} is not +1",
                        p.instance_id
                    )));
                }
                Ok(OrganPrimitive {
                    shape: match p.shape {
                        ShapeRecord::Sphere { radius } => Shape::Sphere { radius },
                        ShapeRecord::Ellipsoid { semi_axes } => Shape::Ellipsoid { semi_axes },
                        ShapeRecord::Capsule { half_length, radius } => {
                            Shape::Capsule { half_length, radius }
                        }
                    },
                    semantic_class: p.semantic_class,
                    instance_id: p.instance_id,
                    rot,
                    center: Vector3::new(p.center[0], p.center[1], p.center[2]),
                    base_color: p.base_color,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if primitives.is_empty() {
            return Err(Error::invalid("scene has no primitives"));
        }
        Ok(SceneSpec {
            primitives,
            bounds: Aabb::new(r.bounds_min, r.bounds_max),
            light_dir: light,
        })
    }
}

pub fn save_scene(scene: &SceneSpec, path: &std::path::Path) -> Result<()> {
    let record = SceneRecord::from(scene);
    let json = serde_json::to_string_pretty(&record)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_scene(path: &std::path::Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)?;
    let record: SceneRecord = serde_json::from_str(&text)?;
    SceneSpec::try_from(record)
}
