//! Density baking, isosurface vertex extraction, and attribute lookup to
//! turn a trained field into a labeled point cloud.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraSpec;
use crate::cloud::LabeledPointCloud;
use crate::codec::{decode_pixel, InstanceCodebook, SemanticCodebook};
use crate::field::{Field, ParamStore};
use crate::geom::Aabb;
use crate::mc_tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};
use crate::rng::{stage_rng, Stage};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub resolution: usize,
    pub sigma_threshold: f64,
    pub max_points: usize,
    /// Vertices closer than this to any camera center are discarded;
    /// `None` means 5% of the bounds diagonal.
    pub camera_filter_radius: Option<f64>,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            resolution: 128,
            sigma_threshold: 2.0,
            max_points: 100_000,
            camera_filter_radius: None,
            seed: 0,
        }
    }
}

/// Counters from one extraction run, for the stage report.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ExtractStats {
    pub raw_vertices: usize,
    pub distinct_vertices: usize,
    pub camera_filtered: usize,
    pub subsampled_to: usize,
    pub dropped_inconsistent: usize,
    pub kept: usize,
}

/// Densities sampled at voxel centers, x-fastest then y then z.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub resolution: usize,
    pub bounds: Aabb,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn value(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[x + self.resolution * (y + self.resolution * z)]
    }

    /// World position of the voxel center (x, y, z).
    pub fn center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let ext = self.bounds.extent();
        let r = self.resolution as f64;
        Vector3::new(
            self.bounds.min[0] + (x as f64 + 0.5) * ext[0] / r,
            self.bounds.min[1] + (y as f64 + 0.5) * ext[1] / r,
            self.bounds.min[2] + (z as f64 + 0.5) * ext[2] / r,
        )
    }
}

/// Sample a density closure at every voxel center. Slabs of constant z
/// are computed in parallel and concatenated in z order, so the result
/// does not depend on the worker count.
pub fn bake_density<F>(bounds: &Aabb, resolution: usize, density: F) -> Result<DensityGrid>
where
    F: Fn(&Vector3<f64>) -> f64 + Sync,
{
    if resolution < 2 {
        return Err(Error::invalid(format!("grid resolution {resolution} below 2")));
    }
    let ext = bounds.extent();
    let r = resolution as f64;
    let slabs: Vec<Vec<f64>> = (0..resolution)
        .into_par_iter()
        .map(|z| {
            let mut slab = Vec::with_capacity(resolution * resolution);
            let pz = bounds.min[2] + (z as f64 + 0.5) * ext[2] / r;
            for y in 0..resolution {
                let py = bounds.min[1] + (y as f64 + 0.5) * ext[1] / r;
                for x in 0..resolution {
                    let px = bounds.min[0] + (x as f64 + 0.5) * ext[0] / r;
                    slab.push(density(&Vector3::new(px, py, pz)));
                }
            }
            slab
        })
        .collect();
    Ok(DensityGrid { resolution, bounds: *bounds, values: slabs.concat() })
}

fn polygonize_cell(
    grid: &DensityGrid,
    threshold: f64,
    x: usize,
    y: usize,
    z: usize,
    out: &mut Vec<Vector3<f64>>,
) {
    let mut corner_val = [0.0; 8];
    let mut case = 0usize;
    for (k, off) in CORNER_OFFSETS.iter().enumerate() {
        let v = grid.value(x + off[0], y + off[1], z + off[2]);
        corner_val[k] = v;
        if v < threshold {
            case |= 1 << k;
        }
    }
    let crossed = EDGE_TABLE[case];
    if crossed == 0 {
        return;
    }
    let mut edge_point = [Vector3::zeros(); 12];
    for (e, &[a, b]) in EDGE_CORNERS.iter().enumerate() {
        if crossed & (1 << e) == 0 {
            continue;
        }
        let (va, vb) = (corner_val[a], corner_val[b]);
        let t = if (vb - va).abs() < 1e-12 { 0.5 } else { (threshold - va) / (vb - va) };
        let oa = CORNER_OFFSETS[a];
        let ob = CORNER_OFFSETS[b];
        let pa = grid.center(x + oa[0], y + oa[1], z + oa[2]);
        let pb = grid.center(x + ob[0], y + ob[1], z + ob[2]);
        edge_point[e] = pa + t * (pb - pa);
    }
    let row = &TRIANGLE_TABLE[case];
    let mut i = 0;
    while row[i] >= 0 {
        out.push(edge_point[row[i] as usize]);
        i += 1;
    }
}

/// Vertices of the threshold isosurface, from the 256-case cube table
/// with linear edge interpolation. Cells span adjacent voxel centers, so
/// a grid of resolution n yields (n−1)³ cells. Deterministic: parallel
/// over z-slabs, concatenated in order.
pub fn marching_cubes(grid: &DensityGrid, threshold: f64) -> Result<Vec<Vector3<f64>>> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("surface threshold {threshold} must be positive")));
    }
    let n = grid.resolution;
    let slabs: Vec<Vec<Vector3<f64>>> = (0..n - 1)
        .into_par_iter()
        .map(|z| {
            let mut out = Vec::new();
            for y in 0..n - 1 {
                for x in 0..n - 1 {
                    polygonize_cell(grid, threshold, x, y, z, &mut out);
                }
            }
            out
        })
        .collect();
    Ok(slabs.concat())
}

/// Bake, polygonize, filter, subsample, and label: the full path from a
/// trained field to a labeled cloud.
///
/// Surface attributes are queried with the view direction pointing from
/// the vertex toward the nearest camera center, approximating the rays
/// that supervised that part of the surface.
pub fn extract_cloud(
    field: &Field,
    store: &ParamStore,
    cameras: &[CameraSpec],
    sem_cb: &SemanticCodebook,
    inst_cb: &InstanceCodebook,
    cfg: &ExtractConfig,
) -> Result<(LabeledPointCloud, ExtractStats)> {
    let mut stats = ExtractStats::default();
    let grid = bake_density(&field.bounds, cfg.resolution, |p| field.density(p, store))?;
    let verts = marching_cubes(&grid, cfg.sigma_threshold)?;
    stats.raw_vertices = verts.len();
    if verts.is_empty() {
        let max_sigma = grid.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::EmptyExtraction(format!(
            "no surface at threshold {}: grid density peaks at {max_sigma:.4}",
            cfg.sigma_threshold
        )));
    }

    // Cells sharing an edge each emit their own copy of its crossing; keep
    // the first so downstream spacing statistics see real gaps.
    let mut seen = std::collections::HashSet::with_capacity(verts.len());
    let verts: Vec<Vector3<f64>> = verts
        .into_iter()
        .filter(|v| seen.insert([v.x.to_bits(), v.y.to_bits(), v.z.to_bits()]))
        .collect();
    stats.distinct_vertices = verts.len();

    let radius = cfg
        .camera_filter_radius
        .unwrap_or_else(|| 0.05 * field.bounds.diagonal());
    let centers: Vec<Vector3<f64>> = cameras.iter().map(|c| c.pose.center()).collect();
    let mut verts: Vec<Vector3<f64>> = verts
        .into_iter()
        .filter(|v| centers.iter().all(|c| (v - c).norm() > radius))
        .collect();
    stats.camera_filtered = stats.distinct_vertices - verts.len();

    if verts.len() > cfg.max_points {
        let mut rng = stage_rng(cfg.seed, Stage::Extract);
        let mut keep = rand::seq::index::sample(&mut rng, verts.len(), cfg.max_points).into_vec();
        keep.sort_unstable();
        verts = keep.into_iter().map(|i| verts[i]).collect();
    }
    stats.subsampled_to = verts.len();

    struct Labeled {
        pos: Vector3<f64>,
        rgb: [u8; 3],
        class: u8,
        id: u32,
    }
    let labeled: Vec<Option<Labeled>> = verts
        .par_iter()
        .map(|v| {
            let toward = centers
                .iter()
                .min_by(|a, b| (*a - v).norm().partial_cmp(&(*b - v).norm()).unwrap())
                .map(|c| c - v)
                .unwrap_or_else(|| Vector3::new(0.0, 0.0, 1.0));
            let sample = field.forward_dir(v, &toward, store);
            let (class, id) = decode_pixel(&sample.channels, sem_cb, inst_cb);
            if (class == 0) != (id == 0) {
                return None;
            }
            let mut rgb = [0u8; 3];
            for (o, c) in rgb.iter_mut().zip(sample.rgb()) {
                *o = (c * 255.0).round().clamp(0.0, 255.0) as u8;
            }
            Some(Labeled { pos: *v, rgb, class, id })
        })
        .collect();

    let mut cloud = LabeledPointCloud::with_capacity(labeled.len());
    for l in labeled.into_iter().flatten() {
        cloud.push(l.pos, l.rgb, l.class, l.id);
    }
    stats.dropped_inconsistent = stats.subsampled_to - cloud.len();
    stats.kept = cloud.len();
    if cloud.is_empty() {
        return Err(Error::EmptyExtraction(format!(
            "{} surface vertices survived filtering but none decoded consistently",
            stats.subsampled_to
        )));
    }
    Ok((cloud, stats))
}
