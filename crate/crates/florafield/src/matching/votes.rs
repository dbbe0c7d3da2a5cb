//! Bidirectional vote statistics: sampled pixels of every main-view instance
//! are lifted to 3D through the depth raster and projected into every
//! auxiliary view. The forward table asks "where does each main instance
//! land?"; the inverse table asks "who lands inside each auxiliary instance?".

use crate::camera::{unproject_pixel, CameraSpec, Visibility};
use crate::scene::RenderedView;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Where one projected sample landed in an auxiliary view. Ordering doubles
/// as the argmax tie-break: instance hits beat BG, BG beats OUT; OCC never
/// wins because it is excluded from argmax entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoteTarget {
    /// Landed inside this auxiliary instance's mask.
    Aux(u32),
    /// Landed on background pixels.
    Bg,
    /// Outside the frame or behind the camera.
    Out,
    /// Hidden behind nearer geometry; excluded from vote denominators.
    Occ,
}

pub type Histogram = BTreeMap<VoteTarget, u32>;

/// Plurality non-OCC target of a histogram; count ties break toward the
/// `Ord`-smaller target, so an instance hit beats BG and BG beats OUT —
/// biased against declaring things spurious.
pub fn argmax_hist(hist: &Histogram) -> Option<VoteTarget> {
    hist.iter()
        .filter(|(t, _)| !matches!(t, VoteTarget::Occ))
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(&t, _)| t)
}

/// n_main × n_aux grid of landing histograms for one main view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardVoteTable {
    pub main_view: usize,
    /// Local instance IDs of the main view, ascending.
    pub main_ids: Vec<u32>,
    /// Auxiliary view indices, ascending.
    pub aux_views: Vec<usize>,
    /// Row-major: cells[mi * n_aux + ai].
    cells: Vec<Histogram>,
    /// Samples per main instance that had no usable depth.
    pub skipped: Vec<u32>,
    /// Samples drawn per main instance.
    pub sample_counts: Vec<u32>,
}

impl ForwardVoteTable {
    pub fn new(main_view: usize, main_ids: Vec<u32>, aux_views: Vec<usize>) -> Self {
        let cells = vec![Histogram::new(); main_ids.len() * aux_views.len()];
        let skipped = vec![0; main_ids.len()];
        let sample_counts = vec![0; main_ids.len()];
        ForwardVoteTable { main_view, main_ids, aux_views, cells, skipped, sample_counts }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.main_ids.len(), self.aux_views.len())
    }

    pub fn cell(&self, mi: usize, ai: usize) -> &Histogram {
        &self.cells[mi * self.aux_views.len() + ai]
    }

    fn cell_mut(&mut self, mi: usize, ai: usize) -> &mut Histogram {
        &mut self.cells[mi * self.aux_views.len() + ai]
    }

    /// Record `count` votes straight into a cell; lets the detector tests
    /// build tables without staging full renders.
    #[cfg(test)]
    pub(crate) fn insert_votes(&mut self, mi: usize, ai: usize, target: VoteTarget, count: u32) {
        *self.cell_mut(mi, ai).entry(target).or_insert(0) += count;
    }

    /// Count of votes that participate in fractions (everything but OCC).
    pub fn non_occluded(&self, mi: usize, ai: usize) -> u32 {
        self.cell(mi, ai)
            .iter()
            .filter(|(t, _)| !matches!(t, VoteTarget::Occ))
            .map(|(_, &c)| c)
            .sum()
    }

    /// Winning non-OCC target of a cell; `None` when every sample was
    /// occluded (the view says nothing about this instance).
    pub fn argmax(&self, mi: usize, ai: usize) -> Option<VoteTarget> {
        argmax_hist(self.cell(mi, ai))
    }

    /// Aux views with at least one non-OCC vote for this main instance.
    pub fn valid_views(&self, mi: usize) -> Vec<usize> {
        (0..self.aux_views.len()).filter(|&ai| self.non_occluded(mi, ai) > 0).collect()
    }

    pub fn main_index(&self, id: u32) -> Option<usize> {
        self.main_ids.binary_search(&id).ok()
    }
}

/// Per auxiliary view: aux instance -> histogram over main instance IDs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct InverseVoteTable {
    pub per_view: BTreeMap<usize, BTreeMap<u32, BTreeMap<u32, u32>>>,
}

impl InverseVoteTable {
    /// Main instance receiving the most landings inside aux instance `j`;
    /// ties go to the smaller main ID.
    pub fn argmax(&self, aux_view: usize, j: u32) -> Option<u32> {
        self.per_view
            .get(&aux_view)?
            .get(&j)?
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(&m, _)| m)
    }
}

/// Grid sampling over the mask's bounding rectangle: step
/// s = clamp(⌈√(area/target)⌉, 1, 16), falling back to every pixel when the
/// grid would under-deliver. Returns pixel coords (x, y).
pub fn sample_instance_points(
    pixels: &[(u32, u32)],
    target: usize,
    min_samples: usize,
    max_step: usize,
) -> Vec<(u32, u32)> {
    assert!(!pixels.is_empty(), "sampling needs a non-empty mask");
    let area = pixels.len();
    let step = ((area as f64 / target as f64).sqrt().ceil() as usize).clamp(1, max_step);
    if step == 1 || area <= min_samples {
        return pixels.to_vec();
    }
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for &(x, y) in pixels {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let mask: HashSet<(u32, u32)> = pixels.iter().copied().collect();
    let mut out = Vec::new();
    let s = step as u32;
    let mut y = y0;
    while y <= y1 {
        let mut x = x0;
        while x <= x1 {
            if mask.contains(&(x, y)) {
                out.push((x, y));
            }
            x += s;
        }
        y += s;
    }
    if out.len() < min_samples {
        return pixels.to_vec();
    }
    out
}

/// Anything that can answer "how deep is this pixel" and "is this world point
/// visible in that view". The synthetic pipeline backs it with exact rendered
/// rasters; a baked density field can stand in without touching the matcher.
pub trait DepthSource: Sync {
    /// Camera-frame z depth of a pixel; +inf means empty space.
    fn pixel_depth(&self, view: usize, x: u32, y: u32) -> f32;
    /// Classify a world point against a view's stored depth.
    fn classify(&self, view: usize, p: &Vector3<f64>) -> Visibility;
}

/// Depth and visibility straight from rendered rasters.
pub struct RasterDepth<'a> {
    pub views: &'a [RenderedView],
    pub cameras: &'a [CameraSpec],
    pub tolerance: f64,
}

impl DepthSource for RasterDepth<'_> {
    fn pixel_depth(&self, view: usize, x: u32, y: u32) -> f32 {
        let v = &self.views[view];
        v.depth[v.idx(x, y)]
    }

    fn classify(&self, view: usize, p: &Vector3<f64>) -> Visibility {
        let cam = &self.cameras[view];
        let cv = crate::camera::CameraView {
            intr: &cam.intr,
            pose: &cam.pose,
            depth: &self.views[view].depth,
        };
        crate::camera::is_visible(p, cv, self.tolerance)
    }
}

/// Sampling/matching knobs; every threshold the matcher uses lives here.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatchConfig {
    /// Desired samples per instance mask.
    pub target_samples: usize,
    /// Floor under which sampling falls back to every mask pixel.
    pub min_samples: usize,
    /// Grid step cap.
    pub max_step: usize,
    /// Main-view iterations before forced stop.
    pub max_iterations: usize,
    /// Stop early once fewer unassigned instances than this remain.
    pub unassigned_stop: usize,
    /// Absolute depth slack for visibility classification, scene units;
    /// pipelines set it to 1% of the scene diagonal.
    pub depth_tolerance: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            target_samples: 256,
            min_samples: 8,
            max_step: 16,
            max_iterations: 12,
            unassigned_stop: 10,
            depth_tolerance: 0.035,
        }
    }
}

/// Pixel coordinate list per instance of a view, ascending by ID.
pub fn instance_masks(view: &RenderedView) -> Vec<(u32, Vec<(u32, u32)>)> {
    let mut masks: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for y in 0..view.height {
        for x in 0..view.width {
            let id = view.instance[view.idx(x, y)];
            if id != 0 {
                masks.entry(id).or_default().push((x, y));
            }
        }
    }
    masks.into_iter().collect()
}

/// Classify one lifted world point against a single view: off-frame or
/// behind → OUT, hidden → OCC, else whatever the instance raster holds at
/// the landing pixel.
pub fn vote_target<D: DepthSource>(
    p: &Vector3<f64>,
    view_idx: usize,
    views: &[RenderedView],
    cameras: &[CameraSpec],
    depth: &D,
) -> VoteTarget {
    match depth.classify(view_idx, p) {
        Visibility::Outside => VoteTarget::Out,
        Visibility::Occluded => VoteTarget::Occ,
        Visibility::Visible => {
            let cam = &cameras[view_idx];
            match crate::camera::project_world_to_pixel(p, &cam.intr, &cam.pose) {
                crate::camera::Projection::OnPlane { u, v, .. } => {
                    let view = &views[view_idx];
                    let id = view.instance[view.idx(u as u32, v as u32)];
                    if id == 0 {
                        VoteTarget::Bg
                    } else {
                        VoteTarget::Aux(id)
                    }
                }
                crate::camera::Projection::Behind => VoteTarget::Out,
            }
        }
    }
}

/// Build both vote tables for one main view against the given auxiliary
/// views. Parallel over aux views; merge order is fixed by view index, so the
/// result is identical for any worker count.
pub fn cast_votes<D: DepthSource>(
    main_idx: usize,
    views: &[RenderedView],
    cameras: &[CameraSpec],
    aux_indices: &[usize],
    depth: &D,
    cfg: &MatchConfig,
) -> (ForwardVoteTable, InverseVoteTable) {
    let main_view = &views[main_idx];
    let main_cam = &cameras[main_idx];
    let masks = instance_masks(main_view);
    let main_ids: Vec<u32> = masks.iter().map(|(id, _)| *id).collect();

    // Lift each instance's samples once; they are shared across aux views.
    let mut lifted: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(masks.len());
    let mut skipped = vec![0u32; masks.len()];
    let mut sample_counts = vec![0u32; masks.len()];
    for (mi, (_, mask)) in masks.iter().enumerate() {
        let samples =
            sample_instance_points(mask, cfg.target_samples, cfg.min_samples, cfg.max_step);
        sample_counts[mi] = samples.len() as u32;
        let mut pts = Vec::with_capacity(samples.len());
        for (x, y) in samples {
            let d = depth.pixel_depth(main_idx, x, y);
            if !d.is_finite() {
                skipped[mi] += 1;
                continue;
            }
            pts.push(unproject_pixel(
                x as f64 + 0.5,
                y as f64 + 0.5,
                d as f64,
                &main_cam.intr,
                &main_cam.pose,
            ));
        }
        lifted.push(pts);
    }

    type AuxColumn = (Vec<Histogram>, BTreeMap<u32, BTreeMap<u32, u32>>);
    let columns: Vec<AuxColumn> = aux_indices
        .par_iter()
        .map(|&ai| {
            let mut col = vec![Histogram::new(); main_ids.len()];
            let mut inv: BTreeMap<u32, BTreeMap<u32, u32>> = BTreeMap::new();
            for (mi, pts) in lifted.iter().enumerate() {
                for p in pts {
                    let target = vote_target(p, ai, views, cameras, depth);
                    if let VoteTarget::Aux(id) = target {
                        *inv.entry(id).or_default().entry(main_ids[mi]).or_insert(0) += 1;
                    }
                    *col[mi].entry(target).or_insert(0) += 1;
                }
            }
            (col, inv)
        })
        .collect();

    let mut fwd = ForwardVoteTable::new(main_idx, main_ids, aux_indices.to_vec());
    fwd.skipped = skipped;
    fwd.sample_counts = sample_counts;
    let mut inv = InverseVoteTable::default();
    for (ai_pos, (col, inv_col)) in columns.into_iter().enumerate() {
        for (mi, hist) in col.into_iter().enumerate() {
            *fwd.cell_mut(mi, ai_pos) = hist;
        }
        if !inv_col.is_empty() {
            inv.per_view.insert(aux_indices[ai_pos], inv_col);
        }
    }
    (fwd, inv)
}
