//! Label corruption: manufactures the instance-segmentation failure modes a
//! real per-view detector produces, on top of an always-on per-view label
//! permutation. Every edit is logged precisely enough that the original
//! instance raster can be rebuilt pixel-for-pixel, which is what the
//! round-trip tests and the matcher evaluation rely on.

use super::render::RenderedView;
use crate::rng::{stage_rng, substream, Stage};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Which failure modes to inject and how often. A rate r turns into
/// round(r * n_views) affected views chosen without replacement; an explicit
/// view list overrides the rate for that pattern. The per-view label
/// permutation is always on.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CorruptionConfig {
    #[serde(default)]
    pub split_rate: f64,
    #[serde(default)]
    pub merge_rate: f64,
    #[serde(default)]
    pub blob_rate: f64,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub split_views: Option<Vec<usize>>,
    #[serde(default)]
    pub merge_views: Option<Vec<usize>>,
    #[serde(default)]
    pub blob_views: Option<Vec<usize>>,
    #[serde(default)]
    pub loss_views: Option<Vec<usize>>,
}

/// One injected edit, in final (post-permutation) label space.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum CorruptionEvent {
    /// An instance was cut along a line through its centroid; both halves map
    /// back to `true_id` via the view's id_map.
    Split { true_id: u32, halves: (u32, u32) },
    /// Two touching same-class instances were fused under `merged`; the
    /// listed pixels originally belonged to `true_ids.1`.
    Merge { true_ids: (u32, u32), merged: u32, absorbed_pixels: Vec<u32> },
    /// A spurious detection on empty background, with a fabricated depth.
    Blob { label: u32, semantic: u8, depth: f32, pixels: Vec<u32> },
    /// An instance the detector missed: labels zeroed, depth kept.
    Loss { true_id: u32, pixels: Vec<u32> },
    /// A selected pattern could not be applied in this view.
    Skipped { pattern: String, reason: String },
}

/// Per-view record: final label -> true scene instance ID (spurious blobs map
/// to 0), plus the event list.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViewLog {
    pub view: usize,
    pub id_map: Vec<(u32, u32)>,
    pub events: Vec<CorruptionEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorruptionLog {
    pub views: Vec<ViewLog>,
}

impl CorruptionLog {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Apply the configured corruptions. Deterministic in `seed`: pattern-to-view
/// assignment draws from the stage stream, per-view edits from per-view
/// substreams.
pub fn corrupt_labels(
    views: &[RenderedView],
    cfg: &CorruptionConfig,
    seed: u64,
) -> Result<(Vec<RenderedView>, CorruptionLog)> {
    for (name, rate) in [
        ("split", cfg.split_rate),
        ("merge", cfg.merge_rate),
        ("blob", cfg.blob_rate),
        ("loss", cfg.loss_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid(format!("{name}_rate {rate} outside [0, 1]")));
        }
    }

    let mut rng = stage_rng(seed, Stage::Corrupt);
    let split_set = select_views(&mut rng, views.len(), cfg.split_rate, &cfg.split_views)?;
    let merge_set = select_views(&mut rng, views.len(), cfg.merge_rate, &cfg.merge_views)?;
    let loss_set = select_views(&mut rng, views.len(), cfg.loss_rate, &cfg.loss_views)?;
    let blob_set = select_views(&mut rng, views.len(), cfg.blob_rate, &cfg.blob_views)?;

    let mut out_views = Vec::with_capacity(views.len());
    let mut logs = Vec::with_capacity(views.len());
    for (vi, view) in views.iter().enumerate() {
        let mut vrng = substream(seed, Stage::Corrupt, vi as u64);
        let (corrupted, log) = corrupt_one(
            view,
            vi,
            split_set.contains(&vi),
            merge_set.contains(&vi),
            loss_set.contains(&vi),
            blob_set.contains(&vi),
            &mut vrng,
        );
        out_views.push(corrupted);
        logs.push(log);
    }
    Ok((out_views, CorruptionLog { views: logs }))
}

fn select_views(
    rng: &mut ChaCha8Rng,
    n_views: usize,
    rate: f64,
    explicit: &Option<Vec<usize>>,
) -> Result<Vec<usize>> {
    if let Some(list) = explicit {
        let mut sorted = list.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != list.len() {
            return Err(Error::invalid("duplicate view index in corruption target list"));
        }
        if let Some(&bad) = sorted.iter().find(|&&v| v >= n_views) {
            return Err(Error::invalid(format!("corruption target view {bad} out of range")));
        }
        return Ok(sorted);
    }
    let count = (rate * n_views as f64).round() as usize;
    let mut picked = rand::seq::index::sample(rng, n_views, count.min(n_views)).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn corrupt_one(
    view: &RenderedView,
    view_idx: usize,
    do_split: bool,
    do_merge: bool,
    do_loss: bool,
    do_blob: bool,
    rng: &mut ChaCha8Rng,
) -> (RenderedView, ViewLog) {
    let mut v = view.clone();
    let mut events = Vec::new();
    // Working label -> true scene instance ID. Starts as identity because the
    // renderer emits scene IDs directly.
    let mut true_of: BTreeMap<u32, u32> =
        v.present_instances().iter().map(|&id| (id, id)).collect();
    let mut next_label = true_of.keys().max().copied().unwrap_or(0) + 1;
    // Labels already altered this view; later patterns leave them alone so
    // every pixel sees at most one structural edit.
    let mut touched: HashSet<u32> = HashSet::new();

    if do_split {
        match apply_split(&mut v, rng, &true_of, &touched, next_label) {
            Some((orig, new_label)) => {
                let true_id = true_of[&orig];
                true_of.insert(new_label, true_id);
                touched.insert(orig);
                touched.insert(new_label);
                next_label += 1;
                events.push(CorruptionEvent::Split { true_id, halves: (orig, new_label) });
            }
            None => events.push(CorruptionEvent::Skipped {
                pattern: "split".into(),
                reason: "no instance could be cut into two nonempty halves".into(),
            }),
        }
    }

    if do_merge {
        match apply_merge(&mut v, rng, &touched) {
            Some((kept, absorbed, absorbed_pixels)) => {
                let true_pair = (true_of[&kept], true_of[&absorbed]);
                true_of.remove(&absorbed);
                touched.insert(kept);
                events.push(CorruptionEvent::Merge {
                    true_ids: true_pair,
                    merged: kept,
                    absorbed_pixels,
                });
            }
            None => events.push(CorruptionEvent::Skipped {
                pattern: "merge".into(),
                reason: "no adjacent same-class instance pair available".into(),
            }),
        }
    }

    if do_loss {
        let candidates: Vec<u32> =
            true_of.keys().filter(|l| !touched.contains(l)).copied().collect();
        if candidates.is_empty() {
            events.push(CorruptionEvent::Skipped {
                pattern: "loss".into(),
                reason: "every instance was already altered this view".into(),
            });
        } else {
            let label = candidates[rng.gen_range(0..candidates.len())];
            let pixels = v.pixels_of(label);
            for &px in &pixels {
                v.instance[px as usize] = 0;
                v.semantic[px as usize] = 0;
                // Depth stays: the detector missed the organ, the geometry is
                // still there.
            }
            let true_id = true_of.remove(&label).unwrap();
            events.push(CorruptionEvent::Loss { true_id, pixels });
        }
    }

    if do_blob {
        match apply_blob(&mut v, rng, next_label) {
            Ok((label, semantic, depth, pixels)) => {
                true_of.insert(label, 0);
                touched.insert(label);
                events.push(CorruptionEvent::Blob { label, semantic, depth, pixels });
            }
            Err(reason) => {
                events.push(CorruptionEvent::Skipped { pattern: "blob".into(), reason })
            }
        }
    }

    // Always-on permutation: relabel every surviving instance onto a random
    // bijection with 1..=k.
    let present: Vec<u32> = true_of.keys().copied().collect();
    let mut targets: Vec<u32> = (1..=present.len() as u32).collect();
    targets.shuffle(rng);
    let perm: BTreeMap<u32, u32> = present.iter().copied().zip(targets).collect();
    for px in v.instance.iter_mut() {
        if *px != 0 {
            *px = perm[px];
        }
    }
    let remap = |l: u32| perm[&l];
    for ev in events.iter_mut() {
        match ev {
            CorruptionEvent::Split { halves, .. } => *halves = (remap(halves.0), remap(halves.1)),
            CorruptionEvent::Merge { merged, .. } => *merged = remap(*merged),
            CorruptionEvent::Blob { label, .. } => *label = remap(*label),
            _ => {}
        }
    }
    let id_map: Vec<(u32, u32)> = {
        let mut m: Vec<(u32, u32)> =
            true_of.iter().map(|(&l, &t)| (perm[&l], t)).collect();
        m.sort_unstable();
        m
    };

    (v, ViewLog { view: view_idx, id_map, events })
}

/// Cut one instance along a random line through its pixel centroid. Returns
/// (original label, new label for the far half).
fn apply_split(
    v: &mut RenderedView,
    rng: &mut ChaCha8Rng,
    true_of: &BTreeMap<u32, u32>,
    touched: &HashSet<u32>,
    new_label: u32,
) -> Option<(u32, u32)> {
    let mut candidates: Vec<u32> = true_of
        .keys()
        .filter(|l| !touched.contains(l))
        .copied()
        .collect();
    // Random candidate order, then first instance that admits a valid cut.
    candidates.shuffle(rng);
    for label in candidates {
        let pixels = v.pixels_of(label);
        if pixels.len() < 2 {
            continue;
        }
        let (mut cx, mut cy) = (0.0f64, 0.0f64);
        for &px in &pixels {
            cx += (px % v.width) as f64;
            cy += (px / v.width) as f64;
        }
        cx /= pixels.len() as f64;
        cy /= pixels.len() as f64;
        for _ in 0..10 {
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let (nx, ny) = (theta.cos(), theta.sin());
            let far: Vec<u32> = pixels
                .iter()
                .copied()
                .filter(|&px| {
                    let x = (px % v.width) as f64 - cx;
                    let y = (px / v.width) as f64 - cy;
                    x * nx + y * ny >= 0.0
                })
                .collect();
            if far.is_empty() || far.len() == pixels.len() {
                continue;
            }
            for &px in &far {
                v.instance[px as usize] = new_label;
            }
            return Some((label, new_label));
        }
    }
    None
}

/// Fuse a random 4-adjacent pair of same-class instances. Returns the kept
/// label, the absorbed label, and the absorbed pixels.
fn apply_merge(
    v: &mut RenderedView,
    rng: &mut ChaCha8Rng,
    touched: &HashSet<u32>,
) -> Option<(u32, u32, Vec<u32>)> {
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for y in 0..v.height {
        for x in 0..v.width {
            let i = v.idx(x, y);
            let a = v.instance[i];
            if a == 0 {
                continue;
            }
            for (dx, dy) in [(1i64, 0i64), (0, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= v.width as i64 || ny >= v.height as i64 {
                    continue;
                }
                let j = v.idx(nx as u32, ny as u32);
                let b = v.instance[j];
                if b != 0 && b != a && v.semantic[i] == v.semantic[j] {
                    pairs.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs.retain(|(a, b)| !touched.contains(a) && !touched.contains(b));
    if pairs.is_empty() {
        return None;
    }
    let (kept, absorbed) = pairs[rng.gen_range(0..pairs.len())];
    let absorbed_pixels = v.pixels_of(absorbed);
    for &px in &absorbed_pixels {
        v.instance[px as usize] = kept;
    }
    Some((kept, absorbed, absorbed_pixels))
}

/// Stamp a circular spurious detection onto pure background. The fabricated
/// depth is the mean of the view's finite depths so the blob sits at a
/// plausible scene distance.
fn apply_blob(
    v: &mut RenderedView,
    rng: &mut ChaCha8Rng,
    label: u32,
) -> std::result::Result<(u32, u8, f32, Vec<u32>), String> {
    let mut depth_sum = 0.0f64;
    let mut depth_n = 0usize;
    for &d in &v.depth {
        if d.is_finite() {
            depth_sum += d as f64;
            depth_n += 1;
        }
    }
    if depth_n == 0 {
        return Err("view has no foreground to borrow a depth from".into());
    }
    let fake_depth = (depth_sum / depth_n as f64) as f32;

    let r_hi = 6.0f64.min(v.width as f64 / 2.0 - 1.0).min(v.height as f64 / 2.0 - 1.0);
    if r_hi <= 3.0 {
        return Err("frame too small to hold a blob".into());
    }
    for _ in 0..200 {
        let r = rng.gen_range(3.0..r_hi);
        let cx = rng.gen_range(r..(v.width as f64 - r));
        let cy = rng.gen_range(r..(v.height as f64 - r));
        let mut pixels = Vec::new();
        let mut clean = true;
        let x0 = (cx - r).floor() as u32;
        let x1 = (cx + r).ceil() as u32;
        let y0 = (cy - r).floor() as u32;
        let y1 = (cy + r).ceil() as u32;
        'scan: for y in y0..=y1.min(v.height - 1) {
            for x in x0..=x1.min(v.width - 1) {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let i = v.idx(x, y);
                if v.instance[i] != 0 || v.depth[i].is_finite() {
                    clean = false;
                    break 'scan;
                }
                pixels.push(i as u32);
            }
        }
        if !clean || pixels.is_empty() {
            continue;
        }
        let semantic = rng.gen_range(1..=4u8);
        for &px in &pixels {
            v.instance[px as usize] = label;
            v.semantic[px as usize] = semantic;
            v.depth[px as usize] = fake_depth;
        }
        return Ok((label, semantic, fake_depth, pixels));
    }
    Err("no clear background disc found after 200 placements".into())
}

/// Rebuild the original (pre-corruption) instance raster for one view from
/// the corrupted raster plus its log. Exact by construction.
pub fn reconstruct_true_ids(corrupted: &RenderedView, log: &ViewLog) -> Vec<u32> {
    let id_map: BTreeMap<u32, u32> = log.id_map.iter().copied().collect();
    let mut absorbed: BTreeMap<u32, (u32, HashSet<u32>)> = BTreeMap::new();
    let mut lost: Vec<(u32, HashSet<u32>)> = Vec::new();
    for ev in &log.events {
        match ev {
            CorruptionEvent::Merge { true_ids, merged, absorbed_pixels } => {
                absorbed
                    .insert(*merged, (true_ids.1, absorbed_pixels.iter().copied().collect()));
            }
            CorruptionEvent::Loss { true_id, pixels } => {
                lost.push((*true_id, pixels.iter().copied().collect()));
            }
            _ => {}
        }
    }
    corrupted
        .instance
        .iter()
        .enumerate()
        .map(|(px, &label)| {
            if label == 0 {
                for (true_id, pixels) in &lost {
                    if pixels.contains(&(px as u32)) {
                        return *true_id;
                    }
                }
                return 0;
            }
            if let Some((victim_true, pixels)) = absorbed.get(&label) {
                if pixels.contains(&(px as u32)) {
                    return *victim_true;
                }
            }
            id_map.get(&label).copied().unwrap_or(0)
        })
        .collect()
}
