//! Cross-view instance unification. Per-view instance labels arrive with
//! arbitrary numbering and injected defects; this module picks main views one
//! at a time, votes every main instance into all other views through exact
//! depth, repairs what the votes condemn, and leaves every surviving
//! instance carrying one scene-wide ID.

pub mod detect;
pub mod strategies;
pub mod votes;

pub use detect::{detect_errors, error_scores, ErrorReport, Finding};
pub use strategies::{apply_strategies, erase_instance, GlobalLabelState};
pub use votes::{
    argmax_hist, cast_votes, instance_masks, sample_instance_points, vote_target, DepthSource,
    ForwardVoteTable, Histogram, InverseVoteTable, MatchConfig, RasterDepth, VoteTarget,
};

use crate::camera::{unproject_pixel, CameraSpec};
use crate::rng::{stage_rng, Stage};
use crate::scene::RenderedView;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Why the main-view loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Every view served as main.
    FullTraversal,
    /// Hit the iteration cap.
    IterationCap,
    /// Too few unassigned instances left to justify another round.
    FewUnassigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    View(usize),
    Done(StopReason),
}

/// One (view, local) -> global binding in the final labeling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub view: usize,
    pub local: u32,
    pub global: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    pub main_view: usize,
    pub report: ErrorReport,
}

/// Everything the matcher concluded, shaped for a JSON dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchStats {
    pub iterations: usize,
    pub processed: Vec<usize>,
    pub stop: StopReason,
    /// Distinct globals reached through voting; they occupy 1..=n_globals.
    pub n_globals: u32,
    /// Instances nothing vouched for; they hold IDs above n_globals.
    pub n_fresh: u32,
    pub n_eliminated: u32,
    pub mapping: Vec<MapEntry>,
    pub eliminated: Vec<(usize, u32)>,
    pub error_scores: Vec<u32>,
    pub trace: Vec<IterationTrace>,
}

impl MatchStats {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    /// Input views rewritten with global instance IDs; eliminated instances
    /// are erased to background.
    pub views: Vec<RenderedView>,
    pub stats: MatchStats,
}

/// First main view: a seeded-random pick among the views whose instance
/// count is modal. When every count is unique each has frequency one, so
/// every view is a candidate.
pub fn select_first_main<R: Rng>(views: &[RenderedView], rng: &mut R) -> usize {
    let counts: Vec<usize> = views.iter().map(|v| v.present_instances().len()).collect();
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &counts {
        *freq.entry(c).or_insert(0) += 1;
    }
    let max_freq = freq.values().copied().max().unwrap_or(0);
    let candidates: Vec<usize> = (0..views.len())
        .filter(|&v| freq[&counts[v]] == max_freq)
        .collect();
    candidates[rng.gen_range(0..candidates.len())]
}

/// Instances present in rasters but bound to no global yet, per view.
fn unassigned_counts(state: &GlobalLabelState, views: &[RenderedView]) -> Vec<usize> {
    views
        .iter()
        .enumerate()
        .map(|(v, view)| {
            view.present_instances()
                .iter()
                .filter(|&&id| !state.assigned.contains_key(&(v, id)))
                .count()
        })
        .collect()
}

/// Next main view, or DONE. Views sit on a camera ring, so candidates are
/// the unprocessed ring neighbors of the processed arc; among them the score
/// rewards unassigned instances and punishes accumulated error flags.
pub fn select_next_main(
    state: &GlobalLabelState,
    views: &[RenderedView],
    cfg: &MatchConfig,
) -> Selection {
    let n = views.len();
    if state.processed.len() == n {
        return Selection::Done(StopReason::FullTraversal);
    }
    if state.iterations >= cfg.max_iterations {
        return Selection::Done(StopReason::IterationCap);
    }
    let unassigned = unassigned_counts(state, views);
    let total: usize = unassigned.iter().sum();
    if total < cfg.unassigned_stop {
        return Selection::Done(StopReason::FewUnassigned);
    }

    let processed: BTreeSet<usize> = state.processed.iter().copied().collect();
    let candidates: Vec<usize> = (0..n)
        .filter(|&v| {
            !processed.contains(&v)
                && (processed.contains(&((v + 1) % n)) || processed.contains(&((v + n - 1) % n)))
        })
        .collect();
    let max_count = unassigned.iter().copied().max().unwrap_or(0).max(1);
    let total_flags: u32 = state.error_scores.iter().sum();
    let best = candidates.into_iter().max_by(|&a, &b| {
        let score = |v: usize| {
            unassigned[v] as f64 / max_count as f64
                - state.error_scores[v] as f64 / (1.0 + total_flags as f64)
        };
        score(a)
            .partial_cmp(&score(b))
            .expect("scores are finite")
            .then_with(|| b.cmp(&a))
    });
    match best {
        Some(v) => Selection::View(v),
        None => Selection::Done(StopReason::FullTraversal),
    }
}

/// Majority-background test for one instance against every other view: the
/// same evidence rule that condemns phantoms during iteration, applied to a
/// single mask. True means "this is noise, not geometry".
fn bg_majority(
    v: usize,
    id: u32,
    views: &[RenderedView],
    cameras: &[CameraSpec],
    cfg: &MatchConfig,
) -> bool {
    let view = &views[v];
    let mask: Vec<(u32, u32)> = view
        .pixels_of(id)
        .into_iter()
        .map(|i| (i % view.width, i / view.width))
        .collect();
    if mask.is_empty() {
        return false;
    }
    let samples = sample_instance_points(&mask, cfg.target_samples, cfg.min_samples, cfg.max_step);
    let cam = &cameras[v];
    let mut pts = Vec::with_capacity(samples.len());
    for (x, y) in samples {
        let d = view.depth[view.idx(x, y)];
        if !d.is_finite() {
            continue;
        }
        pts.push(unproject_pixel(x as f64 + 0.5, y as f64 + 0.5, d as f64, &cam.intr, &cam.pose));
    }
    if pts.is_empty() {
        return false;
    }
    let depth = RasterDepth { views, cameras, tolerance: cfg.depth_tolerance };
    let (mut valid, mut bg_wins) = (0usize, 0usize);
    for a in 0..views.len() {
        if a == v {
            continue;
        }
        let mut hist = Histogram::new();
        for p in &pts {
            *hist.entry(vote_target(p, a, views, cameras, &depth)).or_insert(0) += 1;
        }
        if let Some(w) = argmax_hist(&hist) {
            valid += 1;
            if w == VoteTarget::Bg {
                bg_wins += 1;
            }
        }
    }
    valid > 0 && bg_wins as f64 > 0.5 * valid as f64
}

/// Full matching loop. Rasters are copied and edited in place (eliminations
/// free their pixels for later rounds); the returned views carry final
/// global IDs with voted assignments compacted to 1..=n_globals and
/// leftovers minted fresh above them.
pub fn run_im(
    views: &[RenderedView],
    cameras: &[CameraSpec],
    cfg: &MatchConfig,
    seed: u64,
) -> Result<MatchOutcome> {
    if views.len() < 2 {
        return Err(Error::invalid("instance matching needs at least two views"));
    }
    if views.len() != cameras.len() {
        return Err(Error::invalid(format!(
            "{} views but {} cameras",
            views.len(),
            cameras.len()
        )));
    }

    let mut working: Vec<RenderedView> = views.to_vec();
    let mut state = GlobalLabelState::new(views.len());
    let mut rng = stage_rng(seed, Stage::Match);
    let mut main = select_first_main(&working, &mut rng);
    let mut trace = Vec::new();
    let stop;
    loop {
        state.processed.push(main);
        state.iterations += 1;
        let aux: Vec<usize> = (0..working.len()).filter(|&i| i != main).collect();
        let (fwd, inv) = {
            let depth = RasterDepth { views: &working, cameras, tolerance: cfg.depth_tolerance };
            cast_votes(main, &working, cameras, &aux, &depth, cfg)
        };
        let report = detect_errors(&fwd, &inv);
        apply_strategies(&mut state, &report, &fwd, &inv, &mut working);
        trace.push(IterationTrace { main_view: main, report });
        match select_next_main(&state, &working, cfg) {
            Selection::Done(reason) => {
                stop = reason;
                break;
            }
            Selection::View(v) => main = v,
        }
    }

    // Leftovers nobody vouched for get one last phantom check each, in
    // (view, ID) order; eliminations free pixels immediately so later checks
    // see them gone.
    let mut leftovers: Vec<(usize, u32)> = Vec::new();
    for (v, view) in working.iter().enumerate() {
        for id in view.present_instances() {
            if !state.assigned.contains_key(&(v, id)) {
                leftovers.push((v, id));
            }
        }
    }
    for (v, id) in leftovers {
        if bg_majority(v, id, &working, cameras, cfg) {
            erase_instance(&mut working[v], id);
            state.eliminate(v, id);
        }
    }

    // Compact voted globals to 1..=K by union root, then mint fresh IDs for
    // the surviving leftovers.
    let keys: Vec<(usize, u32)> = state.assigned.keys().copied().collect();
    let mut roots: BTreeSet<u32> = BTreeSet::new();
    for &(v, id) in &keys {
        roots.insert(state.global_of(v, id).expect("key came from the map"));
    }
    let compact: BTreeMap<u32, u32> =
        roots.iter().enumerate().map(|(i, &r)| (r, i as u32 + 1)).collect();
    let n_globals = compact.len() as u32;
    let mut final_map: BTreeMap<(usize, u32), u32> = BTreeMap::new();
    for (v, id) in keys {
        let root = state.global_of(v, id).expect("key came from the map");
        final_map.insert((v, id), compact[&root]);
    }
    let mut next = n_globals;
    let mut n_fresh = 0u32;
    for (v, view) in working.iter().enumerate() {
        for id in view.present_instances() {
            if !final_map.contains_key(&(v, id)) {
                next += 1;
                n_fresh += 1;
                final_map.insert((v, id), next);
            }
        }
    }
    for (v, view) in working.iter_mut().enumerate() {
        for px in view.instance.iter_mut() {
            if *px != 0 {
                *px = final_map[&(v, *px)];
            }
        }
    }

    let stats = MatchStats {
        iterations: state.iterations,
        processed: state.processed.clone(),
        stop,
        n_globals,
        n_fresh,
        n_eliminated: state.eliminated.len() as u32,
        mapping: final_map
            .into_iter()
            .map(|((view, local), global)| MapEntry { view, local, global })
            .collect(),
        eliminated: state.eliminated.iter().copied().collect(),
        error_scores: state.error_scores.clone(),
        trace,
    };
    Ok(MatchOutcome { views: working, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::geom::Aabb;
    use crate::scene::{
        build_plant, camera_ring, corrupt_labels, reconstruct_true_ids, render_view,
        CorruptionConfig, CorruptionEvent, OrganCounts, SceneSpec,
    };

    fn fake_view(ids: &[u32]) -> RenderedView {
        RenderedView {
            width: ids.len() as u32,
            height: 1,
            rgb: vec![0; ids.len() * 3],
            semantic: ids.iter().map(|&i| (i != 0) as u8).collect(),
            instance: ids.to_vec(),
            depth: ids
                .iter()
                .map(|&i| if i != 0 { 1.0 } else { f32::INFINITY })
                .collect(),
        }
    }

    fn ring_world(
        seed: u64,
        counts: OrganCounts,
        n_views: usize,
    ) -> (SceneSpec, Vec<CameraSpec>, Vec<RenderedView>) {
        let bounds = Aabb::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
        let scene = build_plant(seed, &counts, &bounds).unwrap();
        let intr =
            Intrinsics { fx: 110.0, fy: 110.0, cx: 48.0, cy: 36.0, width: 96, height: 72 };
        let cams = camera_ring(n_views, &intr, 3.0, 30.0, &bounds.center());
        let views: Vec<_> = cams.iter().map(|c| render_view(&scene, &intr, &c.pose)).collect();
        (scene, cams, views)
    }

    #[test]
    fn first_main_prefers_modal_count() {
        let views = vec![
            fake_view(&[1, 2, 3, 4, 5]),
            fake_view(&[1, 2, 3, 4, 5]),
            fake_view(&[1, 2, 3, 4, 5]),
            fake_view(&[1, 2, 3, 4]),
        ];
        let mut rng = stage_rng(1, Stage::Match);
        for _ in 0..20 {
            assert!(select_first_main(&views, &mut rng) <= 2);
        }
    }

    #[test]
    fn first_main_all_distinct_counts_allows_any_view() {
        let views = vec![
            fake_view(&[1]),
            fake_view(&[1, 2]),
            fake_view(&[1, 2, 3]),
            fake_view(&[1, 2, 3, 4]),
        ];
        let mut rng = stage_rng(2, Stage::Match);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            seen.insert(select_first_main(&views, &mut rng));
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn first_main_is_seed_deterministic() {
        let views = vec![fake_view(&[1, 2]), fake_view(&[1, 2]), fake_view(&[1, 2])];
        let pick = |seed| {
            let mut rng = stage_rng(seed, Stage::Match);
            select_first_main(&views, &mut rng)
        };
        assert_eq!(pick(9), pick(9));
    }

    #[test]
    fn stops_at_iteration_cap() {
        let views: Vec<_> = (0..3).map(|_| fake_view(&[1, 2, 3, 4])).collect();
        let mut state = GlobalLabelState::new(3);
        state.processed = vec![0];
        state.iterations = 12;
        let sel = select_next_main(&state, &views, &MatchConfig::default());
        assert_eq!(sel, Selection::Done(StopReason::IterationCap));
    }

    #[test]
    fn stops_when_few_unassigned_remain() {
        let views: Vec<_> = (0..3).map(|_| fake_view(&[1, 2, 3])).collect();
        let mut state = GlobalLabelState::new(3);
        state.processed = vec![0];
        state.iterations = 1;
        let sel = select_next_main(&state, &views, &MatchConfig::default());
        assert_eq!(sel, Selection::Done(StopReason::FewUnassigned));
    }

    #[test]
    fn next_main_avoids_penalized_neighbor() {
        let views: Vec<_> = (0..4).map(|_| fake_view(&[1, 2, 3])).collect();
        let mut state = GlobalLabelState::new(4);
        state.processed = vec![1];
        state.iterations = 1;
        state.error_scores = vec![3, 0, 0, 0];
        // Ring neighbors of view 1 are 0 and 2; 0 carries penalties.
        assert_eq!(
            select_next_main(&state, &views, &MatchConfig::default()),
            Selection::View(2)
        );
        // With the penalty gone the tie falls to the lower index.
        state.error_scores = vec![0, 0, 0, 0];
        assert_eq!(
            select_next_main(&state, &views, &MatchConfig::default()),
            Selection::View(0)
        );
    }

    #[test]
    fn run_im_needs_two_views() {
        let views = vec![fake_view(&[1])];
        let intr = Intrinsics { fx: 50.0, fy: 50.0, cx: 0.5, cy: 0.5, width: 1, height: 1 };
        let cams = camera_ring(1, &intr, 3.0, 30.0, &nalgebra::Vector3::zeros());
        assert!(run_im(&views, &cams, &MatchConfig::default(), 0).is_err());
    }

    #[test]
    fn single_instance_three_views_share_one_global() {
        use crate::scene::{OrganPrimitive, Shape};
        let bounds = Aabb::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
        let scene = SceneSpec {
            primitives: vec![OrganPrimitive {
                shape: Shape::Sphere { radius: 0.45 },
                semantic_class: 3,
                instance_id: 1,
                rot: nalgebra::Matrix3::identity(),
                center: nalgebra::Vector3::zeros(),
                base_color: [0.8, 0.3, 0.2],
            }],
            bounds,
            light_dir: nalgebra::Vector3::new(0.3, -0.5, 0.8).normalize(),
        };
        let intr =
            Intrinsics { fx: 110.0, fy: 110.0, cx: 48.0, cy: 36.0, width: 96, height: 72 };
        let cams = camera_ring(3, &intr, 3.0, 30.0, &bounds.center());
        let views: Vec<_> = cams.iter().map(|c| render_view(&scene, &intr, &c.pose)).collect();
        let cfg = MatchConfig { unassigned_stop: 1, ..Default::default() };
        let out = run_im(&views, &cams, &cfg, 11).unwrap();
        assert_eq!(out.stats.n_globals, 1);
        assert_eq!(out.stats.n_fresh, 0);
        assert_eq!(out.stats.n_eliminated, 0);
        for (v, view) in out.views.iter().enumerate() {
            assert_eq!(view.present_instances(), vec![1], "view {v}");
            // Pixel sets are untouched, only relabeled.
            assert_eq!(
                view.pixels_of(1),
                views[v].pixels_of(views[v].present_instances()[0])
            );
        }
    }

    #[test]
    fn permutation_only_recovers_exact_partition() {
        let counts = OrganCounts { stems: 1, leaves: 2, fruits: 1, flowers: 0 };
        let (scene, cams, clean) = ring_world(5, counts, 8);
        let (corrupted, log) =
            corrupt_labels(&clean, &CorruptionConfig::default(), 21).unwrap();
        // Small scene: drive the loop to zero stragglers instead of stopping
        // at the default coarse threshold.
        let cfg = MatchConfig { unassigned_stop: 1, ..Default::default() };
        let out = run_im(&corrupted, &cams, &cfg, 21).unwrap();
        assert_eq!(out.stats.n_eliminated, 0);
        assert_eq!(out.stats.n_fresh, 0);
        assert_eq!(out.stats.n_globals as usize, scene.num_instances());

        // Global IDs and true IDs must be in bijection, pixel for pixel.
        let mut g2t: BTreeMap<u32, u32> = BTreeMap::new();
        let mut t2g: BTreeMap<u32, u32> = BTreeMap::new();
        for (v, view) in out.views.iter().enumerate() {
            let truth = reconstruct_true_ids(&corrupted[v], &log.views[v]);
            for i in 0..view.instance.len() {
                let (g, t) = (view.instance[i], truth[i]);
                assert_eq!(g == 0, t == 0, "view {v} pixel {i}");
                if g != 0 {
                    assert_eq!(*g2t.entry(g).or_insert(t), t, "global {g} view {v}");
                    assert_eq!(*t2g.entry(t).or_insert(g), g, "true {t} view {v}");
                }
            }
        }
    }

    #[test]
    fn injected_blob_is_eliminated() {
        let counts = OrganCounts { stems: 1, leaves: 2, fruits: 0, flowers: 0 };
        let (_, cams, clean) = ring_world(7, counts, 8);
        let cfg = CorruptionConfig { blob_views: Some(vec![2]), ..Default::default() };
        let (corrupted, log) = corrupt_labels(&clean, &cfg, 4).unwrap();
        let blob = log.views[2]
            .events
            .iter()
            .find_map(|e| match e {
                CorruptionEvent::Blob { label, pixels, .. } => Some((*label, pixels.clone())),
                _ => None,
            })
            .expect("blob was requested for view 2");
        let out = run_im(&corrupted, &cams, &MatchConfig::default(), 4).unwrap();
        assert!(
            out.stats.eliminated.contains(&(2, blob.0)),
            "blob {} survived: {:?}",
            blob.0,
            out.stats.eliminated
        );
        for &i in &blob.1 {
            assert_eq!(out.views[2].instance[i as usize], 0);
            assert_eq!(out.views[2].semantic[i as usize], 0);
            assert!(out.views[2].depth[i as usize].is_infinite());
        }
    }

    #[test]
    fn rerun_is_bit_identical() {
        let counts = OrganCounts { stems: 1, leaves: 2, fruits: 1, flowers: 0 };
        let (_, cams, clean) = ring_world(5, counts, 6);
        let cfg = CorruptionConfig { split_rate: 0.2, ..Default::default() };
        let (corrupted, _) = corrupt_labels(&clean, &cfg, 9).unwrap();
        let a = run_im(&corrupted, &cams, &MatchConfig::default(), 9).unwrap();
        let b = run_im(&corrupted, &cams, &MatchConfig::default(), 9).unwrap();
        assert_eq!(
            serde_json::to_string(&a.stats).unwrap(),
            serde_json::to_string(&b.stats).unwrap()
        );
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.instance, vb.instance);
            assert_eq!(va.semantic, vb.semantic);
        }
    }

    #[test]
    fn local_id_permutation_leaves_partition_unchanged() {
        fn canon(view: &RenderedView) -> Vec<u32> {
            let mut map = BTreeMap::new();
            let mut next = 0u32;
            view.instance
                .iter()
                .map(|&id| {
                    if id == 0 {
                        0
                    } else {
                        *map.entry(id).or_insert_with(|| {
                            next += 1;
                            next
                        })
                    }
                })
                .collect()
        }

        let counts = OrganCounts { stems: 1, leaves: 2, fruits: 0, flowers: 0 };
        let (_, cams, views) = ring_world(13, counts, 5);
        let mut swapped = views.clone();
        for px in swapped[1].instance.iter_mut() {
            *px = match *px {
                1 => 2,
                2 => 1,
                other => other,
            };
        }
        let a = run_im(&views, &cams, &MatchConfig::default(), 3).unwrap();
        let b = run_im(&swapped, &cams, &MatchConfig::default(), 3).unwrap();
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(canon(va), canon(vb));
        }
    }
}
