//! Density-based clustering baseline: grid-indexed DBSCAN, a per-class
//! partition builder, and a small parameter sweep scored against
//! ground-truth instances.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::instance_metrics;
use crate::{Error, Result};

/// Multipliers on the mean nearest-neighbor distance tried for eps.
pub const EPS_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Neighborhood sizes tried for the core-point bar.
pub const MIN_PTS_GRID: [usize; 3] = [4, 8, 16];

struct CellIndex {
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    size: f64,
}

impl CellIndex {
    fn build(points: &[Vector3<f64>], size: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, size)).or_default().push(i);
        }
        CellIndex { cells, size }
    }

    fn key(p: &Vector3<f64>, size: f64) -> (i64, i64, i64) {
        (
            (p.x / size).floor() as i64,
            (p.y / size).floor() as i64,
            (p.z / size).floor() as i64,
        )
    }

    /// Indices within `radius` of `p` (the query point itself included),
    /// ascending. Valid whenever radius ≤ cell size.
    fn within(&self, points: &[Vector3<f64>], p: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let (cx, cy, cz) = Self::key(p, self.size);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(
                            bucket.iter().filter(|&&i| (points[i] - p).norm_squared() <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Classic DBSCAN over 3D points. The eps-neighborhood counts the point
/// itself; a point is core when that count reaches `min_pts`. Clusters
/// are numbered 1.. in discovery order, expansion is breadth-first in
/// ascending point order, border points keep the cluster that reached
/// them first, and noise stays 0.
pub fn dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Result<Vec<u32>> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps {eps} must be positive")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    let n = points.len();
    let index = CellIndex::build(points, eps);
    let mut labels = vec![0u32; n];
    let mut visited = vec![false; n];
    let mut next_id = 0u32;
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let neighbors = index.within(points, &points[seed], eps);
        if neighbors.len() < min_pts {
            continue; // noise unless a later cluster reaches it
        }
        next_id += 1;
        labels[seed] = next_id;
        let mut queue: std::collections::VecDeque<usize> = neighbors.into();
        while let Some(q) = queue.pop_front() {
            if labels[q] == 0 {
                labels[q] = next_id; // border or newly reached point
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            let qn = index.within(points, &points[q], eps);
            if qn.len() >= min_pts {
                queue.extend(qn.into_iter().filter(|&i| !visited[i] || labels[i] == 0));
            }
        }
    }
    Ok(labels)
}

/// Exact mean distance to each point's nearest other point, via an
/// expanding shell search over a coarse grid.
pub fn mean_nn_distance(points: &[Vector3<f64>]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("nearest-neighbor spacing needs at least two points"));
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let diag = (hi - lo).norm();
    if diag == 0.0 {
        return Ok(0.0); // every point coincides
    }
    let cell = diag / (n as f64).cbrt();
    let index = CellIndex::build(points, cell);
    let total: f64 = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (cx, cy, cz) = CellIndex::key(p, cell);
            let mut best = f64::INFINITY;
            let mut r: i64 = 0;
            loop {
                // Any point in a cell at Chebyshev ring r is at least
                // (r−1)·cell away, so a found best screens later rings.
                if r > 0 && (r - 1) as f64 * cell > best {
                    break;
                }
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            if let Some(bucket) = index.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                                for &j in bucket {
                                    if j != i {
                                        best = best.min((points[j] - p).norm());
                                    }
                                }
                            }
                        }
                    }
                }
                r += 1;
            }
            best
        })
        .sum();
    Ok(total / n as f64)
}

/// Cluster each semantic class separately and merge the results into one
/// partition: class boundaries can never be bridged, and cluster IDs are
/// offset per class so the union stays disjoint. Background points
/// (class 0) are left unlabeled.
pub fn cluster_partition(
    positions: &[Vector3<f64>],
    semantic: &[u8],
    eps: f64,
    min_pts: usize,
) -> Result<Vec<u32>> {
    if positions.len() != semantic.len() {
        return Err(Error::invalid(format!(
            "{} positions vs {} semantic labels",
            positions.len(),
            semantic.len()
        )));
    }
    let mut classes: Vec<u8> = semantic.iter().cloned().filter(|&c| c != 0).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut labels = vec![0u32; positions.len()];
    let mut offset = 0u32;
    for c in classes {
        let idxs: Vec<usize> =
            (0..positions.len()).filter(|&i| semantic[i] == c).collect();
        let pts: Vec<Vector3<f64>> = idxs.iter().map(|&i| positions[i]).collect();
        let sub = dbscan(&pts, eps, min_pts)?;
        let used = sub.iter().cloned().max().unwrap_or(0);
        for (k, &i) in idxs.iter().enumerate() {
            if sub[k] != 0 {
                labels[i] = sub[k] + offset;
            }
        }
        offset += used;
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub min_pts: usize,
    pub mean_weighted_coverage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub eps: f64,
    pub min_pts: usize,
    pub mean_weighted_coverage: f64,
    pub labels: Vec<u32>,
    pub sweep: Vec<SweepRow>,
}

/// Sweep the (eps, min_pts) grid, score every per-class partition by
/// weighted coverage against ground-truth instances, and keep the best.
/// Ties break toward smaller eps, then smaller min_pts.
pub fn tune_dbscan(
    positions: &[Vector3<f64>],
    semantic: &[u8],
    gt_instance: &[u32],
) -> Result<TuneOutcome> {
    if positions.len() != gt_instance.len() {
        return Err(Error::invalid(format!(
            "{} positions vs {} ground-truth labels",
            positions.len(),
            gt_instance.len()
        )));
    }
    let spacing = mean_nn_distance(positions)?;
    if spacing == 0.0 {
        return Err(Error::invalid("degenerate cloud: all points coincide"));
    }
    let mut best: Option<TuneOutcome> = None;
    let mut sweep = Vec::with_capacity(EPS_GRID.len() * MIN_PTS_GRID.len());
    for mult in EPS_GRID {
        let eps = mult * spacing;
        for min_pts in MIN_PTS_GRID {
            let labels = cluster_partition(positions, semantic, eps, min_pts)?;
            let score = instance_metrics(&labels, gt_instance)?.mean_weighted_coverage;
            sweep.push(SweepRow { eps, min_pts, mean_weighted_coverage: score });
            let better = best.as_ref().map_or(true, |b| score > b.mean_weighted_coverage);
            if better {
                best = Some(TuneOutcome {
                    eps,
                    min_pts,
                    mean_weighted_coverage: score,
                    labels,
                    sweep: Vec::new(),
                });
            }
        }
    }
    let mut out = best.expect("sweep grid is never empty");
    out.sweep = sweep;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Textbook O(n²) DBSCAN used as the ground truth for the grid
    /// version. Same expansion order, no spatial index.
    fn dbscan_reference(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Vec<u32> {
        let n = points.len();
        let neigh = |i: usize| -> Vec<usize> {
            (0..n).filter(|&j| (points[j] - points[i]).norm() <= eps).collect()
        };
        let mut labels = vec![0u32; n];
        let mut visited = vec![false; n];
        let mut next = 0u32;
        for s in 0..n {
            if visited[s] {
                continue;
            }
            visited[s] = true;
            let ns = neigh(s);
            if ns.len() < min_pts {
                continue;
            }
            next += 1;
            labels[s] = next;
            let mut queue: std::collections::VecDeque<usize> = ns.into();
            while let Some(q) = queue.pop_front() {
                if labels[q] == 0 {
                    labels[q] = next;
                }
                if visited[q] {
                    continue;
                }
                visited[q] = true;
                let qn = neigh(q);
                if qn.len() >= min_pts {
                    queue.extend(qn.into_iter().filter(|&i| !visited[i] || labels[i] == 0));
                }
            }
        }
        labels
    }

    fn canonical(labels: &[u32]) -> Vec<u32> {
        let mut map = std::collections::HashMap::new();
        let mut next = 0u32;
        labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *map.entry(l).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect()
    }

    #[test]
    fn grid_dbscan_matches_quadratic_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for round in 0..10 {
            let n = rng.gen_range(50..=500);
            let pts = random_cloud(&mut rng, n);
            let eps = rng.gen_range(0.02..0.2);
            let min_pts = rng.gen_range(1..=8);
            let fast = dbscan(&pts, eps, min_pts).unwrap();
            let slow = dbscan_reference(&pts, eps, min_pts);
            assert_eq!(canonical(&fast), canonical(&slow), "round {round}");
        }
    }

    #[test]
    fn two_blobs_split_then_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        for _ in 0..30 {
            pts.push(Vector3::new(rng.gen::<f64>() * 0.1, rng.gen::<f64>() * 0.1, 0.0));
        }
        for _ in 0..30 {
            pts.push(Vector3::new(
                2.0 + rng.gen::<f64>() * 0.1,
                rng.gen::<f64>() * 0.1,
                0.0,
            ));
        }
        let tight = dbscan(&pts, 0.2, 3).unwrap();
        let ids: std::collections::BTreeSet<u32> =
            tight.iter().cloned().filter(|&l| l != 0).collect();
        assert_eq!(ids.len(), 2);
        let loose = dbscan(&pts, 3.0, 3).unwrap();
        assert!(loose.iter().all(|&l| l == 1));
    }

    #[test]
    fn high_min_pts_turns_everything_to_noise() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.1, 0.0, 0.0)];
        let labels = dbscan(&pts, 1.0, 5).unwrap();
        assert_eq!(labels, vec![0, 0]);
        assert!(dbscan(&pts, 0.0, 3).is_err());
        assert!(dbscan(&pts, 1.0, 0).is_err());
    }

    #[test]
    fn border_point_keeps_first_discoverer() {
        // Two clusters of cores with one shared point between them. The
        // shared point sees exactly one core from each side (3 neighbors
        // counting itself, below the min_pts of 4), so it is a border
        // point and must keep the cluster that reached it first.
        let xs = [
            0.00, 0.02, 0.04, 0.30, // cluster A, last point reaching out
            1.26, 1.30, 1.34, 1.38, // cluster B
            0.78, // border: 0.48 from A's tip, 0.48 from B's head
        ];
        let pts: Vec<Vector3<f64>> =
            xs.iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect();
        let labels = dbscan(&pts, 0.5, 4).unwrap();
        assert_eq!(labels[8], labels[0]);
        assert_ne!(labels[8], labels[4]);
    }

    #[test]
    fn mean_nn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_cloud(&mut rng, 300);
        let fast = mean_nn_distance(&pts).unwrap();
        let brute: f64 = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                pts.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| (q - p).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / pts.len() as f64;
        assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
    }

    #[test]
    fn per_class_partition_never_bridges_classes() {
        // Two interleaved classes in one tight blob: clustering per class
        // must keep them in separate clusters no matter the radius.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_cloud(&mut rng, 100);
        let sem: Vec<u8> = (0..100).map(|i| 1 + (i % 2) as u8).collect();
        let labels = cluster_partition(&pts, &sem, 5.0, 2).unwrap();
        for i in 0..100 {
            for j in 0..100 {
                if sem[i] != sem[j] && labels[i] != 0 {
                    assert_ne!(labels[i], labels[j]);
                }
            }
        }
    }

    #[test]
    fn tuner_recovers_two_separated_organs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        let mut gt = Vec::new();
        for _ in 0..200 {
            pts.push(Vector3::new(rng.gen::<f64>() * 0.2, rng.gen::<f64>() * 0.2, 0.0));
            gt.push(1u32);
        }
        for _ in 0..200 {
            pts.push(Vector3::new(
                3.0 + rng.gen::<f64>() * 0.2,
                rng.gen::<f64>() * 0.2,
                0.0,
            ));
            gt.push(2u32);
        }
        let sem = vec![1u8; 400];
        let out = tune_dbscan(&pts, &sem, &gt).unwrap();
        assert!(out.mean_weighted_coverage > 0.95, "{}", out.mean_weighted_coverage);
        assert_eq!(out.sweep.len(), 12);
        // All-perfect candidates tie; the smallest eps must win.
        let best_score = out.mean_weighted_coverage;
        let smallest_winning = out
            .sweep
            .iter()
            .filter(|r| r.mean_weighted_coverage == best_score)
            .map(|r| (r.eps, r.min_pts))
            .fold((f64::INFINITY, usize::MAX), |acc, (e, m)| {
                if e < acc.0 || (e == acc.0 && m < acc.1) {
                    (e, m)
                } else {
                    acc
                }
            });
        assert_eq!((out.eps, out.min_pts), smallest_winning);
    }
}
