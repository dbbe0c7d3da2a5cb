//! Ground-truth label transfer and the evaluation suite: per-class
//! semantic scores, instance-level precision/recall/coverage, and
//! point-set completeness.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::SceneSpec;
use crate::{Error, Result};

/// Label every position with the semantic class and instance ID of the
/// nearest primitive surface (ties go to the lower instance ID).
pub fn transfer_labels(positions: &[Vector3<f64>], scene: &SceneSpec) -> (Vec<u8>, Vec<u32>) {
    let pairs: Vec<(u8, u32)> = positions
        .par_iter()
        .map(|p| {
            let prim = scene.nearest_primitive(p);
            (prim.semantic_class, prim.instance_id)
        })
        .collect();
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_iou: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class confusion counts and scores over paired label arrays.
/// Classes absent from both arrays do not appear and cannot dilute the
/// macro averages; 0 is background, not a class.
pub fn semantic_metrics(pred: &[u8], gt: &[u8]) -> Result<SemanticReport> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "semantic label arrays differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let classes: BTreeSet<u8> =
        pred.iter().chain(gt).cloned().filter(|&c| c != 0).collect();
    let mut per_class = Vec::with_capacity(classes.len());
    for c in classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&p, &g) in pred.iter().zip(gt) {
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let iou = ratio(tp, tp + fp + fn_);
        per_class.push(ClassMetrics {
            class: c,
            true_pos: tp,
            false_pos: fp,
            false_neg: fn_,
            precision,
            recall,
            f1,
            iou,
        });
    }
    let n = per_class.len().max(1) as f64;
    Ok(SemanticReport {
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
        macro_iou: per_class.iter().map(|m| m.iou).sum::<f64>() / n,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InstanceReport {
    pub n_predicted: usize,
    pub n_gt: usize,
    pub true_positives: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_coverage: f64,
    pub mean_weighted_coverage: f64,
    /// Set when the prediction carries no instances at all; the zeroed
    /// scores then mean "nothing predicted", not "everything wrong".
    pub empty_prediction: bool,
}

/// Instance-level scores over paired label arrays. Label 0 means "no
/// instance" on both sides and never forms a set. A predicted instance
/// counts as a true positive when its best-overlap ground-truth match
/// exceeds IoU 0.5; coverage averages each ground-truth instance's best
/// IoU, unweighted (mCov) and weighted by instance size (mWCov).
pub fn instance_metrics(pred: &[u32], gt: &[u32]) -> Result<InstanceReport> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "instance label arrays differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut pred_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut gt_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if p != 0 {
            *pred_size.entry(p).or_default() += 1;
        }
        if g != 0 {
            *gt_size.entry(g).or_default() += 1;
        }
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_default() += 1;
        }
    }
    if gt_size.is_empty() {
        return Err(Error::invalid("no ground-truth instances to score against"));
    }
    let iou = |p: u32, g: u32| -> f64 {
        let i = inter.get(&(p, g)).copied().unwrap_or(0);
        let u = pred_size[&p] + gt_size[&g] - i;
        i as f64 / u as f64
    };
    let true_positives = pred_size
        .keys()
        .filter(|&&p| gt_size.keys().any(|&g| iou(p, g) > 0.5))
        .count();
    let total_gt: usize = gt_size.values().sum();
    let mut cov = 0.0;
    let mut wcov = 0.0;
    for (&g, &size) in &gt_size {
        let best = pred_size.keys().map(|&p| iou(p, g)).fold(0.0, f64::max);
        cov += best;
        wcov += best * size as f64;
    }
    wcov /= total_gt as f64;
    let empty_prediction = pred_size.is_empty();
    Ok(InstanceReport {
        n_predicted: pred_size.len(),
        n_gt: gt_size.len(),
        true_positives,
        mean_precision: ratio(true_positives, pred_size.len()),
        mean_recall: ratio(true_positives, gt_size.len()),
        mean_coverage: cov / gt_size.len() as f64,
        mean_weighted_coverage: wcov,
        empty_prediction,
    })
}

/// Fraction of `gt` points whose nearest `test` point lies within
/// `epsilon`. Indexed by an epsilon-sized voxel grid, so only the 27
/// surrounding cells are scanned per query; results match the brute-force
/// definition exactly.
pub fn completeness(gt: &[Vector3<f64>], test: &[Vector3<f64>], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be positive")));
    }
    if gt.is_empty() {
        return Err(Error::invalid("completeness needs at least one reference point"));
    }
    if test.is_empty() {
        return Ok(0.0);
    }
    let cell = |p: &Vector3<f64>| -> (i64, i64, i64) {
        (
            (p.x / epsilon).floor() as i64,
            (p.y / epsilon).floor() as i64,
            (p.z / epsilon).floor() as i64,
        )
    };
    let mut index: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in test.iter().enumerate() {
        index.entry(cell(p)).or_default().push(i);
    }
    let eps2 = epsilon * epsilon;
    let covered = gt
        .par_iter()
        .filter(|p| {
            let (cx, cy, cz) = cell(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(bucket) = index.get(&(cx + dx, cy + dy, cz + dz)) {
                            if bucket.iter().any(|&i| (test[i] - *p).norm_squared() <= eps2) {
                                return true;
                            }
                        }
                    }
                }
            }
            false
        })
        .count();
    Ok(covered as f64 / gt.len() as f64)
}

/// Everything the evaluation stage reports for one extracted cloud.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub semantic: SemanticReport,
    pub instance: InstanceReport,
    pub completeness: f64,
    pub completeness_epsilon: f64,
    pub n_points: usize,
    pub config_hash: String,
}
