//! Seven-channel pixel codec: RGB stays raw, the semantic class becomes one
//! 8-bit level, and the global instance ID becomes a 24-bit codeword spread
//! over three channels. Rendering blends these codes along rays, so decoding
//! is nearest-neighbor and the codewords are spaced as far apart as the
//! codebook size allows; consecutive integers would not survive the blend.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const MAX_CLASSES: usize = 32;
pub const MAX_INSTANCES: usize = 4096;

/// Semantic class -> 8-bit level, equally spaced over (0, 255]. Level 0 is
/// background and is not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticCodebook {
    levels: BTreeMap<u8, u8>,
}

impl SemanticCodebook {
    pub fn level(&self, class: u8) -> Option<u8> {
        if class == 0 {
            Some(0)
        } else {
            self.levels.get(&class).copied()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.levels.len()
    }

    /// Nearest level for a normalized channel value; ties go to the smaller
    /// class (background included as level 0).
    pub fn decode(&self, s_unit: f64) -> u8 {
        let s = s_unit * 255.0;
        let mut best = (s.abs(), 0u8);
        for (&class, &level) in &self.levels {
            let d = (s - level as f64).abs();
            if d < best.0 {
                best = (d, class);
            }
        }
        best.1
    }
}

/// Global instance ID -> (I₁, I₂, I₃) codeword. The all-zero code is reserved
/// for background; every foreground codeword keeps all channels ≥ 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCodebook {
    ids: Vec<u32>,
    codes: Vec<[u8; 3]>,
    /// Minimum pairwise codeword distance in normalized [0,1]³ space, the
    /// decoding noise margin is half of this.
    pub min_distance: f64,
}

impl InstanceCodebook {
    pub fn code(&self, id: u32) -> Option<[u8; 3]> {
        if id == 0 {
            return Some([0, 0, 0]);
        }
        self.ids.binary_search(&id).ok().map(|i| self.codes[i])
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Nearest codeword for normalized channels; background (0,0,0) competes
    /// too. Ties go to the smaller id.
    pub fn decode(&self, i_unit: [f64; 3]) -> u32 {
        let dist2 = |c: [u8; 3]| -> f64 {
            let mut s = 0.0;
            for k in 0..3 {
                let d = i_unit[k] - c[k] as f64 / 255.0;
                s += d * d;
            }
            s
        };
        let mut best = (dist2([0, 0, 0]), 0u32);
        for (i, &code) in self.codes.iter().enumerate() {
            let d = dist2(code);
            let id = self.ids[i];
            if d < best.0 || (d == best.0 && id < best.1) {
                best = (d, id);
            }
        }
        best.1
    }
}

/// Seven channels in byte domain: R, G, B, S₁, I₁, I₂, I₃.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelVector {
    pub channels: [u8; 7],
}

impl PixelVector {
    pub fn to_unit(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        for (o, &c) in out.iter_mut().zip(&self.channels) {
            *o = c as f64 / 255.0;
        }
        out
    }
}

/// Build both codebooks. Semantic levels are round(255·c/num_classes).
/// Instance codewords are lattice points of the k³ grid spanning [32,255]³
/// (k = ⌈n^(1/3)⌉), enumerated greedily so each next codeword maximizes its
/// distance to all previous ones, and handed to the IDs in ascending order.
/// Deterministic given the same inputs.
pub fn allocate_codebooks(
    num_classes: u8,
    instance_ids: &[u32],
) -> Result<(SemanticCodebook, InstanceCodebook)> {
    if num_classes == 0 || num_classes as usize > MAX_CLASSES {
        return Err(Error::invalid(format!(
            "num_classes {num_classes} outside 1..={MAX_CLASSES}"
        )));
    }
    let mut ids: Vec<u32> = instance_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != instance_ids.len() {
        return Err(Error::invalid("duplicate instance IDs"));
    }
    if ids.first() == Some(&0) {
        return Err(Error::invalid("instance ID 0 is reserved for background"));
    }
    if ids.len() > MAX_INSTANCES {
        return Err(Error::invalid(format!("{} instance IDs exceed {MAX_INSTANCES}", ids.len())));
    }

    let mut levels = BTreeMap::new();
    for c in 1..=num_classes {
        let level = (255.0 * c as f64 / num_classes as f64).round() as u8;
        levels.insert(c, level);
    }

    let codes = lattice_codewords(ids.len());
    let min_distance = brute_force_min_distance(&codes);
    Ok((SemanticCodebook { levels }, InstanceCodebook { ids, codes, min_distance }))
}

/// Greedy max-min enumeration of the k³ lattice starting from the corner
/// farthest from background, with lexicographic tie-breaking.
fn lattice_codewords(n: usize) -> Vec<[u8; 3]> {
    if n == 0 {
        return Vec::new();
    }
    let k = (n as f64).powf(1.0 / 3.0).ceil() as usize;
    // Guard against powf landing epsilon under the true cube root.
    let k = if k * k * k < n { k + 1 } else { k };
    let axis: Vec<u8> = if k == 1 {
        vec![255]
    } else {
        (0..k).map(|i| 32 + ((i as f64) * 223.0 / (k - 1) as f64).round() as u8).collect()
    };
    let mut points = Vec::with_capacity(k * k * k);
    for &a in &axis {
        for &b in &axis {
            for &c in &axis {
                points.push([a, b, c]);
            }
        }
    }
    points.sort_unstable();

    let dist2 = |a: [u8; 3], b: [u8; 3]| -> i64 {
        let mut s = 0i64;
        for i in 0..3 {
            let d = a[i] as i64 - b[i] as i64;
            s += d * d;
        }
        s
    };
    let start = points.iter().position(|&p| p == [255, 255, 255]).expect("corner exists");
    let mut chosen = vec![points[start]];
    let mut best_d2: Vec<i64> = points.iter().map(|&p| dist2(p, points[start])).collect();
    while chosen.len() < n {
        let mut pick = usize::MAX;
        for (i, &d) in best_d2.iter().enumerate() {
            if d > 0 && (pick == usize::MAX || d > best_d2[pick]) {
                pick = i;
            }
        }
        let p = points[pick];
        chosen.push(p);
        for (i, d) in best_d2.iter_mut().enumerate() {
            *d = (*d).min(dist2(points[i], p));
        }
    }
    chosen
}

fn brute_force_min_distance(codes: &[[u8; 3]]) -> f64 {
    let mut min_d2 = i64::MAX;
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let mut s = 0i64;
            for k in 0..3 {
                let d = codes[i][k] as i64 - codes[j][k] as i64;
                s += d * d;
            }
            min_d2 = min_d2.min(s);
        }
    }
    if min_d2 == i64::MAX {
        // Fewer than two codewords: margin is the distance to background.
        return codes
            .first()
            .map(|c| {
                let s: i64 = c.iter().map(|&v| (v as i64) * (v as i64)).sum();
                (s as f64).sqrt() / 255.0
            })
            .unwrap_or(f64::INFINITY);
    }
    (min_d2 as f64).sqrt() / 255.0
}

/// Assemble the seven-channel vector for one pixel.
pub fn encode_pixel(
    rgb: [u8; 3],
    class: u8,
    global_id: u32,
    sem: &SemanticCodebook,
    inst: &InstanceCodebook,
) -> Result<PixelVector> {
    if (class == 0) != (global_id == 0) {
        return Err(Error::invalid(format!(
            "background is all-or-nothing: class {class} with id {global_id}"
        )));
    }
    let s1 = sem
        .level(class)
        .ok_or_else(|| Error::invalid(format!("class {class} not in codebook")))?;
    let code = inst
        .code(global_id)
        .ok_or_else(|| Error::invalid(format!("instance {global_id} not in codebook")))?;
    Ok(PixelVector {
        channels: [rgb[0], rgb[1], rgb[2], s1, code[0], code[1], code[2]],
    })
}

/// Nearest-neighbor decode of normalized S₁/I₁I₂I₃ channels.
pub fn decode_pixel(
    v: &[f64; 7],
    sem: &SemanticCodebook,
    inst: &InstanceCodebook,
) -> (u8, u32) {
    let class = sem.decode(v[3]);
    let id = inst.decode([v[4], v[5], v[6]]);
    (class, id)
}
