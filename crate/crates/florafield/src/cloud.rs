//! Labeled point clouds shared by ground-truth sampling, field extraction,
//! evaluation, and the clustering baseline.

use nalgebra::Vector3;

/// Structure-of-arrays point cloud: position, display color, semantic class
/// (0 = unlabeled/background), and instance ID (0 = none).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPointCloud {
    pub pos: Vec<Vector3<f64>>,
    pub rgb: Vec<[u8; 3]>,
    pub semantic: Vec<u8>,
    pub instance: Vec<u32>,
}

impl LabeledPointCloud {
    pub fn with_capacity(n: usize) -> Self {
        LabeledPointCloud {
            pos: Vec::with_capacity(n),
            rgb: Vec::with_capacity(n),
            semantic: Vec::with_capacity(n),
            instance: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, pos: Vector3<f64>, rgb: [u8; 3], semantic: u8, instance: u32) {
        self.pos.push(pos);
        self.rgb.push(rgb);
        self.semantic.push(semantic);
        self.instance.push(instance);
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// Distinct instance IDs present, ascending, zeros excluded.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.instance.iter().cloned().filter(|&i| i != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Distinct semantic classes present, ascending, zeros excluded.
    pub fn semantic_classes(&self) -> Vec<u8> {
        let mut cs: Vec<u8> = self.semantic.iter().cloned().filter(|&c| c != 0).collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    }
}
