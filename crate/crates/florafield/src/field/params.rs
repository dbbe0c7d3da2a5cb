//! Flat trainable state: hash tables first, MLP weights after, with
//! matching gradient and Adam moment buffers. Two learning rates — table
//! entries tolerate larger steps because each sample touches only a few.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::hashgrid::HashGrid;
use super::mlp;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub params: Vec<f64>,
    pub grads: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Boundary between hash-table entries and MLP weights.
    pub hash_len: usize,
}

impl ParamStore {
    /// Tables uniform in ±1e-4 (near-zero so early density is governed by
    /// the MLP biases); weight matrices uniform ±√(6/fan_in); biases zero.
    pub fn init(grid: &HashGrid, rng: &mut ChaCha8Rng) -> Self {
        let hash_len = grid.param_len();
        let total = hash_len + mlp::MLP_LEN;
        let mut params = vec![0.0; total];
        for p in &mut params[..hash_len] {
            *p = rng.gen_range(-1e-4..1e-4);
        }
        let base = hash_len;
        for (range, fan_in) in [
            (mlp::W1..mlp::B1, mlp::IN_POS),
            (mlp::W2..mlp::B2, mlp::HIDDEN),
            (mlp::W3..mlp::B3, mlp::IN_DIR),
            (mlp::W4..mlp::B4, mlp::HIDDEN),
        ] {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[base + range.start..base + range.end] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        ParamStore {
            grads: vec![0.0; total],
            m: vec![0.0; total],
            v: vec![0.0; total],
            step: 0,
            hash_len,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn hash_tables(&self) -> &[f64] {
        &self.params[..self.hash_len]
    }

    pub fn mlp_params(&self) -> &[f64] {
        &self.params[self.hash_len..]
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    /// Everything finite — enforced at checkpoint load, not per call.
    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.grads.len()
            || self.params.len() != self.m.len()
            || self.params.len() != self.v.len()
        {
            return Err(Error::invalid("parameter/gradient/moment length mismatch"));
        }
        if self.hash_len > self.params.len() {
            return Err(Error::invalid("hash boundary beyond parameter vector"));
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::invalid("non-finite parameters"));
        }
        Ok(())
    }

    /// Bias-corrected Adam over both groups, gradients zeroed afterward.
    pub fn adam_step(&mut self, lr_hash: f64, lr_mlp: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..self.params.len() {
            let g = self.grads[i];
            let m = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            let v = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            let lr = if i < self.hash_len { lr_hash } else { lr_mlp };
            self.params[i] -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
        }
        self.grads.fill(0.0);
    }
}
