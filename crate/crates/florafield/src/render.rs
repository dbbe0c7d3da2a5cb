//! Ray sampling, transmittance compositing, the six-term loss, and the
//! training loop.
//!
//! Sample locations are drawn first and then frozen: the loss is a plain
//! deterministic function of the parameters given those t-values, which is
//! what the backward pass differentiates (fine-sample placement is treated
//! as a constant, the usual detachment). Gradient accumulation runs over a
//! fixed number of ray chunks reduced in chunk order, so results are
//! bit-identical for any worker count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{pixel_to_ray, CameraSpec, Ray};
use crate::codec::{encode_pixel, InstanceCodebook, SemanticCodebook};
use crate::field::{sh_basis, Field, FieldSample, ParamStore, SampleTape, SH_DIM};
use crate::rng::{substream, Stage};
use crate::scene::RenderedView;
use crate::{Error, Result};

/// Uniform floor added to coarse weights before the fine inverse-CDF draw,
/// so no stratum ever has zero probability.
pub const FINE_PDF_FLOOR: f64 = 0.01;

/// Number of gradient-accumulation chunks per iteration. Fixed regardless
/// of worker count; chunks are reduced serially in index order.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rays_per_iter: usize,
    pub iterations: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub lr_hash: f64,
    pub lr_mlp: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rays_per_iter: 2048,
            iterations: 2000,
            n_coarse: 64,
            n_fine: 96,
            lr_hash: 1e-2,
            lr_mlp: 1e-3,
            seed: 0,
        }
    }
}

/// The six squared-residual terms, kept separate for the loss trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub color_coarse: f64,
    pub color_fine: f64,
    pub instance_coarse: f64,
    pub instance_fine: f64,
    pub semantic_coarse: f64,
    pub semantic_fine: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.color_coarse
            + self.color_fine
            + self.instance_coarse
            + self.instance_fine
            + self.semantic_coarse
            + self.semantic_fine
    }

    fn add(&mut self, other: &LossBreakdown) {
        self.color_coarse += other.color_coarse;
        self.color_fine += other.color_fine;
        self.instance_coarse += other.instance_coarse;
        self.instance_fine += other.instance_fine;
        self.semantic_coarse += other.semantic_coarse;
        self.semantic_fine += other.semantic_fine;
    }

    fn scale(&mut self, s: f64) {
        self.color_coarse *= s;
        self.color_fine *= s;
        self.instance_coarse *= s;
        self.instance_fine *= s;
        self.semantic_coarse *= s;
        self.semantic_fine *= s;
    }
}

/// One loss-trace row: per-term batch means and their sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub terms: LossBreakdown,
    pub total: f64,
}

/// A ray with its supervision target and frozen sample locations.
#[derive(Debug, Clone)]
pub struct SampledRay {
    pub ray: Ray,
    pub target: [f64; 7],
    pub coarse_t: Vec<f64>,
    pub fine_t: Vec<f64>,
}

/// One composited pass: accumulated channels, per-sample weights, and the
/// transmittance after each sample (so `trans_after.last()` is T_end).
#[derive(Debug, Clone)]
pub struct CompositedPass {
    pub rendered: [f64; 7],
    pub weights: Vec<f64>,
    pub trans_after: Vec<f64>,
}

impl CompositedPass {
    pub fn t_end(&self) -> f64 {
        self.trans_after.last().copied().unwrap_or(1.0)
    }
}

/// One uniform draw per equal-width stratum of [t0, t1], ascending.
pub fn stratified_ts(t0: f64, t1: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let width = (t1 - t0) / n as f64;
    (0..n).map(|i| t0 + (i as f64 + rng.gen::<f64>()) * width).collect()
}

/// Exact inverse-CDF draws from the piecewise-constant density over the
/// coarse strata, proportional to weight + floor. Sorted ascending.
pub fn fine_ts(
    coarse_weights: &[f64],
    t0: f64,
    t1: f64,
    n_fine: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = coarse_weights.len();
    let mass: Vec<f64> = coarse_weights.iter().map(|w| w + FINE_PDF_FLOOR).collect();
    let total: f64 = mass.iter().sum();
    let width = (t1 - t0) / n as f64;
    let mut ts: Vec<f64> = (0..n_fine)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            for (k, &m) in mass.iter().enumerate() {
                if u < acc + m || k == n - 1 {
                    let frac = ((u - acc) / m).clamp(0.0, 1.0);
                    return t0 + (k as f64 + frac) * width;
                }
                acc += m;
            }
            unreachable!("CDF walk always lands in a stratum");
        })
        .collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts
}

/// Interval lengths for sorted samples: δ_i = t_{i+1} − t_i, and the last
/// sample closes against t_far so the weights can sum to 1.
pub fn deltas(ts: &[f64], t_far: f64) -> Vec<f64> {
    (0..ts.len())
        .map(|i| if i + 1 < ts.len() { ts[i + 1] - ts[i] } else { t_far - ts[i] })
        .collect()
}

/// Transmittance quadrature: w_i = T_i·(1 − exp(−σ_i δ_i)) with
/// T_i = exp(−Σ_{j<i} σ_j δ_j), accumulated over the 7 channels.
pub fn composite(sigma: &[f64], channels: &[[f64; 7]], dts: &[f64]) -> CompositedPass {
    let n = sigma.len();
    let mut pass = CompositedPass {
        rendered: [0.0; 7],
        weights: Vec::with_capacity(n),
        trans_after: Vec::with_capacity(n),
    };
    let mut trans = 1.0;
    for i in 0..n {
        let alpha = 1.0 - (-sigma[i] * dts[i]).exp();
        let w = trans * alpha;
        trans *= 1.0 - alpha;
        pass.weights.push(w);
        pass.trans_after.push(trans);
        for (r, c) in pass.rendered.iter_mut().zip(&channels[i]) {
            *r += w * c;
        }
    }
    pass
}

/// Reverse of [`composite`]: given ∂loss/∂rendered, add ∂loss/∂σ_i and
/// ∂loss/∂channels_i into the per-sample accumulators.
fn composite_backward(
    sigma: &[f64],
    channels: &[[f64; 7]],
    dts: &[f64],
    pass: &CompositedPass,
    upstream: &[f64; 7],
    d_sigma: &mut [f64],
    d_channels: &mut [[f64; 7]],
) {
    let n = sigma.len();
    // G_i = ⟨upstream, channels_i⟩; suffix S_i = Σ_{j>i} w_j·G_j.
    let g: Vec<f64> = (0..n)
        .map(|i| upstream.iter().zip(&channels[i]).map(|(u, c)| u * c).sum())
        .collect();
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        d_sigma[i] += dts[i] * (g[i] * pass.trans_after[i] - suffix);
        suffix += pass.weights[i] * g[i];
        for (dc, u) in d_channels[i].iter_mut().zip(upstream) {
            *dc += u * pass.weights[i];
        }
    }
}

fn loss_terms(coarse: &[f64; 7], fine: &[f64; 7], target: &[f64; 7]) -> LossBreakdown {
    let sq = |r: &[f64; 7], lo: usize, hi: usize| -> f64 {
        (lo..hi).map(|c| (r[c] - target[c]) * (r[c] - target[c])).sum()
    };
    LossBreakdown {
        color_coarse: sq(coarse, 0, 3),
        color_fine: sq(fine, 0, 3),
        semantic_coarse: sq(coarse, 3, 4),
        semantic_fine: sq(fine, 3, 4),
        instance_coarse: sq(coarse, 4, 7),
        instance_fine: sq(fine, 4, 7),
    }
}

struct Node {
    sample: FieldSample,
    tape: SampleTape,
    d_channels: [f64; 7],
    d_sigma: f64,
}

/// Draw and freeze sample locations for one ray. Coarse weights for the
/// fine draw come from a density-only pass at the same parameters.
pub fn freeze_ray(
    field: &Field,
    store: &ParamStore,
    ray: Ray,
    target: [f64; 7],
    n_coarse: usize,
    n_fine: usize,
    rng: &mut ChaCha8Rng,
) -> SampledRay {
    let coarse_t = stratified_ts(ray.t_near, ray.t_far, n_coarse, rng);
    let sigma: Vec<f64> = coarse_t.iter().map(|&t| field.density(&ray.at(t), store)).collect();
    let channels = vec![[0.0; 7]; sigma.len()];
    let dts = deltas(&coarse_t, ray.t_far);
    let pass = composite(&sigma, &channels, &dts);
    let fine_t = fine_ts(&pass.weights, ray.t_near, ray.t_far, n_fine, rng);
    SampledRay { ray, target, coarse_t, fine_t }
}

/// Evaluate both passes of one frozen ray; optionally backpropagate with
/// the given upstream scale (∂mean-loss/∂term = scale per ray).
pub fn run_frozen(
    field: &Field,
    store: &ParamStore,
    sr: &SampledRay,
    mut grad: Option<(&mut [f64], f64)>,
) -> LossBreakdown {
    let dir = sr.ray.direction.normalize();
    let sh: [f64; SH_DIM] = sh_basis(&dir);

    let eval = |ts: &[f64]| -> Vec<Node> {
        ts.iter()
            .map(|&t| {
                let (sample, tape) = field.forward_tape(&sr.ray.at(t), &sh, store);
                Node { sample, tape, d_channels: [0.0; 7], d_sigma: 0.0 }
            })
            .collect()
    };
    let mut coarse = eval(&sr.coarse_t);
    let mut fine = eval(&sr.fine_t);

    // Union of both passes' samples in t order, as (is_fine, index) refs.
    let mut union_ref: Vec<(bool, usize)> = Vec::with_capacity(coarse.len() + fine.len());
    let (mut ci, mut fi) = (0, 0);
    while ci < coarse.len() || fi < fine.len() {
        let take_fine = ci >= coarse.len()
            || (fi < fine.len() && sr.fine_t[fi] < sr.coarse_t[ci]);
        if take_fine {
            union_ref.push((true, fi));
            fi += 1;
        } else {
            union_ref.push((false, ci));
            ci += 1;
        }
    }
    let union_t: Vec<f64> =
        union_ref.iter().map(|&(f, i)| if f { sr.fine_t[i] } else { sr.coarse_t[i] }).collect();

    let node = |f: bool, i: usize, coarse: &[Node], fine: &[Node]| -> FieldSample {
        if f {
            fine[i].sample
        } else {
            coarse[i].sample
        }
    };

    let coarse_sigma: Vec<f64> = coarse.iter().map(|n| n.sample.sigma).collect();
    let coarse_ch: Vec<[f64; 7]> = coarse.iter().map(|n| n.sample.channels).collect();
    let coarse_dts = deltas(&sr.coarse_t, sr.ray.t_far);
    let coarse_pass = composite(&coarse_sigma, &coarse_ch, &coarse_dts);

    let union_sigma: Vec<f64> =
        union_ref.iter().map(|&(f, i)| node(f, i, &coarse, &fine).sigma).collect();
    let union_ch: Vec<[f64; 7]> =
        union_ref.iter().map(|&(f, i)| node(f, i, &coarse, &fine).channels).collect();
    let union_dts = deltas(&union_t, sr.ray.t_far);
    let fine_pass = composite(&union_sigma, &union_ch, &union_dts);

    let losses = loss_terms(&coarse_pass.rendered, &fine_pass.rendered, &sr.target);

    if let Some((grad_buf, scale)) = grad.take() {
        let upstream = |rendered: &[f64; 7]| -> [f64; 7] {
            let mut u = [0.0; 7];
            for c in 0..7 {
                u[c] = 2.0 * (rendered[c] - sr.target[c]) * scale;
            }
            u
        };
        let u_coarse = upstream(&coarse_pass.rendered);
        let u_fine = upstream(&fine_pass.rendered);

        let mut dc_sigma = vec![0.0; coarse.len()];
        let mut dc_ch = vec![[0.0; 7]; coarse.len()];
        composite_backward(
            &coarse_sigma,
            &coarse_ch,
            &coarse_dts,
            &coarse_pass,
            &u_coarse,
            &mut dc_sigma,
            &mut dc_ch,
        );
        for (i, n) in coarse.iter_mut().enumerate() {
            n.d_sigma += dc_sigma[i];
            n.d_channels = dc_ch[i];
        }

        let mut du_sigma = vec![0.0; union_ref.len()];
        let mut du_ch = vec![[0.0; 7]; union_ref.len()];
        composite_backward(
            &union_sigma,
            &union_ch,
            &union_dts,
            &fine_pass,
            &u_fine,
            &mut du_sigma,
            &mut du_ch,
        );
        for (u, &(f, i)) in union_ref.iter().enumerate() {
            let n = if f { &mut fine[i] } else { &mut coarse[i] };
            n.d_sigma += du_sigma[u];
            for c in 0..7 {
                n.d_channels[c] += du_ch[u][c];
            }
        }

        for n in coarse.iter().chain(fine.iter()) {
            field.backward(&n.tape, &n.d_channels, n.d_sigma, store, grad_buf);
        }
    }
    losses
}

/// Supervision target for one pixel of a relabeled view.
pub fn pixel_target(
    view: &RenderedView,
    idx: usize,
    sem_cb: &SemanticCodebook,
    inst_cb: &InstanceCodebook,
) -> Result<[f64; 7]> {
    let rgb = [view.rgb[idx * 3], view.rgb[idx * 3 + 1], view.rgb[idx * 3 + 2]];
    let pv = encode_pixel(rgb, view.semantic[idx], view.instance[idx], sem_cb, inst_cb)?;
    Ok(pv.to_unit())
}

fn chunk_ranges(total: usize, chunks: usize) -> Vec<(usize, usize)> {
    let base = total / chunks;
    let extra = total % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Optimize the field on relabeled views. Bit-reproducible for a fixed
/// seed at any worker count: RNG substreams are indexed by (iteration,
/// ray slot), and gradients reduce over fixed chunks in order.
pub fn train(
    field: &Field,
    store: &mut ParamStore,
    views: &[RenderedView],
    cameras: &[CameraSpec],
    sem_cb: &SemanticCodebook,
    inst_cb: &InstanceCodebook,
    cfg: &TrainConfig,
) -> Result<Vec<LossRow>> {
    if views.is_empty() || views.len() != cameras.len() {
        return Err(Error::invalid(format!(
            "{} views vs {} cameras",
            views.len(),
            cameras.len()
        )));
    }
    if cfg.n_coarse < 2 {
        return Err(Error::invalid("need at least 2 coarse samples per ray"));
    }
    for (vi, v) in views.iter().enumerate() {
        for &id in &v.present_instances() {
            if inst_cb.code(id).is_none() {
                return Err(Error::invalid(format!(
                    "view {vi} carries instance {id} missing from the codebook"
                )));
            }
        }
    }

    let rays = cfg.rays_per_iter;
    let stride = rays as u64 + 1;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut buffers: Vec<Vec<f64>> = (0..GRAD_CHUNKS).map(|_| vec![0.0; store.len()]).collect();

    for iter in 0..cfg.iterations {
        let mut pick = substream(cfg.seed, Stage::Train, iter as u64 * stride);
        let picks: Vec<(usize, usize)> = (0..rays)
            .map(|_| {
                let v = pick.gen_range(0..views.len());
                let p = pick.gen_range(0..views[v].n_pixels());
                (v, p)
            })
            .collect();

        let ranges = chunk_ranges(rays, GRAD_CHUNKS);
        let scale = 1.0 / rays as f64;
        let results: Vec<(LossBreakdown, usize)> = buffers
            .par_iter_mut()
            .enumerate()
            .map(|(c, buf)| {
                buf.fill(0.0);
                let (lo, hi) = ranges[c];
                let mut sums = LossBreakdown::default();
                let mut skipped = 0usize;
                for slot in lo..hi {
                    let (v, p) = picks[slot];
                    let view = &views[v];
                    let cam = &cameras[v];
                    let (px, py) = (p as u32 % view.width, p as u32 / view.width);
                    let Ok(base) = pixel_to_ray(
                        px as f64 + 0.5,
                        py as f64 + 0.5,
                        &cam.intr,
                        &cam.pose,
                        1e-4,
                        f64::MAX,
                    ) else {
                        skipped += 1;
                        continue;
                    };
                    let Some((t0, t1)) = field.bounds.clip_ray(
                        &base.origin,
                        &base.direction,
                        base.t_near,
                        base.t_far,
                    ) else {
                        skipped += 1;
                        continue;
                    };
                    let ray = Ray { t_near: t0, t_far: t1, ..base };
                    let target = pixel_target(view, p, sem_cb, inst_cb)
                        .expect("codebook coverage checked before training");
                    let mut jitter =
                        substream(cfg.seed, Stage::Train, iter as u64 * stride + 1 + slot as u64);
                    let frozen =
                        freeze_ray(field, store, ray, target, cfg.n_coarse, cfg.n_fine, &mut jitter);
                    let losses = run_frozen(field, store, &frozen, Some((buf, scale)));
                    sums.add(&losses);
                }
                (sums, skipped)
            })
            .collect();

        let mut sums = LossBreakdown::default();
        for (s, _) in &results {
            sums.add(s);
        }
        for buf in &buffers {
            for (g, b) in store.grads.iter_mut().zip(buf) {
                *g += b;
            }
        }
        sums.scale(scale);
        let total = sums.total();
        if !total.is_finite() {
            let pnorm = store.params.iter().map(|p| p * p).sum::<f64>().sqrt();
            return Err(Error::Diverged {
                iter,
                detail: format!("loss {total}, parameter norm {pnorm:.3e}"),
            });
        }
        store.adam_step(cfg.lr_hash, cfg.lr_mlp);
        trace.push(LossRow { iteration: iter, terms: sums, total });
    }
    Ok(trace)
}
