//! The multi-stream head: a spatial trunk whose first output becomes volume
//! density, with the remaining trunk features joined to the direction
//! encoding for the color/instance/semantic head. Density therefore never
//! sees direction inputs — that property is structural, not trained.
//!
//! Weights live in one flat slice laid out as
//! `[W1 64×32][b1][W2 16×64][b2][W3 64×31][b3][W4 7×64][b4]`, row-major,
//! appended directly after the hash tables in the parameter vector.

use super::sh::SH_DIM;

pub const IN_POS: usize = 32;
pub const HIDDEN: usize = 64;
pub const TRUNK_OUT: usize = 16;
pub const IN_DIR: usize = TRUNK_OUT - 1 + SH_DIM; // 31
pub const OUT_HEAD: usize = 7;

pub const W1: usize = 0;
pub const B1: usize = W1 + HIDDEN * IN_POS;
pub const W2: usize = B1 + HIDDEN;
pub const B2: usize = W2 + TRUNK_OUT * HIDDEN;
pub const W3: usize = B2 + TRUNK_OUT;
pub const B3: usize = W3 + HIDDEN * IN_DIR;
pub const W4: usize = B3 + HIDDEN;
pub const B4: usize = W4 + OUT_HEAD * HIDDEN;
pub const MLP_LEN: usize = B4 + OUT_HEAD;

/// Shifted exponential-linear map: smooth, positive, identity slope for
/// nonnegative inputs. Keeps density ≥ 0 without killing gradients.
pub fn elu1p(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward intermediates kept for the backward pass. Activations are stored
/// post-nonlinearity; ReLU masks are recovered from the sign.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub x: [f64; IN_POS],
    pub h1: [f64; HIDDEN],
    pub trunk: [f64; TRUNK_OUT],
    pub d: [f64; IN_DIR],
    pub h3: [f64; HIDDEN],
    pub out: [f64; OUT_HEAD],
    pub sigma: f64,
}

/// Density-only evaluation: trunk forward, first output through `elu1p`.
pub fn density(x: &[f64; IN_POS], p: &[f64]) -> f64 {
    let mut h1 = [0.0; HIDDEN];
    for i in 0..HIDDEN {
        let row = &p[W1 + i * IN_POS..W1 + (i + 1) * IN_POS];
        let mut acc = p[B1 + i];
        for (w, xv) in row.iter().zip(x) {
            acc += w * xv;
        }
        h1[i] = acc.max(0.0);
    }
    let row = &p[W2..W2 + HIDDEN];
    let mut t0 = p[B2];
    for (w, hv) in row.iter().zip(&h1) {
        t0 += w * hv;
    }
    elu1p(t0)
}

/// Full forward pass. `sh` is the caller's direction encoding (constant per
/// ray, so it is computed once and shared across samples).
pub fn forward(x: &[f64; IN_POS], sh: &[f64; SH_DIM], p: &[f64]) -> MlpTape {
    let mut h1 = [0.0; HIDDEN];
    for i in 0..HIDDEN {
        let row = &p[W1 + i * IN_POS..W1 + (i + 1) * IN_POS];
        let mut acc = p[B1 + i];
        for (w, xv) in row.iter().zip(x) {
            acc += w * xv;
        }
        h1[i] = acc.max(0.0);
    }
    let mut trunk = [0.0; TRUNK_OUT];
    for k in 0..TRUNK_OUT {
        let row = &p[W2 + k * HIDDEN..W2 + (k + 1) * HIDDEN];
        let mut acc = p[B2 + k];
        for (w, hv) in row.iter().zip(&h1) {
            acc += w * hv;
        }
        trunk[k] = acc;
    }
    let mut d = [0.0; IN_DIR];
    d[..TRUNK_OUT - 1].copy_from_slice(&trunk[1..]);
    d[TRUNK_OUT - 1..].copy_from_slice(sh);

    let mut h3 = [0.0; HIDDEN];
    for i in 0..HIDDEN {
        let row = &p[W3 + i * IN_DIR..W3 + (i + 1) * IN_DIR];
        let mut acc = p[B3 + i];
        for (w, dv) in row.iter().zip(&d) {
            acc += w * dv;
        }
        h3[i] = acc.max(0.0);
    }
    let mut out = [0.0; OUT_HEAD];
    for o in 0..OUT_HEAD {
        let row = &p[W4 + o * HIDDEN..W4 + (o + 1) * HIDDEN];
        let mut acc = p[B4 + o];
        for (w, hv) in row.iter().zip(&h3) {
            acc += w * hv;
        }
        out[o] = sigmoid(acc);
    }
    MlpTape { x: *x, h1, trunk, d, h3, out, sigma: elu1p(trunk[0]) }
}

/// Reverse pass. `d_out` is ∂loss/∂(squashed outputs), `d_sigma` is
/// ∂loss/∂σ. Accumulates into `grad` (same layout as `p`) and returns
/// ∂loss/∂x for the hash-table scatter.
pub fn backward(
    tape: &MlpTape,
    d_out: &[f64; OUT_HEAD],
    d_sigma: f64,
    p: &[f64],
    grad: &mut [f64],
) -> [f64; IN_POS] {
    // Head output layer (through the logistic squash).
    let mut dz4 = [0.0; OUT_HEAD];
    for o in 0..OUT_HEAD {
        dz4[o] = d_out[o] * tape.out[o] * (1.0 - tape.out[o]);
    }
    let mut dh3 = [0.0; HIDDEN];
    for o in 0..OUT_HEAD {
        let g = dz4[o];
        if g == 0.0 {
            continue;
        }
        let wrow = &p[W4 + o * HIDDEN..W4 + (o + 1) * HIDDEN];
        let grow = &mut grad[W4 + o * HIDDEN..W4 + (o + 1) * HIDDEN];
        for i in 0..HIDDEN {
            grow[i] += g * tape.h3[i];
            dh3[i] += g * wrow[i];
        }
        grad[B4 + o] += g;
    }
    // Head hidden layer.
    let mut dd = [0.0; IN_DIR];
    for i in 0..HIDDEN {
        if tape.h3[i] <= 0.0 {
            continue;
        }
        let g = dh3[i];
        let wrow = &p[W3 + i * IN_DIR..W3 + (i + 1) * IN_DIR];
        let grow = &mut grad[W3 + i * IN_DIR..W3 + (i + 1) * IN_DIR];
        for j in 0..IN_DIR {
            grow[j] += g * tape.d[j];
            dd[j] += g * wrow[j];
        }
        grad[B3 + i] += g;
    }
    // Trunk outputs: density branch plus the 15 features feeding the head.
    let mut dtrunk = [0.0; TRUNK_OUT];
    let t0 = tape.trunk[0];
    dtrunk[0] = d_sigma * if t0 >= 0.0 { 1.0 } else { tape.sigma };
    dtrunk[1..].copy_from_slice(&dd[..TRUNK_OUT - 1]);

    let mut dh1 = [0.0; HIDDEN];
    for k in 0..TRUNK_OUT {
        let g = dtrunk[k];
        if g == 0.0 {
            continue;
        }
        let wrow = &p[W2 + k * HIDDEN..W2 + (k + 1) * HIDDEN];
        let grow = &mut grad[W2 + k * HIDDEN..W2 + (k + 1) * HIDDEN];
        for i in 0..HIDDEN {
            grow[i] += g * tape.h1[i];
            dh1[i] += g * wrow[i];
        }
        grad[B2 + k] += g;
    }
    // Input layer.
    let mut dx = [0.0; IN_POS];
    for i in 0..HIDDEN {
        if tape.h1[i] <= 0.0 {
            continue;
        }
        let g = dh1[i];
        let wrow = &p[W1 + i * IN_POS..W1 + (i + 1) * IN_POS];
        let grow = &mut grad[W1 + i * IN_POS..W1 + (i + 1) * IN_POS];
        for j in 0..IN_POS {
            grow[j] += g * tape.x[j];
            dx[j] += g * wrow[j];
        }
        grad[B1 + i] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..MLP_LEN).map(|_| rng.gen_range(-0.3..0.3)).collect()
    }

    fn random_input(rng: &mut ChaCha8Rng) -> ([f64; IN_POS], [f64; SH_DIM]) {
        let mut x = [0.0; IN_POS];
        for v in &mut x {
            *v = rng.gen_range(-1.0..1.0);
        }
        let d = crate::field::sh::uniform_direction(rng.gen(), rng.gen());
        (x, crate::field::sh::sh_basis(&d))
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        assert_eq!(B1, 2048);
        assert_eq!(MLP_LEN, 2048 + 64 + 1024 + 16 + 1984 + 64 + 448 + 7);
    }

    #[test]
    fn zero_head_weights_squash_to_half() {
        let mut p = random_params(1);
        p[W4..B4 + OUT_HEAD].fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, sh) = random_input(&mut rng);
        let tape = forward(&x, &sh, &p);
        for v in tape.out {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn density_ignores_direction() {
        let p = random_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, _) = random_input(&mut rng);
        let mut sigmas = Vec::new();
        for _ in 0..10 {
            let (_, sh) = random_input(&mut rng);
            sigmas.push(forward(&x, &sh, &p).sigma);
        }
        assert!(sigmas.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(sigmas[0], density(&x, &p));
    }

    #[test]
    fn outputs_bounded_and_sigma_nonnegative() {
        let p = random_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let (x, sh) = random_input(&mut rng);
            let tape = forward(&x, &sh, &p);
            assert!(tape.sigma >= 0.0);
            assert!(tape.out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn forward_matches_matrix_reimplementation() {
        // Second route: the same arithmetic through nalgebra's dynamic
        // matrices, built straight from the layout constants.
        use nalgebra::{DMatrix, DVector};
        let p = random_params(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (x, sh) = random_input(&mut rng);
            let tape = forward(&x, &sh, &p);

            let w1 = DMatrix::from_row_slice(HIDDEN, IN_POS, &p[W1..B1]);
            let b1 = DVector::from_row_slice(&p[B1..W2]);
            let w2 = DMatrix::from_row_slice(TRUNK_OUT, HIDDEN, &p[W2..B2]);
            let b2 = DVector::from_row_slice(&p[B2..W3]);
            let w3 = DMatrix::from_row_slice(HIDDEN, IN_DIR, &p[W3..B3]);
            let b3 = DVector::from_row_slice(&p[B3..W4]);
            let w4 = DMatrix::from_row_slice(OUT_HEAD, HIDDEN, &p[W4..B4]);
            let b4 = DVector::from_row_slice(&p[B4..MLP_LEN]);

            let h1 = (w1 * DVector::from_row_slice(&x) + b1).map(|v| v.max(0.0));
            let trunk = w2 * h1 + b2;
            let mut dvec = trunk.rows(1, TRUNK_OUT - 1).iter().cloned().collect::<Vec<_>>();
            dvec.extend_from_slice(&sh);
            let h3 = (w3 * DVector::from_row_slice(&dvec) + b3).map(|v| v.max(0.0));
            let out = (w4 * h3 + b4).map(|v| 1.0 / (1.0 + (-v).exp()));

            assert!((tape.sigma - elu1p(trunk[0])).abs() < 1e-12);
            for o in 0..OUT_HEAD {
                assert!((tape.out[o] - out[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = random_params(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (x, sh) = random_input(&mut rng);
        let mut d_out = [0.0; OUT_HEAD];
        for v in &mut d_out {
            *v = rng.gen_range(-1.0..1.0);
        }
        let d_sigma: f64 = rng.gen_range(-1.0..1.0);
        let loss = |p: &[f64]| -> f64 {
            let t = forward(&x, &sh, p);
            t.out.iter().zip(&d_out).map(|(o, u)| o * u).sum::<f64>() + d_sigma * t.sigma
        };
        let tape = forward(&x, &sh, &p);
        let mut grad = vec![0.0; MLP_LEN];
        backward(&tape, &d_out, d_sigma, &p, &mut grad);

        let h = 1e-4;
        let probes = [W1 + 5, B1 + 3, W2 + 70, B2 + 1, W3 + 200, B3 + 9, W4 + 33, B4 + 6];
        for idx in probes {
            let mut pp = p.clone();
            pp[idx] += h;
            let up = loss(&pp);
            pp[idx] = p[idx] - h;
            let dn = loss(&pp);
            let fd = (up - dn) / (2.0 * h);
            let denom = fd.abs().max(grad[idx].abs()).max(1e-8);
            assert!(
                (fd - grad[idx]).abs() / denom < 1e-3,
                "param {idx}: analytic {} vs fd {fd}",
                grad[idx]
            );
        }
    }

    #[test]
    fn gradient_accumulation_is_additive() {
        let p = random_params(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (xa, sha) = random_input(&mut rng);
        let (xb, shb) = random_input(&mut rng);
        let u = [0.3, -0.2, 0.1, 0.5, -0.4, 0.25, -0.15];

        let mut g_once = vec![0.0; MLP_LEN];
        backward(&forward(&xa, &sha, &p), &u, 0.7, &p, &mut g_once);
        backward(&forward(&xb, &shb, &p), &u, -0.2, &p, &mut g_once);

        let mut g_a = vec![0.0; MLP_LEN];
        backward(&forward(&xa, &sha, &p), &u, 0.7, &p, &mut g_a);
        let mut g_b = vec![0.0; MLP_LEN];
        backward(&forward(&xb, &shb, &p), &u, -0.2, &p, &mut g_b);

        for i in 0..MLP_LEN {
            assert!((g_once[i] - (g_a[i] + g_b[i])).abs() < 1e-12);
        }
    }
}
