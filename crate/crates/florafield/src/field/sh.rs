//! Real spherical harmonics through degree 3 for direction encoding.
//!
//! Components are ordered by degree then order, index = j² + j + m for
//! j = 0..=3, m = −j..=j. The Condon–Shortley phase lives in the Legendre
//! part, so odd orders carry the classic leading minus (Y₁¹ = −0.488603·x).

use nalgebra::Vector3;

use crate::{Error, Result};

/// Σ_{j=0..3} (2j+1).
pub const SH_DIM: usize = 16;

// Closed-form normalizations: √(1/4π), √(3/4π), √(15/4π), √(5/16π),
// √(15/16π), √(35/32π), √(105/4π), √(21/32π), √(7/16π), √(105/16π).
const K00: f64 = 0.28209479177387814;
const K1: f64 = 0.4886025119029199;
const K2M2: f64 = 1.0925484305920792;
const K20: f64 = 0.31539156525252005;
const K22: f64 = 0.5462742152960396;
const K3M3: f64 = 0.5900435899266435;
const K3M2: f64 = 2.890611442640554;
const K3M1: f64 = 0.4570457994644658;
const K30: f64 = 0.3731763325901154;
const K32: f64 = 1.445305721320277;

/// Basis values at a unit direction. Callers on the hot path normalize once
/// and skip the validation in [`encode_direction`].
pub fn sh_basis(dir: &Vector3<f64>) -> [f64; SH_DIM] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);
    [
        K00,
        -K1 * y,
        K1 * z,
        -K1 * x,
        K2M2 * x * y,
        -K2M2 * y * z,
        K20 * (3.0 * z2 - 1.0),
        -K2M2 * x * z,
        K22 * (x2 - y2),
        -K3M3 * y * (3.0 * x2 - y2),
        K3M2 * x * y * z,
        -K3M1 * y * (5.0 * z2 - 1.0),
        K30 * z * (5.0 * z2 - 3.0),
        -K3M1 * x * (5.0 * z2 - 1.0),
        K32 * z * (x2 - y2),
        -K3M3 * x * (x2 - 3.0 * y2),
    ]
}

/// Validated entry point: rejects directions off the unit sphere.
pub fn encode_direction(dir: &Vector3<f64>) -> Result<[f64; SH_DIM]> {
    let norm = dir.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("direction norm {norm}, expected a unit vector")));
    }
    Ok(sh_basis(dir))
}

/// Uniform direction on the sphere from two uniform variates.
pub fn uniform_direction(u: f64, v: f64) -> Vector3<f64> {
    let z = 2.0 * u - 1.0;
    let s = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * v;
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}
