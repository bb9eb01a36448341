//! Real spherical-harmonics basis up to degree 3.
//!
//! Colors are `clamp_low_0(sum_k c_k * Y_k(dir) + 0.5)` per channel, so an
//! all-zero coefficient vector renders mid-gray.

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: u32 = 3;

/// Number of coefficients per channel for `degree`.
pub const fn sh_len(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

pub fn check_degree(degree: u32) -> Result<()> {
    if degree > MAX_SH_DEGREE {
        Err(Error::UnsupportedShDegree(degree))
    } else {
        Ok(())
    }
}

/// Degree-0 coefficient that reproduces `color` under the +0.5 offset.
pub fn rgb_to_dc(color: f64) -> f64 {
    (color - 0.5) / SH_C0
}

/// Basis values `Y_k(dir)`; entries past `sh_len(degree)` are zero.
pub fn sh_basis(degree: u32, dir: [f64; 3]) -> [f64; 16] {
    let [x, y, z] = dir;
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree == 0 {
        return b;
    }
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Partial derivatives `dY_k / d(x, y, z)` of the polynomial basis, treating
/// the direction components as independent.
pub fn sh_basis_grad(degree: u32, dir: [f64; 3]) -> [[f64; 3]; 16] {
    let [x, y, z] = dir;
    let mut g = [[0.0; 3]; 16];
    if degree == 0 {
        return g;
    }
    g[1] = [0.0, -SH_C1, 0.0];
    g[2] = [0.0, 0.0, SH_C1];
    g[3] = [-SH_C1, 0.0, 0.0];
    if degree == 1 {
        return g;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
    g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
    g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
    g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
    g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    if degree == 2 {
        return g;
    }
    g[9] = [6.0 * SH_C3[0] * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
    g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
    g[11] = [
        -2.0 * SH_C3[2] * x * y,
        SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
        8.0 * SH_C3[2] * y * z,
    ];
    g[12] = [
        -6.0 * SH_C3[3] * x * z,
        -6.0 * SH_C3[3] * y * z,
        SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    g[13] = [
        SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
        -2.0 * SH_C3[4] * x * y,
        8.0 * SH_C3[4] * x * z,
    ];
    g[14] = [
        2.0 * SH_C3[5] * x * z,
        -2.0 * SH_C3[5] * y * z,
        SH_C3[5] * (xx - yy),
    ];
    g[15] = [SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, 0.0];
    g
}

/// Evaluates view-dependent color. `coeffs` is channel-major: `3 * sh_len`.
pub fn eval_sh(coeffs: &[f64], degree: u32, dir: [f64; 3]) -> Result<[f64; 3]> {
    check_degree(degree)?;
    let k = sh_len(degree);
    if coeffs.len() != 3 * k {
        return Err(Error::ShapeMismatch(format!(
            "{} SH coefficients for degree {degree} (expected {})",
            coeffs.len(),
            3 * k
        )));
    }
    let basis = sh_basis(degree, dir);
    Ok(eval_with_basis(coeffs, &basis[..k]))
}

/// Unclamped `sum_k c_k * Y_k + 0.5` per channel.
pub(crate) fn eval_raw(coeffs: &[f64], basis: &[f64]) -> [f64; 3] {
    let k = basis.len();
    let mut rgb = [0.5; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let ch = &coeffs[c * k..(c + 1) * k];
        *out += ch.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>();
    }
    rgb
}

pub(crate) fn eval_with_basis(coeffs: &[f64], basis: &[f64]) -> [f64; 3] {
    eval_raw(coeffs, basis).map(|v| v.max(0.0))
}
