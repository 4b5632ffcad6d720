//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Coefficients are stored per primitive as `[basis][channel]`, i.e. the
//! DC term occupies the first three values. Colors follow the usual splatting
//! convention: `rgb = max(Σ Y_k(dir)·c_k + 0.5, 0)`.

use crate::math::Vec3;

pub const MAX_DEGREE: usize = 3;
pub const MAX_COEFFS: usize = (MAX_DEGREE + 1) * (MAX_DEGREE + 1);

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

/// Number of basis functions for a given degree: `(degree + 1)²`.
#[inline]
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Color of a DC-only coefficient, inverse of [`dc_from_color`].
#[inline]
pub fn color_from_dc(dc: f64) -> f64 {
    SH_C0 * dc + 0.5
}

#[inline]
pub fn dc_from_color(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

/// Basis values at a unit direction. Entries past `coeff_count(degree)` are zero.
pub fn basis(degree: usize, dir: Vec3) -> [f64; MAX_COEFFS] {
    let mut b = [0.0; MAX_COEFFS];
    let [x, y, z] = dir;
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Gradient of every basis polynomial with respect to the (unnormalized) direction components.
pub fn basis_gradient(degree: usize, dir: Vec3) -> [Vec3; MAX_COEFFS] {
    let mut g = [[0.0; 3]; MAX_COEFFS];
    let [x, y, z] = dir;
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
        if degree >= 3 {
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
            g[14] = [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)];
            g[15] = [SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, 0.0];
        }
    }
    g
}

/// Unclamped color `Σ Y_k c_k + 0.5` from precomputed basis values.
#[inline]
pub fn raw_color(coeffs: &[f64], basis: &[f64; MAX_COEFFS], degree: usize) -> Vec3 {
    let mut rgb = [0.5; 3];
    for (k, &bk) in basis.iter().enumerate().take(coeff_count(degree)) {
        let c = &coeffs[3 * k..3 * k + 3];
        rgb[0] += bk * c[0];
        rgb[1] += bk * c[1];
        rgb[2] += bk * c[2];
    }
    rgb
}

#[inline]
pub fn clamp_color(raw: Vec3) -> Vec3 {
    [raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)]
}

/// View-dependent color for a unit direction.
///
/// `coeffs` holds at least `coeff_count(degree) * 3` values.
pub fn eval_sh(coeffs: &[f64], dir: Vec3, degree: usize) -> Vec3 {
    debug_assert!(degree <= MAX_DEGREE);
    debug_assert!(coeffs.len() >= coeff_count(degree) * 3);
    clamp_color(raw_color(coeffs, &basis(degree, dir), degree))
}

/// Adjoint of the clamped color evaluation.
///
/// Accumulates coefficient gradients into `d_coeffs` and returns the
/// gradient with respect to the unit direction. Channels clamped at zero
/// pass no gradient.
pub fn color_backward(
    coeffs: &[f64],
    basis: &[f64; MAX_COEFFS],
    basis_grad: &[Vec3; MAX_COEFFS],
    degree: usize,
    raw: Vec3,
    d_rgb: Vec3,
    d_coeffs: &mut [f64],
) -> Vec3 {
    let mut g = d_rgb;
    for c in 0..3 {
        if raw[c] < 0.0 {
            g[c] = 0.0;
        }
    }
    if g == [0.0; 3] {
        return [0.0; 3];
    }
    let mut d_dir = [0.0; 3];
    for k in 0..coeff_count(degree) {
        let c = &coeffs[3 * k..3 * k + 3];
        d_coeffs[3 * k] += basis[k] * g[0];
        d_coeffs[3 * k + 1] += basis[k] * g[1];
        d_coeffs[3 * k + 2] += basis[k] * g[2];
        let s = c[0] * g[0] + c[1] * g[1] + c[2] * g[2];
        d_dir[0] += s * basis_grad[k][0];
        d_dir[1] += s * basis_grad[k][1];
        d_dir[2] += s * basis_grad[k][2];
    }
    d_dir
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_only_is_shifted_constant() {
        let mut coeffs = [0.0; 48];
        coeffs[0] = 0.7;
        coeffs[1] = -0.2;
        coeffs[2] = 0.0;
        let rgb = eval_sh(&coeffs, [0.0, 0.0, 1.0], 0);
        assert!((rgb[0] - (0.282_094_79 * 0.7 + 0.5)).abs() < 1e-8);
        assert!((rgb[1] - (0.282_094_79 * -0.2 + 0.5)).abs() < 1e-8);
        assert_eq!(rgb[2], 0.5);
    }

    #[test]
    fn zero_dc_gives_mid_gray() {
        let coeffs = [0.0; 48];
        assert_eq!(eval_sh(&coeffs, [1.0, 0.0, 0.0], 3), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn negative_colors_clamp_to_zero() {
        let mut coeffs = [0.0; 48];
        coeffs[0] = -10.0;
        assert_eq!(eval_sh(&coeffs, [0.0, 1.0, 0.0], 0)[0], 0.0);
    }

    #[test]
    fn dc_roundtrip() {
        for c in [0.0, 0.25, 0.5, 1.0] {
            assert!((color_from_dc(dc_from_color(c)) - c).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let dir = [0.3, -0.45, 0.8];
        let g = basis_gradient(3, dir);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = dir;
            p[axis] += h;
            let mut m = dir;
            m[axis] -= h;
            let bp = basis(3, p);
            let bm = basis(3, m);
            for k in 0..MAX_COEFFS {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "basis {k} axis {axis}: {fd} vs {}", g[k][axis]);
            }
        }
    }
}
