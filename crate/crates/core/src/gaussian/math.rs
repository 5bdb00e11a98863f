//! Closed-form per-Gaussian math: rotations, covariances, spherical harmonics
//! and surfel normals, each paired with its hand-written vector-Jacobian
//! product.
//!
//! Quaternions are scalar-first `(w, x, y, z)` and may be stored unnormalized;
//! every function here normalizes on use.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// `Y_0^0`, the constant band of the real SH basis.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of SH coefficients per color channel at `degree`.
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Returns the unit quaternion and the norm of the raw one.
pub fn normalize_quat(q: &[f64; 4]) -> Result<([f64; 4], f64)> {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "quaternion {q:?} has zero or non-finite norm"
        )));
    }
    Ok(([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm], norm))
}

pub fn rotation_from_unit_quat(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix of a possibly unnormalized quaternion.
pub fn rotation_from_quat(q: &[f64; 4]) -> Result<Matrix3<f64>> {
    let (u, _) = normalize_quat(q)?;
    Ok(rotation_from_unit_quat(&u))
}

/// Scalar-first quaternion of a proper rotation matrix.
pub fn quat_from_rotation(r: &Matrix3<f64>) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    [q.w, q.i, q.j, q.k]
}

/// Pulls a gradient w.r.t. the rotation matrix back to the raw (unnormalized)
/// quaternion.
pub fn quat_backward(q: &[f64; 4], grad_r: &Matrix3<f64>) -> Result<[f64; 4]> {
    let (u, norm) = normalize_quat(q)?;
    let [w, x, y, z] = u;
    let g = grad_r;
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gu = [gw, gx, gy, gz];
    let dot = gu.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    Ok([
        (gu[0] - u[0] * dot) / norm,
        (gu[1] - u[1] * dot) / norm,
        (gu[2] - u[2] * dot) / norm,
        (gu[3] - u[3] * dot) / norm,
    ])
}

/// `R diag(exp(ls))^2 R^T`.
pub fn covariance_from_scale_rotation(log_scale: &[f64; 3], q: &[f64; 4]) -> Result<Matrix3<f64>> {
    let r = rotation_from_quat(q)?;
    Ok(covariance_from_parts(log_scale, &r))
}

pub(crate) fn covariance_from_parts(log_scale: &[f64; 3], r: &Matrix3<f64>) -> Matrix3<f64> {
    let m = scaled_rotation(log_scale, r);
    m * m.transpose()
}

fn scaled_rotation(log_scale: &[f64; 3], r: &Matrix3<f64>) -> Matrix3<f64> {
    let s = Vector3::new(log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp());
    let mut m = *r;
    for j in 0..3 {
        m.column_mut(j).scale_mut(s[j]);
    }
    m
}

/// Backward of [`covariance_from_scale_rotation`]; `grad_cov` holds the partials
/// w.r.t. all nine entries. Returns `(d log_scale, d R)`.
pub(crate) fn covariance_backward(
    log_scale: &[f64; 3],
    r: &Matrix3<f64>,
    grad_cov: &Matrix3<f64>,
) -> ([f64; 3], Matrix3<f64>) {
    let m = scaled_rotation(log_scale, r);
    let grad_m = (grad_cov + grad_cov.transpose()) * m;
    let mut grad_r = grad_m;
    let mut grad_ls = [0.0; 3];
    for j in 0..3 {
        let s = log_scale[j].exp();
        grad_r.column_mut(j).scale_mut(s);
        // d/d ls_j of M_ij = R_ij s_j is M_ij itself.
        grad_ls[j] = grad_m.column(j).dot(&m.column(j));
    }
    (grad_ls, grad_r)
}

/// Real SH basis values up to `degree` (at most 16 entries are meaningful).
pub fn sh_basis(degree: usize, d: &Vector3<f64>) -> [f64; 16] {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut b = [0.0; 16];
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

/// Gradient of every basis function w.r.t. the (unnormalized) direction components.
fn sh_basis_grad(degree: usize, d: &Vector3<f64>) -> [[f64; 3]; 16] {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut g = [[0.0; 3]; 16];
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
            let c = SH_C3;
            g[9] = [c[0] * 6.0 * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0];
            g[10] = [c[1] * y * z, c[1] * x * z, c[1] * x * y];
            g[11] = [
                c[2] * -2.0 * x * y,
                c[2] * (4.0 * zz - xx - 3.0 * yy),
                c[2] * 8.0 * y * z,
            ];
            g[12] = [
                c[3] * -6.0 * x * z,
                c[3] * -6.0 * y * z,
                c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            g[13] = [
                c[4] * (4.0 * zz - 3.0 * xx - yy),
                c[4] * -2.0 * x * y,
                c[4] * 8.0 * x * z,
            ];
            g[14] = [c[5] * 2.0 * x * z, c[5] * -2.0 * y * z, c[5] * (xx - yy)];
            g[15] = [c[6] * (3.0 * xx - 3.0 * yy), c[6] * -6.0 * x * y, 0.0];
        }
    }
    g
}

/// Evaluates channel-major coefficients (`3 × (deg+1)²`) along `view_dir`
/// with the usual splatting convention `SH₀·c₀ + 0.5 + …`, clamped to `[0, 1]`.
pub fn sh_to_color(coeffs: &[f64], degree: usize, view_dir: &Vector3<f64>) -> [f64; 3] {
    sh_to_color_raw(coeffs, degree, view_dir).map(|c| c.clamp(0.0, 1.0))
}

/// Unclamped color; the renderer needs it to decide where the clamp kills the gradient.
pub(crate) fn sh_to_color_raw(coeffs: &[f64], degree: usize, view_dir: &Vector3<f64>) -> [f64; 3] {
    let k = sh_coeff_count(degree);
    debug_assert_eq!(coeffs.len(), 3 * k);
    let basis = sh_basis(degree, view_dir);
    let mut out = [0.5; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let row = &coeffs[c * k..(c + 1) * k];
        *o += row.iter().zip(&basis[..k]).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

/// Backward of the unclamped color. Accumulates into `grad_coeffs` and returns the
/// gradient w.r.t. the unit view direction.
pub(crate) fn sh_backward(
    coeffs: &[f64],
    degree: usize,
    view_dir: &Vector3<f64>,
    grad_color: &[f64; 3],
    grad_coeffs: &mut [f64],
) -> Vector3<f64> {
    let k = sh_coeff_count(degree);
    let basis = sh_basis(degree, view_dir);
    for c in 0..3 {
        for j in 0..k {
            grad_coeffs[c * k + j] += grad_color[c] * basis[j];
        }
    }
    let mut grad_dir = Vector3::zeros();
    if degree == 0 {
        return grad_dir;
    }
    let bg = sh_basis_grad(degree, view_dir);
    for c in 0..3 {
        if grad_color[c] == 0.0 {
            continue;
        }
        for j in 1..k {
            let w = grad_color[c] * coeffs[c * k + j];
            grad_dir.x += w * bg[j][0];
            grad_dir.y += w * bg[j][1];
            grad_dir.z += w * bg[j][2];
        }
    }
    grad_dir
}

/// Index of the shortest ellipsoid axis. Three scales equal within `1e-9`
/// (and any remaining tie) resolve to the lowest index.
pub fn shortest_axis(log_scale: &[f64; 3]) -> usize {
    let s = log_scale.map(f64::exp);
    let max = s.iter().cloned().fold(f64::MIN, f64::max);
    let min = s.iter().cloned().fold(f64::MAX, f64::min);
    if max - min <= 1e-9 {
        return 0;
    }
    let mut k = 0;
    for i in 1..3 {
        if s[i] < s[k] {
            k = i;
        }
    }
    k
}

/// Camera-facing normal of a Gaussian treated as a surfel: the rotated shortest
/// axis, flipped so that `dot(n, view_dir) <= 0`.
pub fn gaussian_normal(
    log_scale: &[f64; 3],
    q: &[f64; 4],
    view_dir: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let r = rotation_from_quat(q)?;
    Ok(normal_from_parts(log_scale, &r, view_dir).0)
}

/// Returns the normal, the axis index and the applied sign.
pub(crate) fn normal_from_parts(
    log_scale: &[f64; 3],
    r: &Matrix3<f64>,
    view_dir: &Vector3<f64>,
) -> (Vector3<f64>, usize, f64) {
    let k = shortest_axis(log_scale);
    let axis: Vector3<f64> = r.column(k).into();
    let sign = if axis.dot(view_dir) > 0.0 { -1.0 } else { 1.0 };
    (axis * sign, k, sign)
}

/// Rotation whose third column is `normal` (unit length assumed).
pub fn rotation_aligning_z(normal: &Vector3<f64>) -> Matrix3<f64> {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = helper.cross(&n).normalize();
    let v = n.cross(&u);
    Matrix3::from_columns(&[u, v, n])
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
