//! Gaussian cloud data model, pinhole cameras and PLY serialization.

mod math;
pub mod ply;

pub use math::{
    covariance_from_scale_rotation, gaussian_normal, logit, normalize_quat, quat_from_rotation,
    rotation_aligning_z, rotation_from_quat, rotation_from_unit_quat, sh_basis, sh_coeff_count,
    sh_to_color, shortest_axis, sigmoid, MAX_SH_DEGREE, SH_C0,
};
pub(crate) use math::{
    covariance_backward, covariance_from_parts, normal_from_parts, quat_backward, sh_backward,
    sh_to_color_raw,
};
pub use ply::{ply_export, ply_export_with, ply_import, PlyScalar};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Structure-of-arrays storage for a set of anisotropic 3D Gaussians.
///
/// Scales are stored as logs and opacities as logits so that optimizers act in
/// unconstrained space. SH coefficients are laid out per Gaussian as
/// `[channel][coefficient]`, i.e. `3 × (degree+1)²` values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    sh_degree: usize,
}

/// One Gaussian's parameters, used to build clouds incrementally.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "sh degree {sh_degree} exceeds {MAX_SH_DEGREE}"
            )));
        }
        Ok(Self {
            means: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            sh_degree,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    /// Coefficients per color channel.
    pub fn sh_per_channel(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    /// All `3 × (deg+1)²` coefficients of Gaussian `i`.
    pub fn sh(&self, i: usize) -> &[f64] {
        let k = 3 * self.sh_per_channel();
        &self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn sh_mut(&mut self, i: usize) -> &mut [f64] {
        let k = 3 * self.sh_per_channel();
        &mut self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scales(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(f64::exp)
    }

    pub fn mean(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.means[i])
    }

    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        covariance_from_scale_rotation(&self.log_scales[i], &self.rotations[i])
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        if g.sh.len() != 3 * self.sh_per_channel() {
            return Err(Error::InvalidInput(format!(
                "expected {} SH coefficients, got {}",
                3 * self.sh_per_channel(),
                g.sh.len()
            )));
        }
        self.means.push(g.mean);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_coeffs.extend_from_slice(&g.sh);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            mean: self.means[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh(i).to_vec(),
        }
    }

    /// New cloud made of the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.sh_degree).expect("degree already validated");
        for &i in indices {
            out.push(self.get(i)).expect("same degree");
        }
        out
    }

    /// Copy at another SH degree: shared bands are kept, new bands are zero.
    pub fn with_sh_degree(&self, degree: usize) -> Result<Self> {
        let mut out = Self::new(degree)?;
        let (k_old, k_new) = (self.sh_per_channel(), out.sh_per_channel());
        let k = k_old.min(k_new);
        for i in 0..self.len() {
            let mut g = self.get(i);
            let mut sh = vec![0.0; 3 * k_new];
            for c in 0..3 {
                sh[c * k_new..c * k_new + k].copy_from_slice(&g.sh[c * k_old..c * k_old + k]);
            }
            g.sh = sh;
            out.push(g)?;
        }
        Ok(out)
    }

    /// Sets the view-independent color of Gaussian `i` to `rgb` and clears the
    /// higher bands.
    pub fn set_base_color(&mut self, i: usize, rgb: [f64; 3]) {
        let k = self.sh_per_channel();
        let sh = self.sh_mut(i);
        sh.fill(0.0);
        for c in 0..3 {
            sh[c * k] = (rgb[c] - 0.5) / SH_C0;
        }
    }

    /// Checks the structural and numeric invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidState("cloud has no Gaussians".into()));
        }
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_coeffs.len() != n * 3 * self.sh_per_channel()
        {
            return Err(Error::InvalidState("parameter arrays disagree on length".into()));
        }
        for i in 0..n {
            self.check_finite(i)?;
            if self.scales(i).iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::InvalidState(format!(
                    "Gaussian {i} has a degenerate scale {:?}",
                    self.log_scales[i]
                )));
            }
            normalize_quat(&self.rotations[i])?;
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self, i: usize) -> Result<()> {
        let ok = self.means[i].iter().all(|v| v.is_finite())
            && self.rotations[i].iter().all(|v| v.is_finite())
            && self.log_scales[i].iter().all(|v| v.is_finite())
            && self.opacity_logits[i].is_finite()
            && self.sh(i).iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "Gaussian {i} has a non-finite parameter"
            )))
        }
    }
}

/// Pinhole camera with a world-to-camera rigid transform. Camera space looks
/// down `+z`, with `+x` right and `+y` down in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

/// Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self {
            fx: intrinsics.fx,
            fy: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            width: intrinsics.width,
            height: intrinsics.height,
            rotation,
            translation,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` projected to image-up.
    pub fn look_at(
        intrinsics: Intrinsics,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::InvalidParameter("up vector parallel to view axis".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(intrinsics, rotation, translation, near, far)
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        if err > 1e-6 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "camera rotation is not a proper orthonormal matrix (error {err:e})"
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be at least 1×1".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
