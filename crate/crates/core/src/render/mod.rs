//! Differentiable CPU splatting.
//!
//! [`render`] is the tiled rasterizer used for optimization, [`render_reference`]
//! the brute-force per-pixel loop it must agree with, and [`render_backward`]
//! the analytic vector-Jacobian product of the tiled forward pass.
//!
//! Pixel `(i, j)` samples the image plane at `(i, j)` in the same coordinates
//! as the principal point.

mod backward;
mod forward;
mod project;

pub use backward::render_backward;
pub use forward::{render, render_reference};
pub use project::{project_gaussian, Projection, COV2D_DILATION};

use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::image::Image;

/// Upper bound on a single splat's alpha.
pub const MAX_SPLAT_ALPHA: f64 = 0.99;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub tile_size: usize,
    pub alpha_cutoff: f64,
    pub gaussian_extent_sigmas: f64,
    /// SH bands evaluated, clamped to the cloud's degree.
    pub sh_degree_active: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [1.0; 3],
            tile_size: 16,
            alpha_cutoff: 1.0 / 255.0,
            gaussian_extent_sigmas: 3.0,
            sh_degree_active: 3,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidParameter("tile_size must be at least 1".into()));
        }
        if !(self.gaussian_extent_sigmas > 0.0) {
            return Err(Error::InvalidParameter(
                "gaussian_extent_sigmas must be positive".into(),
            ));
        }
        if !(self.alpha_cutoff > 0.0 && self.alpha_cutoff < MAX_SPLAT_ALPHA) {
            return Err(Error::InvalidParameter(format!(
                "alpha_cutoff {} outside (0, {MAX_SPLAT_ALPHA})",
                self.alpha_cutoff
            )));
        }
        Ok(())
    }
}

/// Everything the forward pass produced.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: Image,
    pub alpha: Image,
    /// Alpha-composited camera-space normals (not renormalized).
    pub normal: Image,
    /// Alpha-weighted mean camera-space depth; zero where nothing was hit.
    pub depth: Image,
    /// Number of splats that contributed to each pixel.
    pub contrib_count: Vec<u32>,
    pub(crate) state: ForwardState,
}

impl RenderOutput {
    /// Indices of the Gaussians that survived culling, in compositing order.
    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        self.state.splats.iter().map(|s| s.index)
    }
}

/// Forward-pass bookkeeping replayed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardState {
    pub fingerprint: u64,
    /// Visible Gaussians, sorted by (depth, index).
    pub splats: Vec<Splat>,
    /// Per tile: positions into `splats`, ascending.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub final_transmittance: Vec<f64>,
    /// Per pixel: number of tile-list entries walked by the forward pass.
    pub walked: Vec<u32>,
}

#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub color: [f64; 3],
    pub normal: [f64; 3],
    /// Half-width of the conservative screen bounding box.
    pub radius: f64,
    /// Exponents below this give alpha under the cutoff without evaluating `exp`.
    pub power_floor: f64,
}

/// Gradients w.r.t. every parameter array of a [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGradients {
    pub means: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    /// Gradient w.r.t. each projected mean, in pixels. Feeds densification.
    pub screen_means: Vec<[f64; 2]>,
}

impl CloudGradients {
    pub fn zeros_like(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            means: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![0.0; cloud.sh_coeffs.len()],
            screen_means: vec![[0.0; 2]; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.sh_coeffs.iter().all(|v| v.is_finite())
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &CloudGradients) {
        fn add<const K: usize>(a: &mut [[f64; K]], b: &[[f64; K]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..K {
                    x[k] += y[k];
                }
            }
        }
        add(&mut self.means, &other.means);
        add(&mut self.rotations, &other.rotations);
        add(&mut self.log_scales, &other.log_scales);
        add(&mut self.screen_means, &other.screen_means);
        for (x, y) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *x += y;
        }
        for (x, y) in self.sh_coeffs.iter_mut().zip(&other.sh_coeffs) {
            *x += y;
        }
    }
}

pub(crate) fn fingerprint(cloud: &GaussianCloud, camera: &Camera, settings: &RenderSettings) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let mut put = |v: f64| v.to_bits().hash(&mut h);
    cloud.means.iter().flatten().for_each(|v| put(*v));
    cloud.rotations.iter().flatten().for_each(|v| put(*v));
    cloud.log_scales.iter().flatten().for_each(|v| put(*v));
    cloud.opacity_logits.iter().for_each(|v| put(*v));
    cloud.sh_coeffs.iter().for_each(|v| put(*v));
    for v in [camera.fx, camera.fy, camera.cx, camera.cy, camera.near, camera.far] {
        put(v);
    }
    camera.rotation.iter().for_each(|v| put(*v));
    camera.translation.iter().for_each(|v| put(*v));
    settings.background.iter().for_each(|v| put(*v));
    put(settings.alpha_cutoff);
    put(settings.gaussian_extent_sigmas);
    let mut h2 = h;
    (camera.width, camera.height, settings.tile_size, settings.sh_degree_active).hash(&mut h2);
    cloud.sh_degree().hash(&mut h2);
    h2.finish()
}
