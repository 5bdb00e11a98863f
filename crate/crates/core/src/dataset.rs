//! Multi-view training data: one image triple and camera per timestep.

use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub rgb: Image,
    /// Single channel in `[0, 1]`.
    pub mask: Image,
    /// Camera-space normals premultiplied by the mask.
    pub normal: Image,
    pub camera: Camera,
    /// Timestep in `[0, 1]`; view `i` of `n` sits at `i / (n - 1)`.
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub width: usize,
    pub height: usize,
    pub inconsistency_sigma: f64,
    pub color_jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewDataset {
    pub views: Vec<View>,
    pub meta: DatasetMeta,
}

/// Timestep of view `i` among `n`.
pub fn view_time(i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

impl ViewDataset {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "dataset needs at least 2 views, has {}",
                self.views.len()
            )));
        }
        let (w, h) = (self.meta.width, self.meta.height);
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate()?;
            if v.camera.width != w || v.camera.height != h {
                return Err(Error::InvalidInput(format!("view {i}: camera is not {w}×{h}")));
            }
            v.rgb.expect_shape("rgb", w, h, 3)?;
            v.mask.expect_shape("mask", w, h, 1)?;
            v.normal.expect_shape("normal", w, h, 3)?;
        }
        let ts: Vec<f64> = self.views.iter().map(|v| v.t).collect();
        if ts[0] != 0.0 || *ts.last().unwrap() != 1.0 || ts.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidInput(
                "view timesteps must increase strictly from 0 to 1".into(),
            ));
        }
        Ok(())
    }
}
