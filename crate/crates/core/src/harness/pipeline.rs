//! Glue between the library stages: initialization, evaluation, turntables.

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use super::figure::{template_figure, Figure};
use super::metrics::{mean_angular_error_deg, psnr};
use super::synth::{orbit_camera, GT_SH_DEGREE};
use crate::anim::{build_skinning_grid, SkinningGrid};
use crate::dataset::ViewDataset;
use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::mesh::{fit_coarse_mesh, init_gaussians, sample_surface_points, MeshFitConfig, TriMesh};
use crate::recon::csv_error;
use crate::render::{render, RenderSettings};

/// Box enclosing the figure in every supported thickness, scene units.
pub const FIGURE_BBOX: ([f64; 3], [f64; 3]) = ([-0.55, -0.7, -0.3], [0.55, 0.7, 0.3]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// Uniform points in the template's padded bounding box.
    Random,
    /// Samples of the undeformed template surface.
    Template,
    /// Samples of the template after fitting it to the dataset.
    CoarseMesh,
}

impl FromStr for InitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "template" => Ok(Self::Template),
            "coarse" | "coarse-mesh" => Ok(Self::CoarseMesh),
            _ => Err(Error::InvalidParameter(format!(
                "unknown init method {s:?} (random, template, coarse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub n_points: usize,
    pub n_neighbors: usize,
    pub mesh: MeshFitConfig,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            n_points: 2000,
            n_neighbors: 3,
            mesh: MeshFitConfig::default(),
            seed: 0,
        }
    }
}

/// Initial cloud for `fit`, at the SH degree the fit optimizes. Returns the
/// fitted mesh too when one was made.
pub fn initial_cloud(
    method: InitMethod,
    dataset: &ViewDataset,
    template: &TriMesh,
    config: &InitConfig,
) -> Result<(GaussianCloud, Option<TriMesh>)> {
    let (points, normals, mesh) = match method {
        InitMethod::Random => {
            let (lo, hi) = template.bounds();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut pts = Vec::with_capacity(config.n_points);
            let mut nrm = Vec::with_capacity(config.n_points);
            for _ in 0..config.n_points {
                pts.push([0, 1, 2].map(|a| {
                    let pad = 0.1 * (hi[a] - lo[a]);
                    rng.gen_range(lo[a] - pad..hi[a] + pad)
                }));
                nrm.push(UnitSphere.sample(&mut rng));
            }
            (pts, nrm, None)
        }
        InitMethod::Template => {
            let (p, n) = sample_surface_points(template, config.n_points, config.seed)?;
            (p, n, None)
        }
        InitMethod::CoarseMesh => {
            let mesh_cfg = MeshFitConfig {
                seed: config.seed,
                ..config.mesh.clone()
            };
            let fitted = fit_coarse_mesh(template, dataset, &mesh_cfg)?;
            let (p, n) = sample_surface_points(&fitted, config.n_points, config.seed)?;
            (p, n, Some(fitted))
        }
    };
    let cloud = init_gaussians(&points, &normals, config.n_neighbors)?.with_sh_degree(GT_SH_DEGREE)?;
    Ok((cloud, mesh))
}

/// Scores of one evaluation view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewEval {
    pub view: usize,
    pub psnr: f64,
    /// Mean normal angle error in degrees over jointly covered pixels.
    pub normal_error_deg: Option<f64>,
}

/// Compares renders of `cloud` against renders of `reference` from each camera.
pub fn evaluate(cloud: &GaussianCloud, reference: &GaussianCloud, cameras: &[Camera]) -> Result<Vec<ViewEval>> {
    let settings = RenderSettings::default();
    cameras
        .iter()
        .enumerate()
        .map(|(view, cam)| {
            let a = render(cloud, cam, &settings)?;
            let b = render(reference, cam, &settings)?;
            Ok(ViewEval {
                view,
                psnr: psnr(&a.rgb, &b.rgb)?,
                normal_error_deg: mean_angular_error_deg(&a.normal, &a.alpha, &b.normal, &b.alpha)?,
            })
        })
        .collect()
}

/// PSNR of renders of `cloud` against the dataset's own training images.
pub fn psnr_vs_targets(cloud: &GaussianCloud, dataset: &ViewDataset) -> Result<Vec<f64>> {
    let settings = RenderSettings::default();
    dataset
        .views
        .iter()
        .map(|v| psnr(&render(cloud, &v.camera, &settings)?.rgb, &v.rgb))
        .collect()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n.max(1) as f64
}

pub fn write_eval_csv(rows: &[ViewEval], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["view", "psnr_db", "normal_error_deg"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&[
            r.view.to_string(),
            format!("{:.4}", r.psnr),
            r.normal_error_deg.map_or_else(String::new, |e| format!("{e:.4}")),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `n` cameras at zero elevation, evenly spaced in azimuth.
pub fn turntable_cameras(n: usize, resolution: usize) -> Result<Vec<Camera>> {
    (0..n)
        .map(|i| orbit_camera(resolution, 360.0 * i as f64 / n.max(1) as f64, 0.0))
        .collect()
}

/// Skinning grid diffused from the template figure over [`FIGURE_BBOX`].
pub fn figure_skinning_grid(resolution: usize, smoothing_iters: usize) -> Result<SkinningGrid> {
    let Figure { mesh, weights, .. } = template_figure();
    build_skinning_grid(&mesh, &weights, FIGURE_BBOX, resolution, smoothing_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::figure::subject_figure;

    #[test]
    fn figure_fits_the_box() {
        for fig in [template_figure(), subject_figure()] {
            let (lo, hi) = fig.mesh.bounds();
            for a in 0..3 {
                assert!(lo[a] > FIGURE_BBOX.0[a] && hi[a] < FIGURE_BBOX.1[a]);
            }
        }
    }

    #[test]
    fn init_methods_parse() {
        assert_eq!("coarse".parse::<InitMethod>().unwrap(), InitMethod::CoarseMesh);
        assert!("mesh".parse::<InitMethod>().is_err());
    }

    #[test]
    fn eval_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let rows = [ViewEval { view: 0, psnr: 31.5, normal_error_deg: None }];
        write_eval_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "view,psnr_db,normal_error_deg\n0,31.5000,\n");
    }
}
