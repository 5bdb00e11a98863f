//! Synthetic multi-view datasets with controlled cross-view inconsistency.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use super::figure::{bone_color, skeleton, subject_figure, template_figure, Figure};
use crate::anim::Skeleton;
use crate::dataset::{view_time, DatasetMeta, View, ViewDataset};
use crate::error::{Error, Result};
use crate::gaussian::{logit, Camera, GaussianCloud, Intrinsics, SH_C0};
use crate::mesh::{init_gaussians, sample_surface_points};
use crate::render::{render, RenderSettings};

/// Orbit radius in scene units; frames the unit-height figure at `fx = 2W`.
pub const ORBIT_RADIUS: f64 = 2.6;
pub const GT_OPACITY: f64 = 0.95;
pub const GT_SH_DEGREE: usize = 1;
/// Spatial frequency (radians per scene unit) of the perturbation fields.
const PERTURB_FREQUENCY: f64 = std::f64::consts::TAU * 0.6;
const SH_C1: f64 = 0.488_602_511_902_919_9;
/// Strength of the view-dependent brightening baked into band 1.
const SHEEN: f64 = 0.06;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_views: usize,
    pub elevation_amp_deg: f64,
    pub n_gaussians_gt: usize,
    pub resolution: usize,
    /// Amplitude of the per-view positional perturbation, scene units.
    pub inconsistency_sigma: f64,
    /// Amplitude of the per-view color perturbation.
    pub color_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_views: 30,
            elevation_amp_deg: 20.0,
            n_gaussians_gt: 2000,
            resolution: 64,
            inconsistency_sigma: 0.02,
            color_jitter: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::InvalidParameter("need at least 2 views".into()));
        }
        if self.resolution < 8 {
            return Err(Error::InvalidParameter("resolution must be at least 8".into()));
        }
        if self.n_gaussians_gt < 8 {
            return Err(Error::InvalidParameter("need at least 8 ground-truth Gaussians".into()));
        }
        for (name, v) in [
            ("elevation_amp_deg", self.elevation_amp_deg),
            ("inconsistency_sigma", self.inconsistency_sigma),
            ("color_jitter", self.color_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Shared intrinsics of every orbit camera.
pub fn orbit_intrinsics(resolution: usize) -> Intrinsics {
    let w = resolution as f64;
    Intrinsics {
        fx: 2.0 * w,
        fy: 2.0 * w,
        cx: (w - 1.0) / 2.0,
        cy: (w - 1.0) / 2.0,
        width: resolution,
        height: resolution,
    }
}

/// Elevation of view `i` in degrees.
pub fn orbit_elevation_deg(config: &SynthConfig, i: usize) -> f64 {
    config.elevation_amp_deg * (std::f64::consts::TAU * i as f64 / config.n_views as f64).sin()
}

/// Camera at the given azimuth and elevation (degrees) on the orbit sphere.
pub fn orbit_camera(resolution: usize, azimuth_deg: f64, elevation_deg: f64) -> Result<Camera> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * ORBIT_RADIUS;
    Camera::look_at(
        orbit_intrinsics(resolution),
        eye,
        Vector3::zeros(),
        Vector3::y(),
        0.1,
        10.0,
    )
}

/// View `i` sits at azimuth `360°·i/n` and elevation `amp·sin(2πi/n)`,
/// looking at the figure center.
pub fn camera_orbit(config: &SynthConfig) -> Result<Vec<Camera>> {
    config.validate()?;
    (0..config.n_views)
        .map(|i| {
            let az = 360.0 * i as f64 / config.n_views as f64;
            orbit_camera(config.resolution, az, orbit_elevation_deg(config, i))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: ViewDataset,
    pub gt_cloud: GaussianCloud,
    pub template: Figure,
    pub subject: Figure,
    pub skeleton: Skeleton,
}

/// Ground-truth surfels on the subject surface, colored per body part.
pub fn ground_truth_cloud(subject: &Figure, n: usize, seed: u64) -> Result<GaussianCloud> {
    let (points, normals) = sample_surface_points(&subject.mesh, n, seed)?;
    let base = init_gaussians(&points, &normals, 3)?;
    let mut cloud = base.with_sh_degree(GT_SH_DEGREE)?;
    let index = crate::spatial::PointIndex::new(&subject.mesh.vertices);
    for i in 0..cloud.len() {
        let p = points[i];
        let (v, _) = index.nearest(&p, 1, None)[0];
        let shade = 0.85 + 0.15 * (30.0 * p[1] + 10.0 * p[0]).sin();
        let rgb = bone_color(subject.vertex_bone[v]).map(|c| c * shade);
        cloud.set_base_color(i, rgb);
        // Band 1 adds SHEEN·(−n·d): brighter where the surfel faces the camera.
        let n = normals[i];
        let k = cloud.sh_per_channel();
        let sh = cloud.sh_mut(i);
        for c in 0..3 {
            sh[c * k + 1] = SHEEN * n[1] / SH_C1;
            sh[c * k + 2] = -SHEEN * n[2] / SH_C1;
            sh[c * k + 3] = SHEEN * n[0] / SH_C1;
        }
        let ls = &mut cloud.log_scales[i];
        ls[2] = ls[0] - 10f64.ln();
        cloud.opacity_logits[i] = logit(GT_OPACITY);
    }
    cloud.validate()?;
    Ok(cloud)
}

/// Per-view clone of `gt`: means displaced by a smooth field of amplitude
/// `sigma`, base colors shifted by a smooth field of amplitude `jitter`.
/// The phases are drawn from `(seed, view)`.
pub fn perturb_cloud(gt: &GaussianCloud, sigma: f64, jitter: f64, seed: u64, view: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ ((view as u64) << 20));
    let mut wave = || {
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        (Vector3::from(dir) * PERTURB_FREQUENCY, phase)
    };
    let pos: Vec<_> = (0..3).map(|_| wave()).collect();
    let col: Vec<_> = (0..3).map(|_| wave()).collect();
    let mut out = gt.clone();
    let k = out.sh_per_channel();
    for i in 0..out.len() {
        let p = gt.mean(i);
        for a in 0..3 {
            out.means[i][a] += sigma * (pos[a].0.dot(&p) + pos[a].1).sin();
        }
        let sh = out.sh_mut(i);
        for c in 0..3 {
            sh[c * k] += jitter * (col[c].0.dot(&p) + col[c].1).sin() / SH_C0;
        }
    }
    out
}

/// Renders one 8-bit-quantized view of `cloud`.
pub fn render_view(cloud: &GaussianCloud, camera: &Camera, t: f64) -> Result<View> {
    let out = render(cloud, camera, &RenderSettings::default())?;
    let mut rgb = out.rgb;
    let mut mask = out.alpha;
    let mut normal = out.normal;
    rgb.quantize_u8(0.0, 1.0);
    mask.quantize_u8(0.0, 1.0);
    normal.quantize_u8(-1.0, 1.0);
    Ok(View {
        rgb,
        mask,
        normal,
        camera: camera.clone(),
        t,
    })
}

/// Builds the figure, its ground-truth cloud, and one perturbed render per
/// orbit camera. View 0 is the unperturbed canonical reference.
pub fn synth_dataset(config: &SynthConfig) -> Result<SynthOutput> {
    let cameras = camera_orbit(config)?;
    let template = template_figure();
    let subject = subject_figure();
    let gt_cloud = ground_truth_cloud(&subject, config.n_gaussians_gt, config.seed)?;
    let n = cameras.len();
    let views = cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            if i == 0 {
                render_view(&gt_cloud, cam, 0.0)
            } else {
                let p = perturb_cloud(&gt_cloud, config.inconsistency_sigma, config.color_jitter, config.seed, i);
                render_view(&p, cam, view_time(i, n))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = ViewDataset {
        views,
        meta: DatasetMeta {
            width: config.resolution,
            height: config.resolution,
            inconsistency_sigma: config.inconsistency_sigma,
            color_jitter: config.color_jitter,
            seed: config.seed,
        },
    };
    dataset.validate()?;
    Ok(SynthOutput {
        dataset,
        gt_cloud,
        template,
        subject,
        skeleton: skeleton(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_views: 6,
            n_gaussians_gt: 600,
            resolution: 32,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn orbit_examples() {
        let cfg = SynthConfig::default();
        assert_eq!(orbit_elevation_deg(&cfg, 0), 0.0);
        assert!((orbit_elevation_deg(&cfg, 7) - 19.890_437_907_365_467).abs() < 1e-12);
        let cams = camera_orbit(&cfg).unwrap();
        assert_eq!(cams.len(), 30);
        let c0 = cams[0].center();
        assert!((c0 - Vector3::new(0.0, 0.0, ORBIT_RADIUS)).norm() < 1e-12);
        for c in &cams {
            let e = (c.center().y / ORBIT_RADIUS).asin().to_degrees();
            assert!(e.abs() <= 20.0 + 1e-9);
            // The figure center projects to the principal point.
            let p = c.world_to_camera(&Vector3::zeros());
            assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_perturbation_views_are_consistent() {
        let cfg = SynthConfig {
            inconsistency_sigma: 0.0,
            color_jitter: 0.0,
            ..small()
        };
        let out = synth_dataset(&cfg).unwrap();
        for v in &out.dataset.views {
            let clean = render_view(&out.gt_cloud, &v.camera, v.t).unwrap();
            assert_eq!(clean.rgb, v.rgb);
            assert_eq!(clean.mask, v.mask);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = synth_dataset(&small()).unwrap();
        let b = synth_dataset(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.gt_cloud, b.gt_cloud);
    }

    #[test]
    fn inconsistency_grows_with_sigma() {
        let cfg = small();
        let out = synth_dataset(&cfg).unwrap();
        let cam = &out.dataset.views[0].camera;
        let reference = render_view(&out.gt_cloud, cam, 0.0).unwrap();
        let l1 = |sigma: f64| {
            let p = perturb_cloud(&out.gt_cloud, sigma, 0.0, cfg.seed, 3);
            let v = render_view(&p, cam, 0.0).unwrap();
            v.rgb.data.iter().zip(&reference.rgb.data).map(|(a, b)| (a - b).abs()).sum::<f64>()
                / v.rgb.data.len() as f64
        };
        let d: Vec<f64> = [0.01, 0.02, 0.04].iter().map(|s| l1(*s)).collect();
        assert!(d[0] > 0.0 && d[0] < d[1] && d[1] < d[2], "{d:?}");
    }

    #[test]
    fn ground_truth_covers_the_silhouette() {
        let out = synth_dataset(&small()).unwrap();
        let m = &out.dataset.views[0].mask;
        let covered = m.data.iter().filter(|v| **v > 0.5).count();
        assert!(covered > m.data.len() / 10, "{covered}");
        let solid = m.data.iter().filter(|v| **v > 0.9).count();
        assert!(solid as f64 > 0.8 * covered as f64, "{solid} of {covered}");
    }
}
