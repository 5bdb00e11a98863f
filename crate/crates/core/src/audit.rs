//! Random scene generators and central finite-difference audits of the
//! analytic backward passes. Shared by the test suites and `canonsplat gradcheck`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deform::{deform, field_backward, DeformationField, FieldConfig};
use crate::error::Result;
use crate::gaussian::{
    rotation_from_quat, shortest_axis, Camera, Gaussian, GaussianCloud, Intrinsics,
};
use crate::image::Image;
use crate::render::{render, render_backward, CloudGradients, RenderSettings};

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_REL_TOL: f64 = 1e-3;
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-6;

/// Camera on the -z axis looking at the origin.
pub fn audit_camera(size: usize) -> Camera {
    let f = 1.2 * size as f64;
    Camera::look_at(
        Intrinsics {
            fx: f,
            fy: f,
            cx: (size as f64 - 1.0) / 2.0,
            cy: (size as f64 - 1.0) / 2.0,
            width: size,
            height: size,
        },
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::y(),
        0.1,
        100.0,
    )
    .expect("valid audit camera")
}

/// Unconstrained random scene: any opacity, any color, Gaussians allowed to
/// straddle the image border. Used for forward equivalence checks.
pub fn random_scene(seed: u64, n: usize, size: usize) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::new(1).expect("degree 1");
    for _ in 0..n {
        cloud
            .push(Gaussian {
                mean: [
                    rng.gen_range(-1.8..1.8),
                    rng.gen_range(-1.8..1.8),
                    rng.gen_range(-1.0..1.0),
                ],
                rotation: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.2..1.0),
                ],
                log_scale: [
                    rng.gen_range(-3.5..-1.0),
                    rng.gen_range(-3.5..-1.0),
                    rng.gen_range(-3.5..-1.0),
                ],
                opacity_logit: rng.gen_range(-6.0..6.0),
                sh: (0..12).map(|_| rng.gen_range(-1.2..1.2)).collect(),
            })
            .expect("matching degree");
    }
    (cloud, audit_camera(size))
}

/// Random scene restricted to the region where the rendered images are smooth
/// in every parameter: opacities below the alpha clamp, colors inside `[0,1]`,
/// distinct depths and scale ratios, normals well away from edge-on.
pub fn smooth_scene(seed: u64, n: usize, size: usize) -> (GaussianCloud, Camera, RenderSettings) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = audit_camera(size);
    let center = camera.center();
    let mut cloud = GaussianCloud::new(1).expect("degree 1");
    let mut depths: Vec<f64> = Vec::new();
    let spread = if n == 1 { 0.05 } else { 0.8 };
    while cloud.len() < n {
        let mean = [
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
            rng.gen_range(-0.5..0.5),
        ];
        let rotation = [
            rng.gen_range(0.3..1.0),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
        ];
        let base = rng.gen_range(-2.0..-1.4);
        let mut log_scale = [base, base + rng.gen_range(0.15..0.5), base - rng.gen_range(0.15..0.5)];
        let perm = rng.gen_range(0..3);
        log_scale.rotate_left(perm);
        let depth = mean[2] - center.z;
        let view = (Vector3::from(mean) - center).normalize();
        let r = rotation_from_quat(&rotation).expect("nonzero");
        let axis = r.column(shortest_axis(&log_scale));
        if axis.dot(&view).abs() < 0.2 || depths.iter().any(|d| (d - depth).abs() < 0.02) {
            continue;
        }
        let mut sh = vec![0.0; 12];
        for c in 0..3 {
            sh[c * 4] = rng.gen_range(-0.5..0.5);
            for k in 1..4 {
                sh[c * 4 + k] = rng.gen_range(-0.25..0.25);
            }
        }
        depths.push(depth);
        cloud
            .push(Gaussian {
                mean,
                rotation,
                log_scale,
                opacity_logit: rng.gen_range(-1.5..0.4),
                sh,
            })
            .expect("matching degree");
    }
    let settings = RenderSettings {
        background: [0.2, 0.5, 0.9],
        // Smooth in the FD stencil: nothing sits on the cutoff boundary.
        alpha_cutoff: 1e-12,
        ..RenderSettings::default()
    };
    (cloud, camera, settings)
}

/// Random upstream gradients for the rgb, alpha and normal images.
pub fn random_upstream(seed: u64, w: usize, h: usize) -> (Image, Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut gen = |c: usize| {
        let data = (0..w * h * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Image::from_vec(w, h, c, data).expect("sized")
    };
    (gen(3), gen(1), gen(3))
}

fn weighted_sum(img: &Image, w: &Image) -> f64 {
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest `|a-n| / max(|a|,|n|)` among entries above the absolute floor.
    pub max_rel_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }

    fn check(&mut self, param: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        if diff <= GRADCHECK_ABS_FLOOR {
            return;
        }
        let rel = diff / analytic.abs().max(numeric.abs());
        self.max_rel_error = self.max_rel_error.max(rel);
        if rel >= GRADCHECK_REL_TOL {
            self.failures.push(GradMismatch {
                param,
                analytic,
                numeric,
            });
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
    }
}

/// Visits every scalar parameter of a cloud with a mutable handle.
fn for_each_param(
    cloud: &mut GaussianCloud,
    mut f: impl FnMut(&mut GaussianCloud, String, &dyn Fn(&mut GaussianCloud) -> &mut f64),
) {
    let n = cloud.len();
    let k = 3 * cloud.sh_per_channel();
    for i in 0..n {
        for a in 0..3 {
            f(cloud, format!("means[{i}][{a}]"), &move |c| &mut c.means[i][a]);
            f(cloud, format!("log_scales[{i}][{a}]"), &move |c| &mut c.log_scales[i][a]);
        }
        for a in 0..4 {
            f(cloud, format!("rotations[{i}][{a}]"), &move |c| &mut c.rotations[i][a]);
        }
        f(cloud, format!("opacity_logits[{i}]"), &move |c| &mut c.opacity_logits[i]);
        for j in 0..k {
            f(cloud, format!("sh_coeffs[{i}][{j}]"), &move |c| &mut c.sh_coeffs[i * k + j]);
        }
    }
}

fn analytic_entry(g: &CloudGradients, name: &str, k: usize) -> f64 {
    let (field, rest) = name.split_once('[').expect("indexed name");
    let idx: Vec<usize> = rest
        .trim_end_matches(']')
        .split("][")
        .map(|s| s.parse().expect("index"))
        .collect();
    match field {
        "means" => g.means[idx[0]][idx[1]],
        "log_scales" => g.log_scales[idx[0]][idx[1]],
        "rotations" => g.rotations[idx[0]][idx[1]],
        "opacity_logits" => g.opacity_logits[idx[0]],
        "sh_coeffs" => g.sh_coeffs[idx[0] * k + idx[1]],
        _ => unreachable!("unknown field {field}"),
    }
}

/// Compares [`render_backward`] with central differences of the scalar loss
/// `Σ w_rgb·rgb + Σ w_α·alpha + Σ w_n·normal` for random weights.
pub fn render_gradcheck(
    cloud: &GaussianCloud,
    camera: &Camera,
    settings: &RenderSettings,
    seed: u64,
) -> Result<GradCheckReport> {
    let (wr, wa, wn) = random_upstream(seed, camera.width, camera.height);
    let loss = |c: &GaussianCloud| -> Result<f64> {
        let out = render(c, camera, settings)?;
        Ok(weighted_sum(&out.rgb, &wr) + weighted_sum(&out.alpha, &wa) + weighted_sum(&out.normal, &wn))
    };
    let fwd = render(cloud, camera, settings)?;
    let grads = render_backward(cloud, camera, settings, &fwd, &wr, &wa, &wn)?;
    let k = 3 * cloud.sh_per_channel();
    let mut report = GradCheckReport::default();
    let mut work = cloud.clone();
    let mut err = None;
    for_each_param(&mut work, |c, name, slot| {
        if err.is_some() {
            return;
        }
        let orig = *slot(c);
        *slot(c) = orig + GRADCHECK_STEP;
        let plus = loss(c);
        *slot(c) = orig - GRADCHECK_STEP;
        let minus = loss(c);
        *slot(c) = orig;
        match (plus, minus) {
            (Ok(p), Ok(m)) => {
                let numeric = (p - m) / (2.0 * GRADCHECK_STEP);
                report.check(name.clone(), analytic_entry(&grads, &name, k), numeric);
            }
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Small field over the audit scene's bounding box.
pub fn audit_field(seed: u64) -> DeformationField {
    let config = FieldConfig {
        resolutions: vec![4],
        features: 2,
        hidden: 8,
        bbox_min: [-1.0, -1.0, -1.0],
        bbox_max: [1.0, 1.0, 1.0],
        color_head: false,
    };
    let mut field = DeformationField::new(&config, seed).expect("valid config");
    field.randomize_for_audit(seed);
    field
}

/// Compares [`field_backward`] with central differences of a random linear
/// functional of the deformed cloud, for both field parameters and input means.
pub fn field_gradcheck(
    field: &DeformationField,
    cloud: &GaussianCloud,
    t: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1e1d);
    let mut upstream = CloudGradients::zeros_like(cloud);
    for v in upstream.means.iter_mut().flatten() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in upstream.rotations.iter_mut().flatten() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in upstream.log_scales.iter_mut().flatten() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in upstream.sh_coeffs.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let functional = |c: &GaussianCloud| -> f64 {
        let mut s = 0.0;
        for i in 0..c.len() {
            for a in 0..3 {
                s += c.means[i][a] * upstream.means[i][a];
                s += c.log_scales[i][a] * upstream.log_scales[i][a];
            }
            for a in 0..4 {
                s += c.rotations[i][a] * upstream.rotations[i][a];
            }
        }
        s + c.sh_coeffs.iter().zip(&upstream.sh_coeffs).map(|(a, b)| a * b).sum::<f64>()
    };

    let (field_grads, mean_grads) = field_backward(field, cloud, t, &upstream)?;
    let mut report = GradCheckReport::default();

    let mut work = field.clone();
    let n_params = work.param_count();
    for p in 0..n_params {
        let orig = work.param(p);
        work.set_param(p, orig + GRADCHECK_STEP);
        let plus = functional(&deform(cloud, t, &work)?);
        work.set_param(p, orig - GRADCHECK_STEP);
        let minus = functional(&deform(cloud, t, &work)?);
        work.set_param(p, orig);
        let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
        report.check(format!("field[{p}]"), field_grads.param(p), numeric);
    }

    let mut moved = cloud.clone();
    for i in 0..cloud.len() {
        for a in 0..3 {
            let orig = moved.means[i][a];
            moved.means[i][a] = orig + GRADCHECK_STEP;
            let plus = functional(&deform(&moved, t, field)?);
            moved.means[i][a] = orig - GRADCHECK_STEP;
            let minus = functional(&deform(&moved, t, field)?);
            moved.means[i][a] = orig;
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            report.check(format!("input_means[{i}][{a}]"), mean_grads[i][a], numeric);
        }
    }
    Ok(report)
}

/// Random Gaussians strictly inside the audit field's box, away from grid nodes
/// only by chance (bilinear kinks have measure zero).
pub fn audit_field_cloud(seed: u64, n: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc10d);
    let mut cloud = GaussianCloud::new(0).expect("degree 0");
    for _ in 0..n {
        cloud
            .push(Gaussian {
                mean: [
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                ],
                rotation: [1.0, rng.gen_range(-0.3..0.3), 0.0, rng.gen_range(-0.3..0.3)],
                log_scale: [rng.gen_range(-3.0..-1.0); 3],
                opacity_logit: 0.0,
                sh: vec![rng.gen_range(-0.5..0.5); 3],
            })
            .expect("degree 0");
    }
    cloud
}
