use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::{splat_alpha, truncate_sh};
use super::project::{perspective_jacobian, perspective_jacobian_backward};
use super::{fingerprint, CloudGradients, RenderOutput, RenderSettings, Splat};
use crate::error::{Error, Result};
use crate::gaussian::{
    covariance_backward, covariance_from_parts, normal_from_parts, normalize_quat, quat_backward,
    rotation_from_unit_quat, sh_backward, sh_to_color_raw, Camera, GaussianCloud,
};
use crate::image::Image;

/// Gradients w.r.t. one splat's screen-space quantities.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    normal: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
            self.normal[k] += o.normal[k];
        }
        self.opacity += o.opacity;
    }
}

/// Analytic backward pass of [`super::render`].
///
/// Given upstream gradients on the composited rgb, alpha and normal images,
/// returns `∂L/∂parameter` for every Gaussian. `forward` must come from
/// `render(cloud, camera, settings)` with the same arguments.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    settings: &RenderSettings,
    forward: &RenderOutput,
    grad_rgb: &Image,
    grad_alpha: &Image,
    grad_normal: &Image,
) -> Result<CloudGradients> {
    let (w, h) = (camera.width, camera.height);
    grad_rgb.expect_shape("grad_rgb", w, h, 3)?;
    grad_alpha.expect_shape("grad_alpha", w, h, 1)?;
    grad_normal.expect_shape("grad_normal", w, h, 3)?;
    let state = &forward.state;
    if state.fingerprint != fingerprint(cloud, camera, settings) {
        return Err(Error::Contract(
            "forward output was produced from different inputs (or by render_reference)".into(),
        ));
    }
    let ts = settings.tile_size;
    let tiles_x = state.tiles_x;

    // Per tile, gradients aligned with that tile's list; merged below in tile order
    // so the result does not depend on scheduling.
    let per_tile: Vec<Vec<SplatGrad>> = state
        .tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let mut acc = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    backward_pixel(
                        x,
                        y,
                        list,
                        &state.splats,
                        settings,
                        forward,
                        grad_rgb.pixel(x, y),
                        grad_alpha.pixel(x, y)[0],
                        grad_normal.pixel(x, y),
                        &mut acc,
                    );
                }
            }
            acc
        })
        .collect();

    let mut splat_grads = vec![SplatGrad::default(); state.splats.len()];
    for (tile, grads) in per_tile.iter().enumerate() {
        for (g, &pos) in grads.iter().zip(&state.tiles[tile]) {
            splat_grads[pos as usize].add(g);
        }
    }

    let degree = settings.sh_degree_active.min(cloud.sh_degree());
    let per_splat: Vec<(usize, GaussianGrad)> = state
        .splats
        .par_iter()
        .zip(&splat_grads)
        .map(|(s, g)| (s.index, gaussian_backward(cloud, camera, degree, s, g)))
        .collect();

    let mut out = CloudGradients::zeros_like(cloud);
    let k = 3 * cloud.sh_per_channel();
    for (i, g) in per_splat {
        out.means[i] = g.mean;
        out.rotations[i] = g.rotation;
        out.log_scales[i] = g.log_scale;
        out.opacity_logits[i] = g.opacity_logit;
        out.sh_coeffs[i * k..(i + 1) * k].copy_from_slice(&g.sh);
        out.screen_means[i] = g.screen_mean;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn backward_pixel(
    x: usize,
    y: usize,
    list: &[u32],
    splats: &[Splat],
    settings: &RenderSettings,
    forward: &RenderOutput,
    g_rgb: &[f64],
    g_alpha: f64,
    g_normal: &[f64],
    acc: &mut [SplatGrad],
) {
    let pix = y * forward.rgb.width + x;
    let walked = forward.state.walked[pix] as usize;
    if walked == 0 {
        return;
    }
    let t_final = forward.state.final_transmittance[pix];
    let (fx, fy) = (x as f64, y as f64);
    let mut t = t_final;
    let mut behind_rgb = [0.0; 3];
    for c in 0..3 {
        behind_rgb[c] = settings.background[c] * t_final;
    }
    let mut behind_n = [0.0; 3];
    for j in (0..walked).rev() {
        let s = &splats[list[j] as usize];
        let Some((alpha, g, dx, dy, clamped)) = splat_alpha(s, fx, fy, settings.alpha_cutoff)
        else {
            continue;
        };
        let one_minus = 1.0 - alpha;
        t /= one_minus;
        let weight = alpha * t;
        let sg = &mut acc[j];
        let mut d_alpha = g_alpha * t_final / one_minus;
        for c in 0..3 {
            sg.color[c] += g_rgb[c] * weight;
            sg.normal[c] += g_normal[c] * weight;
            d_alpha += g_rgb[c] * (s.color[c] * t - behind_rgb[c] / one_minus);
            d_alpha += g_normal[c] * (s.normal[c] * t - behind_n[c] / one_minus);
            behind_rgb[c] += s.color[c] * weight;
            behind_n[c] += s.normal[c] * weight;
        }
        if clamped {
            continue;
        }
        sg.opacity += d_alpha * g;
        let d_power = d_alpha * alpha;
        let [a, b, c] = s.conic;
        sg.mean2d[0] += d_power * (a * dx + b * dy);
        sg.mean2d[1] += d_power * (b * dx + c * dy);
        sg.conic[0] += d_power * (-0.5 * dx * dx);
        sg.conic[1] += d_power * (-dx * dy);
        sg.conic[2] += d_power * (-0.5 * dy * dy);
    }
}

struct GaussianGrad {
    mean: [f64; 3],
    rotation: [f64; 4],
    log_scale: [f64; 3],
    opacity_logit: f64,
    sh: Vec<f64>,
    screen_mean: [f64; 2],
}

/// Chains screen-space gradients of one splat back to its cloud parameters.
fn gaussian_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    degree: usize,
    s: &Splat,
    g: &SplatGrad,
) -> GaussianGrad {
    let i = s.index;
    let k_full = cloud.sh_per_channel();
    let (q, _) = normalize_quat(&cloud.rotations[i]).expect("validated in forward");
    let r = rotation_from_unit_quat(&q);
    let ls = cloud.log_scales[i];
    let mean = cloud.mean(i);
    let w = camera.rotation;
    let p = camera.world_to_camera(&mean);

    let mut d_mean = Vector3::zeros();
    let mut d_r = Matrix3::zeros();

    // Opacity.
    let d_logit = g.opacity * s.opacity * (1.0 - s.opacity);

    // Color through the clamp, SH basis and view direction.
    let v = mean - camera.center();
    let vn = v.norm();
    let dir = v / vn;
    let sh_active = if degree == cloud.sh_degree() {
        cloud.sh(i).to_vec()
    } else {
        truncate_sh(cloud.sh(i), k_full, degree)
    };
    let raw = sh_to_color_raw(&sh_active, degree, &dir);
    let mut d_color = g.color;
    for c in 0..3 {
        if !(0.0..=1.0).contains(&raw[c]) {
            d_color[c] = 0.0;
        }
    }
    let k_act = (degree + 1) * (degree + 1);
    let mut d_sh_active = vec![0.0; 3 * k_act];
    let d_dir = sh_backward(&sh_active, degree, &dir, &d_color, &mut d_sh_active);
    d_mean += (d_dir - dir * dir.dot(&d_dir)) / vn;
    let mut d_sh = vec![0.0; 3 * k_full];
    for c in 0..3 {
        d_sh[c * k_full..c * k_full + k_act]
            .copy_from_slice(&d_sh_active[c * k_act..(c + 1) * k_act]);
    }

    // Normal: n_cam = W · sign · R[:, k].
    let (_, axis, sign) = normal_from_parts(&ls, &r, &dir);
    let d_n_world = w.transpose() * Vector3::from(g.normal);
    for row in 0..3 {
        d_r[(row, axis)] += sign * d_n_world[row];
    }

    // Conic -> 2D covariance -> 3D covariance and Jacobian.
    let [a, b, c] = s.conic;
    let inv = Matrix2::new(a, b, b, c);
    let d_inv = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let d_cov2d = -(inv * d_inv * inv);
    let j = perspective_jacobian(&p, camera);
    let t = j * w;
    let cov3d = covariance_from_parts(&ls, &r);
    let d_cov3d = t.transpose() * d_cov2d * t;
    let d_t = (d_cov2d + d_cov2d.transpose()) * t * cov3d;
    let d_j = d_t * w.transpose();
    let mut d_p = perspective_jacobian_backward(&p, camera, &d_j);

    // Projected mean.
    let iz = 1.0 / p.z;
    let [dmx, dmy] = g.mean2d;
    d_p.x += dmx * camera.fx * iz;
    d_p.y += dmy * camera.fy * iz;
    d_p.z -= (dmx * camera.fx * p.x + dmy * camera.fy * p.y) * iz * iz;
    d_mean += w.transpose() * d_p;

    let (d_ls, d_r_cov) = covariance_backward(&ls, &r, &d_cov3d);
    d_r += d_r_cov;
    let d_q = quat_backward(&cloud.rotations[i], &d_r).expect("validated in forward");

    GaussianGrad {
        mean: [d_mean.x, d_mean.y, d_mean.z],
        rotation: d_q,
        log_scale: d_ls,
        opacity_logit: d_logit,
        sh: d_sh,
        screen_mean: g.mean2d,
    }
}
