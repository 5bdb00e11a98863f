use nalgebra::Vector3;
use rayon::prelude::*;

use super::project::project_gaussian;
use super::{
    fingerprint, ForwardState, RenderOutput, RenderSettings, Splat, MAX_SPLAT_ALPHA,
    MIN_TRANSMITTANCE,
};
use crate::error::Result;
use crate::gaussian::{
    covariance_from_parts, normal_from_parts, normalize_quat, rotation_from_unit_quat, sigmoid,
    sh_to_color, Camera, GaussianCloud,
};
use crate::image::Image;

/// Projects, shades and depth-sorts every visible Gaussian.
pub(crate) fn prepare_splats(
    cloud: &GaussianCloud,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<Vec<Splat>> {
    settings.validate()?;
    camera.validate()?;
    for i in 0..cloud.len() {
        cloud.check_finite(i)?;
    }
    let degree = settings.sh_degree_active.min(cloud.sh_degree());
    let center = camera.center();
    let splats: Vec<Option<Splat>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| -> Result<Option<Splat>> {
            let (q, _) = normalize_quat(&cloud.rotations[i])?;
            let r = rotation_from_unit_quat(&q);
            let cov3d = covariance_from_parts(&cloud.log_scales[i], &r);
            let mean = cloud.mean(i);
            let Some(proj) = project_gaussian(&mean, &cov3d, camera) else {
                return Ok(None);
            };
            let cov = proj.cov2d;
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            if !(det > 0.0) {
                return Ok(None);
            }
            let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
            let opacity = sigmoid(cloud.opacity_logits[i]);
            let view_dir = (mean - center).normalize();
            let color = sh_to_color_at_degree(cloud, i, degree, &view_dir);
            let (n_world, _, _) = normal_from_parts(&cloud.log_scales[i], &r, &view_dir);
            let n_cam: Vector3<f64> = camera.rotation * n_world;
            Ok(Some(Splat {
                index: i,
                mean2d: [proj.mean2d.x, proj.mean2d.y],
                conic,
                opacity,
                depth: proj.depth,
                color,
                normal: [n_cam.x, n_cam.y, n_cam.z],
                radius: footprint_radius(cov[(0, 0)], cov[(0, 1)], cov[(1, 1)], opacity, settings),
                // Slack keeps borderline cases on the exact path below.
                power_floor: (settings.alpha_cutoff / opacity).ln() - 1e-6,
            }))
        })
        .collect::<Result<_>>()?;
    let mut splats: Vec<Splat> = splats.into_iter().flatten().collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    Ok(splats)
}

pub(crate) fn sh_to_color_at_degree(
    cloud: &GaussianCloud,
    i: usize,
    degree: usize,
    view_dir: &Vector3<f64>,
) -> [f64; 3] {
    if degree == cloud.sh_degree() {
        return sh_to_color(cloud.sh(i), degree, view_dir);
    }
    sh_to_color(&truncate_sh(cloud.sh(i), cloud.sh_per_channel(), degree), degree, view_dir)
}

pub(crate) fn truncate_sh(sh: &[f64], per_channel: usize, degree: usize) -> Vec<f64> {
    let k = (degree + 1) * (degree + 1);
    (0..3)
        .flat_map(|c| sh[c * per_channel..c * per_channel + k].iter().copied())
        .collect()
}

/// Half-width of a screen box outside of which the splat's alpha is provably
/// below the cutoff: at least `extent_sigmas` standard deviations along the
/// major axis, and far enough that `opacity·exp(-m²/2) < cutoff`.
fn footprint_radius(a: f64, b: f64, c: f64, opacity: f64, settings: &RenderSettings) -> f64 {
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let mut sigmas = settings.gaussian_extent_sigmas;
    if opacity > settings.alpha_cutoff {
        sigmas = sigmas.max((2.0 * (opacity / settings.alpha_cutoff).ln()).sqrt());
    }
    lambda_max.sqrt() * sigmas * (1.0 + 1e-9) + 1e-9
}

pub(crate) struct PixelResult {
    pub rgb: [f64; 3],
    pub normal: [f64; 3],
    pub depth: f64,
    pub transmittance: f64,
    pub walked: u32,
    pub count: u32,
}

/// Splat alpha at pixel `(px, py)`, or `None` when it is below the cutoff.
/// Also returns `exp(power)` and whether the `MAX_SPLAT_ALPHA` clamp was hit.
#[inline]
pub(crate) fn splat_alpha(s: &Splat, px: f64, py: f64, cutoff: f64) -> Option<(f64, f64, f64, f64, bool)> {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power > 0.0 || power < s.power_floor {
        return None;
    }
    let g = power.exp();
    let raw = s.opacity * g;
    let clamped = raw > MAX_SPLAT_ALPHA;
    let alpha = if clamped { MAX_SPLAT_ALPHA } else { raw };
    if alpha < cutoff {
        return None;
    }
    Some((alpha, g, dx, dy, clamped))
}

/// Front-to-back compositing of `order` (positions into `splats`) at one pixel.
#[inline]
pub(crate) fn composite_pixel(
    px: usize,
    py: usize,
    order: impl Iterator<Item = usize>,
    splats: &[Splat],
    settings: &RenderSettings,
) -> PixelResult {
    let (fx, fy) = (px as f64, py as f64);
    let mut t = 1.0;
    let mut rgb = [0.0; 3];
    let mut normal = [0.0; 3];
    let mut depth = 0.0;
    let mut walked = 0;
    let mut count = 0;
    for (j, pos) in order.enumerate() {
        let s = &splats[pos];
        let Some((alpha, ..)) = splat_alpha(s, fx, fy, settings.alpha_cutoff) else {
            continue;
        };
        let w = alpha * t;
        for c in 0..3 {
            rgb[c] += s.color[c] * w;
            normal[c] += s.normal[c] * w;
        }
        depth += s.depth * w;
        t *= 1.0 - alpha;
        count += 1;
        walked = j as u32 + 1;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    for c in 0..3 {
        rgb[c] += settings.background[c] * t;
    }
    let acc = 1.0 - t;
    PixelResult {
        rgb,
        normal,
        depth: if acc > 1e-6 { depth / acc } else { 0.0 },
        transmittance: t,
        walked,
        count,
    }
}

fn write_pixel(out: &mut RenderOutput, x: usize, y: usize, p: &PixelResult) {
    out.rgb.pixel_mut(x, y).copy_from_slice(&p.rgb);
    out.normal.pixel_mut(x, y).copy_from_slice(&p.normal);
    out.alpha.pixel_mut(x, y)[0] = 1.0 - p.transmittance;
    out.depth.pixel_mut(x, y)[0] = p.depth;
    let i = y * out.rgb.width + x;
    out.contrib_count[i] = p.count;
    out.state.final_transmittance[i] = p.transmittance;
    out.state.walked[i] = p.walked;
}

fn empty_output(camera: &Camera, state: ForwardState) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    RenderOutput {
        rgb: Image::new(w, h, 3),
        alpha: Image::new(w, h, 1),
        normal: Image::new(w, h, 3),
        depth: Image::new(w, h, 1),
        contrib_count: vec![0; w * h],
        state,
    }
}

/// Tiled forward rasterization.
///
/// Visible Gaussians are sorted globally by camera depth (ties by index) and
/// binned into tiles by a conservative screen box; every pixel then composites
/// its tile's list front to back.
pub fn render(
    cloud: &GaussianCloud,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    let splats = prepare_splats(cloud, camera, settings)?;
    let (w, h) = (camera.width, camera.height);
    let ts = settings.tile_size;
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (pos, s) in splats.iter().enumerate() {
        if s.opacity < settings.alpha_cutoff {
            continue;
        }
        let x0 = (s.mean2d[0] - s.radius).ceil().max(0.0);
        let x1 = (s.mean2d[0] + s.radius).floor().min((w - 1) as f64);
        let y0 = (s.mean2d[1] - s.radius).ceil().max(0.0);
        let y1 = (s.mean2d[1] + s.radius).floor().min((h - 1) as f64);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / ts, x1 as usize / ts);
        let (ty0, ty1) = (y0 as usize / ts, y1 as usize / ts);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(pos as u32);
            }
        }
    }

    let state = ForwardState {
        fingerprint: fingerprint(cloud, camera, settings),
        splats,
        tiles,
        tiles_x,
        final_transmittance: vec![1.0; w * h],
        walked: vec![0; w * h],
    };
    let per_tile: Vec<Vec<(usize, usize, PixelResult)>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let list = &state.tiles[tile];
            let mut px_out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let p = composite_pixel(
                        x,
                        y,
                        list.iter().map(|&p| p as usize),
                        &state.splats,
                        settings,
                    );
                    px_out.push((x, y, p));
                }
            }
            px_out
        })
        .collect();
    let mut out = empty_output(camera, state);
    for tile in per_tile {
        for (x, y, p) in tile {
            write_pixel(&mut out, x, y, &p);
        }
    }
    Ok(out)
}

/// Brute-force reference: every pixel walks every depth-sorted splat, with no
/// tiling or bounding boxes. Agrees with [`render`] exactly.
pub fn render_reference(
    cloud: &GaussianCloud,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    let splats = prepare_splats(cloud, camera, settings)?;
    let (w, h) = (camera.width, camera.height);
    let state = ForwardState {
        fingerprint: fingerprint(cloud, camera, settings),
        splats,
        tiles: Vec::new(),
        tiles_x: 0,
        final_transmittance: vec![1.0; w * h],
        walked: vec![0; w * h],
    };
    let mut out = empty_output(camera, state);
    for y in 0..h {
        for x in 0..w {
            let p = composite_pixel(x, y, 0..out.state.splats.len(), &out.state.splats, settings);
            write_pixel(&mut out, x, y, &p);
        }
    }
    // The reference walks a different list; the backward pass only accepts tiled outputs.
    out.state.fingerprint = !out.state.fingerprint;
    Ok(out)
}
