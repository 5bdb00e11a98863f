//! Soft silhouette and normal rendering of a triangle mesh.
//!
//! Each camera-facing triangle contributes `sigmoid(s·d)` at a pixel, where
//! `d` is the signed distance in pixels to the projected triangle (positive
//! inside). Contributions combine by
//! probabilistic union. The normal map holds the camera-space normal of the
//! nearest covering triangle times the coverage.

use nalgebra::{Matrix2x3, Vector2, Vector3};

use super::TriMesh;
use crate::error::Result;
use crate::gaussian::Camera;
use crate::image::Image;

/// Contributions below this are dropped, which bounds each triangle's footprint.
const MIN_CONTRIBUTION: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SilhouetteOutput {
    /// Soft coverage in `[0, 1]`.
    pub mask: Image,
    /// Coverage-weighted camera-space normals.
    pub normal: Image,
    faces: Vec<ProjectedFace>,
    /// Per pixel: `Σ log(1 - σ)` over contributing faces.
    log_keep: Vec<f64>,
    /// Per pixel: index into `faces` of the nearest covering triangle.
    owner: Vec<Option<u32>>,
}

#[derive(Debug, Clone)]
struct ProjectedFace {
    face: usize,
    /// Screen positions in pixels.
    screen: [Vector2<f64>; 3],
    /// Camera-space positions.
    cam: [Vector3<f64>; 3],
    /// Sign of the screen-space winding.
    orient: f64,
    normal_cam: Vector3<f64>,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Signed distance (pixels) from `q` to the triangle plus its gradient with
/// respect to the three screen vertices.
fn signed_distance(q: &Vector2<f64>, s: &[Vector2<f64>; 3], orient: f64) -> (f64, [Vector2<f64>; 3]) {
    let mut best = f64::INFINITY;
    let mut grad = [Vector2::zeros(); 3];
    let mut inside = true;
    for k in 0..3 {
        let (a, b) = (s[k], s[(k + 1) % 3]);
        let e = b - a;
        let rel = q - a;
        if orient * (e.x * rel.y - e.y * rel.x) < 0.0 {
            inside = false;
        }
        let len2 = e.norm_squared();
        let t = if len2 > 0.0 { (rel.dot(&e) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let diff = rel - e * t;
        let dist = diff.norm();
        if dist < best {
            best = dist;
            let unit = if dist > 0.0 { diff / dist } else { Vector2::zeros() };
            grad = [Vector2::zeros(); 3];
            grad[k] = -unit * (1.0 - t);
            grad[(k + 1) % 3] = -unit * t;
        }
    }
    if inside {
        (best, grad)
    } else {
        for g in &mut grad {
            *g = -*g;
        }
        (-best, grad)
    }
}

/// Barycentric coordinates of `q` in the screen triangle.
fn barycentric(q: &Vector2<f64>, s: &[Vector2<f64>; 3]) -> [f64; 3] {
    let (a, b, c) = (s[0], s[1], s[2]);
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    let l1 = ((q.x - a.x) * (c.y - a.y) - (c.x - a.x) * (q.y - a.y)) / det;
    let l2 = ((b.x - a.x) * (q.y - a.y) - (q.x - a.x) * (b.y - a.y)) / det;
    [1.0 - l1 - l2, l1, l2]
}

fn log_one_minus_sigmoid(x: f64) -> f64 {
    // log(1 - σ(x)) = -softplus(x)
    -(x.max(0.0) + (-x.abs()).exp().ln_1p())
}

fn sigmoid(x: f64) -> f64 {
    crate::gaussian::sigmoid(x)
}

fn project_faces(mesh: &TriMesh, camera: &Camera, reach_px: f64) -> Vec<ProjectedFace> {
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut out = Vec::new();
    for (f, face) in mesh.faces().iter().enumerate() {
        let cam = face.map(|i| camera.world_to_camera(&mesh.vertex(i)));
        if cam.iter().any(|p| p.z <= camera.near) {
            continue;
        }
        let n = (cam[1] - cam[0]).cross(&(cam[2] - cam[0]));
        let centroid = (cam[0] + cam[1] + cam[2]) / 3.0;
        if !(n.dot(&centroid) < 0.0) {
            continue;
        }
        let screen = cam.map(|p| {
            Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy)
        });
        let area2 = (screen[1] - screen[0]).perp(&(screen[2] - screen[0]));
        if area2 == 0.0 {
            continue;
        }
        let min_x = screen.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - reach_px;
        let max_x = screen.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + reach_px;
        let min_y = screen.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - reach_px;
        let max_y = screen.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + reach_px;
        if max_x < 0.0 || max_y < 0.0 || min_x > w - 1.0 || min_y > h - 1.0 {
            continue;
        }
        out.push(ProjectedFace {
            face: f,
            screen,
            cam,
            orient: area2.signum(),
            normal_cam: n.normalize(),
            x0: min_x.max(0.0).ceil() as usize,
            x1: max_x.min(w - 1.0).floor() as usize,
            y0: min_y.max(0.0).ceil() as usize,
            y1: max_y.min(h - 1.0).floor() as usize,
        });
    }
    out
}

/// Pixels beyond which `sigmoid(s·d)` drops under [`MIN_CONTRIBUTION`].
fn reach(sharpness: f64) -> f64 {
    (1.0 / MIN_CONTRIBUTION).ln() / sharpness
}

/// Soft coverage and normal map of `mesh` seen from `camera`. Faces pointing
/// away from the camera or crossing the near plane are skipped.
pub fn silhouette_render(mesh: &TriMesh, camera: &Camera, sharpness: f64) -> Result<SilhouetteOutput> {
    camera.validate()?;
    mesh.check_finite()?;
    if !(sharpness > 0.0) {
        return Err(crate::Error::InvalidParameter("sharpness must be positive".into()));
    }
    let (w, h) = (camera.width, camera.height);
    let faces = project_faces(mesh, camera, reach(sharpness));
    let mut log_keep = vec![0.0; w * h];
    let mut owner: Vec<Option<u32>> = vec![None; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];
    for (k, pf) in faces.iter().enumerate() {
        for y in pf.y0..=pf.y1 {
            for x in pf.x0..=pf.x1 {
                let q = Vector2::new(x as f64, y as f64);
                let (d, _) = signed_distance(&q, &pf.screen, pf.orient);
                let arg = sharpness * d;
                if sigmoid(arg) < MIN_CONTRIBUTION {
                    continue;
                }
                let p = y * w + x;
                log_keep[p] += log_one_minus_sigmoid(arg);
                if d > 0.0 {
                    let b = barycentric(&q, &pf.screen);
                    let inv_z: f64 = (0..3).map(|i| b[i] / pf.cam[i].z).sum();
                    let z = 1.0 / inv_z;
                    if z < zbuf[p] {
                        zbuf[p] = z;
                        owner[p] = Some(k as u32);
                    }
                }
            }
        }
    }
    let mut mask = Image::new(w, h, 1);
    let mut normal = Image::new(w, h, 3);
    for p in 0..w * h {
        let c = -log_keep[p].exp_m1();
        mask.data[p] = c;
        if let Some(k) = owner[p] {
            let n = faces[k as usize].normal_cam;
            for a in 0..3 {
                normal.data[3 * p + a] = c * n[a];
            }
        }
    }
    Ok(SilhouetteOutput {
        mask,
        normal,
        faces,
        log_keep,
        owner,
    })
}

/// Vertex gradients of `Σ grad_mask·mask + Σ grad_normal·normal`. `out` must
/// come from [`silhouette_render`] with the same arguments.
pub fn silhouette_backward(
    mesh: &TriMesh,
    camera: &Camera,
    sharpness: f64,
    out: &SilhouetteOutput,
    grad_mask: &Image,
    grad_normal: &Image,
) -> Result<Vec<[f64; 3]>> {
    let (w, h) = (camera.width, camera.height);
    grad_mask.expect_shape("grad_mask", w, h, 1)?;
    grad_normal.expect_shape("grad_normal", w, h, 3)?;
    out.mask.expect_shape("silhouette output", w, h, 1)?;
    let mut g_screen = vec![[Vector2::<f64>::zeros(); 3]; out.faces.len()];
    let mut g_normal = vec![Vector3::<f64>::zeros(); out.faces.len()];

    // dL/dC per pixel, and the owner's normal gradient.
    let mut g_cov = vec![0.0; w * h];
    for p in 0..w * h {
        let mut g = grad_mask.data[p];
        if let Some(k) = out.owner[p] {
            let n = out.faces[k as usize].normal_cam;
            let gn = Vector3::new(grad_normal.data[3 * p], grad_normal.data[3 * p + 1], grad_normal.data[3 * p + 2]);
            g += gn.dot(&n);
            g_normal[k as usize] += gn * out.mask.data[p];
        }
        g_cov[p] = g;
    }

    for (k, pf) in out.faces.iter().enumerate() {
        for y in pf.y0..=pf.y1 {
            for x in pf.x0..=pf.x1 {
                let p = y * w + x;
                if g_cov[p] == 0.0 {
                    continue;
                }
                let q = Vector2::new(x as f64, y as f64);
                let (d, dd) = signed_distance(&q, &pf.screen, pf.orient);
                let arg = sharpness * d;
                let s = sigmoid(arg);
                if s < MIN_CONTRIBUTION {
                    continue;
                }
                // ∂C/∂arg = σ(arg) · Π_{other}(1 - σ) = σ(arg) · (1 - C) / (1 - σ(arg))
                let keep_others = (out.log_keep[p] - log_one_minus_sigmoid(arg)).exp();
                let g_arg = g_cov[p] * s * (1.0 - s) * keep_others;
                let g_d = g_arg * sharpness;
                for i in 0..3 {
                    g_screen[k][i] += dd[i] * g_d;
                }
            }
        }
    }

    let r = camera.rotation;
    let mut grads = vec![[0.0; 3]; mesh.vertices.len()];
    for (k, pf) in out.faces.iter().enumerate() {
        let mut g_cam = [Vector3::<f64>::zeros(); 3];
        for i in 0..3 {
            let p = pf.cam[i];
            let iz = 1.0 / p.z;
            let jac = Matrix2x3::new(
                camera.fx * iz,
                0.0,
                -camera.fx * p.x * iz * iz,
                0.0,
                camera.fy * iz,
                -camera.fy * p.y * iz * iz,
            );
            g_cam[i] += jac.transpose() * g_screen[k][i];
        }
        if g_normal[k] != Vector3::zeros() {
            let u = pf.cam[1] - pf.cam[0];
            let v = pf.cam[2] - pf.cam[0];
            let m = u.cross(&v);
            let n = m / m.norm();
            let gm = (g_normal[k] - n * n.dot(&g_normal[k])) / m.norm();
            let gu = v.cross(&gm);
            let gv = gm.cross(&u);
            g_cam[1] += gu;
            g_cam[2] += gv;
            g_cam[0] -= gu + gv;
        }
        let face = mesh.faces()[pf.face];
        for i in 0..3 {
            let gw = r.transpose() * g_cam[i];
            for a in 0..3 {
                grads[face[i]][a] += gw[a];
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::audit_camera;
    use crate::mesh::tests::octahedron;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn facing_triangle_covers_center() {
        let cam = audit_camera(33);
        // camera at z = -4 looking +z; this winding faces it
        let m = TriMesh::new(
            vec![[-3.0, -3.0, 0.0], [0.0, 3.0, 0.0], [3.0, -3.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let out = silhouette_render(&m, &cam, 30.0).unwrap();
        assert!(out.mask.at(16, 16, 0) > 0.999);
        let n = out.normal.pixel(16, 16);
        assert!((n[2] + 1.0).abs() < 1e-3 && n[0].abs() < 1e-9 && n[1].abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_empty() {
        let cam = audit_camera(16);
        let mut m = octahedron(0.5);
        for v in &mut m.vertices {
            v[2] -= 10.0;
        }
        let out = silhouette_render(&m, &cam, 30.0).unwrap();
        assert!(out.mask.data.iter().all(|&v| v == 0.0));
        assert!(out.normal.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertex_gradients_match_fd() {
        let cam = audit_camera(24);
        let mut m = octahedron(0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in &mut m.vertices {
            for x in v.iter_mut() {
                *x += rng.gen_range(-0.15..0.15);
            }
        }
        let sharp = 8.0;
        let gm = Image::from_vec(24, 24, 1, (0..576).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let gn = Image::from_vec(24, 24, 3, (0..1728).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let loss = |mesh: &TriMesh| {
            let o = silhouette_render(mesh, &cam, sharp).unwrap();
            o.mask.data.iter().zip(&gm.data).map(|(a, b)| a * b).sum::<f64>()
                + o.normal.data.iter().zip(&gn.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let out = silhouette_render(&m, &cam, sharp).unwrap();
        let g = silhouette_backward(&m, &cam, sharp, &out, &gm, &gn).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..m.vertices.len() {
            for a in 0..3 {
                let mut p = m.clone();
                p.vertices[i][a] += h;
                let plus = loss(&p);
                p.vertices[i][a] -= 2.0 * h;
                let minus = loss(&p);
                let numeric = (plus - minus) / (2.0 * h);
                let err = (numeric - g[i][a]).abs() / numeric.abs().max(g[i][a].abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
        // owner switches and the distance kinks make a few pixels non-smooth
        assert!(worst < 2e-2, "worst relative error {worst}");
    }
}
