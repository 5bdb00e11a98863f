//! The articulated capsule figure used as template, subject and skeleton.
//!
//! Eight bones, one capsule each, about one unit tall and centered on the
//! origin with +y up. The template and the subject share joints and differ
//! only in limb thickness.

use nalgebra::Vector3;

use crate::anim::Skeleton;
use crate::error::Result;
use crate::mesh::TriMesh;

pub const BONE_NAMES: [&str; 8] = ["root", "spine", "neck", "head", "l_arm", "r_arm", "l_leg", "r_leg"];
pub const BONE_PARENTS: [Option<usize>; 8] = [None, Some(0), Some(1), Some(2), Some(1), Some(1), Some(0), Some(0)];

/// Thickness of the subject relative to the template.
pub const SUBJECT_RADIUS_SCALE: f64 = 1.2;

const AROUND: usize = 16;
const CAP_RINGS: usize = 4;
/// Fraction of a capsule, from its proximal end, that blends into the parent bone.
const BLEND_SPAN: f64 = 0.3;

struct Part {
    joint: [f64; 3],
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
    /// Base RGB of the part.
    color: [f64; 3],
}

const PARTS: [Part; 8] = [
    Part { joint: [0.0, -0.02, 0.0], a: [-0.07, -0.03, 0.0], b: [0.07, -0.03, 0.0], radius: 0.09, color: [0.20, 0.25, 0.55] },
    Part { joint: [0.0, 0.0, 0.0], a: [0.0, 0.04, 0.0], b: [0.0, 0.2, 0.0], radius: 0.12, color: [0.80, 0.30, 0.25] },
    Part { joint: [0.0, 0.29, 0.0], a: [0.0, 0.3, 0.0], b: [0.0, 0.34, 0.0], radius: 0.045, color: [0.90, 0.75, 0.60] },
    Part { joint: [0.0, 0.36, 0.0], a: [0.0, 0.42, 0.0], b: [0.0, 0.45, 0.0], radius: 0.08, color: [0.92, 0.78, 0.62] },
    Part { joint: [0.14, 0.27, 0.0], a: [0.17, 0.26, 0.0], b: [0.34, 0.02, 0.0], radius: 0.04, color: [0.85, 0.60, 0.20] },
    Part { joint: [-0.14, 0.27, 0.0], a: [-0.17, 0.26, 0.0], b: [-0.34, 0.02, 0.0], radius: 0.04, color: [0.20, 0.60, 0.35] },
    Part { joint: [0.07, -0.08, 0.0], a: [0.08, -0.12, 0.0], b: [0.09, -0.44, 0.0], radius: 0.055, color: [0.25, 0.30, 0.70] },
    Part { joint: [-0.07, -0.08, 0.0], a: [-0.08, -0.12, 0.0], b: [-0.09, -0.44, 0.0], radius: 0.055, color: [0.55, 0.25, 0.60] },
];

/// Mesh with per-vertex skinning weights and owning bone.
#[derive(Debug, Clone)]
pub struct Figure {
    pub mesh: TriMesh,
    pub weights: Vec<Vec<f64>>,
    pub vertex_bone: Vec<usize>,
}

pub fn skeleton() -> Skeleton {
    Skeleton::new(
        BONE_NAMES.iter().map(|s| s.to_string()).collect(),
        BONE_PARENTS.to_vec(),
        PARTS.iter().map(|p| p.joint).collect(),
    )
    .expect("figure skeleton is valid")
}

pub fn bone_color(bone: usize) -> [f64; 3] {
    PARTS[bone].color
}

/// The figure with every capsule radius multiplied by `radius_scale`.
pub fn capsule_figure(radius_scale: f64) -> Result<Figure> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut weights = Vec::new();
    let mut vertex_bone = Vec::new();
    for (bone, part) in PARTS.iter().enumerate() {
        let base = vertices.len();
        let (a, b) = (Vector3::from(part.a), Vector3::from(part.b));
        let pts = capsule(&a, &b, part.radius * radius_scale, &mut faces, base);
        let axis = b - a;
        for p in &pts {
            let s = ((p - a).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0);
            let mut w = vec![0.0; PARTS.len()];
            match BONE_PARENTS[bone] {
                Some(parent) => {
                    let wp = 0.5 * (1.0 - s / BLEND_SPAN).max(0.0);
                    w[parent] = wp;
                    w[bone] = 1.0 - wp;
                }
                None => w[bone] = 1.0,
            }
            weights.push(w);
            vertex_bone.push(bone);
            vertices.push([p.x, p.y, p.z]);
        }
    }
    Ok(Figure {
        mesh: TriMesh::new(vertices, faces)?,
        weights,
        vertex_bone,
    })
}

pub fn template_figure() -> Figure {
    capsule_figure(1.0).expect("template figure is valid")
}

pub fn subject_figure() -> Figure {
    capsule_figure(SUBJECT_RADIUS_SCALE).expect("subject figure is valid")
}

/// Capsule vertices from pole `a` to pole `b`; faces are appended with
/// outward winding, offset by `base`.
fn capsule(a: &Vector3<f64>, b: &Vector3<f64>, r: f64, faces: &mut Vec<[usize; 3]>, base: usize) -> Vec<Vector3<f64>> {
    let w = (b - a).normalize();
    let helper = if w.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = helper.cross(&w).normalize();
    let v = w.cross(&u);
    let half_pi = std::f64::consts::FRAC_PI_2;
    // (center, polar angle from the axis) per ring, pole to pole.
    let mut rings = Vec::new();
    for k in 1..=CAP_RINGS {
        let phi = half_pi * k as f64 / CAP_RINGS as f64;
        rings.push((a - w * r * phi.cos(), phi.sin()));
    }
    for k in (1..=CAP_RINGS).rev() {
        let phi = half_pi * k as f64 / CAP_RINGS as f64;
        rings.push((b + w * r * phi.cos(), phi.sin()));
    }
    let mut pts = vec![a - w * r];
    for (c, s) in &rings {
        for i in 0..AROUND {
            let alpha = std::f64::consts::TAU * i as f64 / AROUND as f64;
            pts.push(c + (u * alpha.cos() + v * alpha.sin()) * (r * s));
        }
    }
    pts.push(b + w * r);
    let ring = |k: usize, i: usize| base + 1 + k * AROUND + i % AROUND;
    let (south, north) = (base, base + pts.len() - 1);
    for i in 0..AROUND {
        faces.push([south, ring(0, i + 1), ring(0, i)]);
        for k in 0..rings.len() - 1 {
            faces.push([ring(k, i), ring(k, i + 1), ring(k + 1, i + 1)]);
            faces.push([ring(k, i), ring(k + 1, i + 1), ring(k + 1, i)]);
        }
        let last = rings.len() - 1;
        faces.push([ring(last, i), ring(last, i + 1), north]);
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capsules_are_closed_and_outward() {
        let fig = template_figure();
        let m = &fig.mesh;
        // Divergence theorem: each closed capsule has positive signed volume.
        let per = m.vertices.len() / 8;
        let mut vol = [0.0; 8];
        for f in m.faces() {
            let [p, q, r] = f.map(|i| m.vertex(i));
            vol[f[0] / per] += p.dot(&q.cross(&r)) / 6.0;
        }
        for (bone, v) in vol.iter().enumerate() {
            let part = &PARTS[bone];
            let len = (Vector3::from(part.b) - Vector3::from(part.a)).norm();
            let exact = std::f64::consts::PI * part.radius.powi(2) * (len + 4.0 / 3.0 * part.radius);
            assert!(*v > 0.8 * exact && *v < exact, "bone {bone}: {v} vs {exact}");
        }
    }

    #[test]
    fn weights_are_convex_and_unit_height() {
        let fig = subject_figure();
        for w in &fig.weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|v| *v >= 0.0));
        }
        let (lo, hi) = fig.mesh.bounds();
        assert!((hi[1] - lo[1] - 1.0).abs() < 0.1, "{lo:?} {hi:?}");
        assert_eq!(skeleton().len(), 8);
    }
}
