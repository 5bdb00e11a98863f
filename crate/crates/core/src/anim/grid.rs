use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::spatial::PointIndex;

/// Skinning weights on a regular voxel grid over an axis-aligned box.
///
/// Voxel `(i, j, k)` is centered at `min + (i + ½, j + ½, k + ½) · cell`.
/// Weights are stored in single precision, bone-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningGrid {
    resolution: usize,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    n_bones: usize,
    weights: Vec<f32>,
}

impl SkinningGrid {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn n_bones(&self) -> usize {
        self.n_bones
    }

    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        (self.bbox_min, self.bbox_max)
    }

    pub fn cell_size(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.bbox_max[a] - self.bbox_min[a]) / self.resolution as f64)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let h = self.cell_size();
        Vector3::new(
            self.bbox_min[0] + (i as f64 + 0.5) * h[0],
            self.bbox_min[1] + (j as f64 + 0.5) * h[1],
            self.bbox_min[2] + (k as f64 + 0.5) * h[2],
        )
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        ((k * self.resolution + j) * self.resolution + i) * self.n_bones
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> &[f32] {
        let o = self.offset(i, j, k);
        &self.weights[o..o + self.n_bones]
    }

    /// Largest per-voxel violation of convexity: `max(|Σw − 1|, −min w)`.
    pub fn convexity_error(&self) -> f64 {
        self.weights
            .chunks_exact(self.n_bones)
            .map(|w| {
                let sum: f64 = w.iter().map(|v| *v as f64).sum();
                let neg = w.iter().map(|v| -(*v as f64)).fold(0.0, f64::max);
                (sum - 1.0).abs().max(neg)
            })
            .fold(0.0, f64::max)
    }

    /// Trilinear weights at `p`, renormalized to sum to one. Points outside
    /// the box read the boundary voxels.
    pub fn query_weights(&self, p: &Vector3<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bones];
        self.query_into(p, &mut out);
        out
    }

    pub fn query_into(&self, p: &Vector3<f64>, out: &mut [f64]) {
        let h = self.cell_size();
        let r = self.resolution;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = ((p[a] - self.bbox_min[a]) / h[a] - 0.5).clamp(0.0, (r - 1) as f64);
            let u = if u.is_finite() { u } else { 0.0 };
            let i0 = (u.floor() as usize).min(r.saturating_sub(2));
            base[a] = i0;
            frac[a] = if r > 1 { u - i0 as f64 } else { 0.0 };
        }
        out.fill(0.0);
        for corner in 0..8 {
            let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                w *= if d[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                idx[a] = (base[a] + d[a]).min(r - 1);
            }
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.voxel(idx[0], idx[1], idx[2])) {
                *o += w * *v as f64;
            }
        }
        let sum: f64 = out.iter().sum();
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
}

/// Diffuses per-vertex skinning weights into a voxel grid.
///
/// Every voxel starts with the weights of its nearest template vertex. Voxels
/// within one voxel diagonal of the surface keep those weights; the rest are
/// relaxed by `smoothing_iters` Jacobi sweeps of 6-neighbor averaging.
pub fn build_skinning_grid(
    template: &TriMesh,
    vertex_weights: &[Vec<f64>],
    bbox: ([f64; 3], [f64; 3]),
    resolution: usize,
    smoothing_iters: usize,
) -> Result<SkinningGrid> {
    let (lo, hi) = bbox;
    if resolution < 2 {
        return Err(Error::InvalidParameter("skinning grid resolution must be at least 2".into()));
    }
    if vertex_weights.len() != template.vertices.len() {
        return Err(Error::InvalidInput(format!(
            "{} weight rows for {} vertices",
            vertex_weights.len(),
            template.vertices.len()
        )));
    }
    let n_bones = vertex_weights.first().map_or(0, Vec::len);
    if n_bones == 0 {
        return Err(Error::InvalidInput("skinning weights have no bones".into()));
    }
    for (v, w) in vertex_weights.iter().enumerate() {
        let sum: f64 = w.iter().sum();
        if w.len() != n_bones || w.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("vertex {v} weights are not a convex combination")));
        }
    }
    let (mlo, mhi) = template.bounds();
    for a in 0..3 {
        if !(lo[a] < hi[a]) || mlo[a] < lo[a] || mhi[a] > hi[a] {
            return Err(Error::InvalidInput(format!(
                "bbox {lo:?}..{hi:?} does not contain the mesh ({mlo:?}..{mhi:?})"
            )));
        }
    }

    let mut grid = SkinningGrid {
        resolution,
        bbox_min: lo,
        bbox_max: hi,
        n_bones,
        weights: vec![0.0; resolution * resolution * resolution * n_bones],
    };
    let r = resolution;
    let index = PointIndex::new(&template.vertices);
    let slab = r * r * n_bones;
    let centers = |i, j, k| grid.voxel_center(i, j, k);
    let init: Vec<Vec<f32>> = (0..r)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::with_capacity(slab);
            for j in 0..r {
                for i in 0..r {
                    let c = centers(i, j, k);
                    let (v, _) = index.nearest(&[c.x, c.y, c.z], 1, None)[0];
                    out.extend(vertex_weights[v].iter().map(|w| *w as f32));
                }
            }
            out
        })
        .collect();
    grid.weights = init.concat();

    if smoothing_iters > 0 {
        let clamped = surface_voxels(template, &grid);
        let mut next = grid.weights.clone();
        for _ in 0..smoothing_iters {
            jacobi_sweep(&grid.weights, &mut next, &clamped, r, n_bones);
            std::mem::swap(&mut grid.weights, &mut next);
        }
    }
    for w in grid.weights.chunks_exact_mut(n_bones) {
        let sum: f64 = w.iter().map(|v| v.max(0.0) as f64).sum();
        for v in w.iter_mut() {
            *v = (v.max(0.0) as f64 / sum) as f32;
        }
    }
    Ok(grid)
}

fn jacobi_sweep(src: &[f32], dst: &mut [f32], clamped: &[bool], r: usize, nb: usize) {
    dst.par_chunks_mut(r * r * nb).enumerate().for_each(|(k, slab)| {
        let mut acc = vec![0.0f64; nb];
        for j in 0..r {
            for i in 0..r {
                let cell = (k * r + j) * r + i;
                let local = (j * r + i) * nb;
                if clamped[cell] {
                    slab[local..local + nb].copy_from_slice(&src[cell * nb..cell * nb + nb]);
                    continue;
                }
                acc.fill(0.0);
                let mut count = 0.0;
                let mut add = |c: usize| {
                    for (a, v) in acc.iter_mut().zip(&src[c * nb..c * nb + nb]) {
                        *a += *v as f64;
                    }
                    count += 1.0;
                };
                if i > 0 {
                    add(cell - 1);
                }
                if i + 1 < r {
                    add(cell + 1);
                }
                if j > 0 {
                    add(cell - r);
                }
                if j + 1 < r {
                    add(cell + r);
                }
                if k > 0 {
                    add(cell - r * r);
                }
                if k + 1 < r {
                    add(cell + r * r);
                }
                for (d, a) in slab[local..local + nb].iter_mut().zip(&acc) {
                    *d = (a / count) as f32;
                }
            }
        }
    });
}

/// Voxels whose center lies within one voxel diagonal of some face.
fn surface_voxels(mesh: &TriMesh, grid: &SkinningGrid) -> Vec<bool> {
    let r = grid.resolution;
    let h = grid.cell_size();
    let reach = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    let mut clamped = vec![false; r * r * r];
    for f in mesh.faces() {
        let tri = f.map(|v| mesh.vertex(v));
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let lo = tri.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min) - reach;
            let hi = tri.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max) + reach;
            let to_idx = |x: f64| ((x - grid.bbox_min[a]) / h[a] - 0.5).clamp(0.0, (r - 1) as f64);
            range[a] = (to_idx(lo).floor() as usize, to_idx(hi).ceil() as usize);
        }
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let cell = (k * r + j) * r + i;
                    if clamped[cell] {
                        continue;
                    }
                    let c = grid.voxel_center(i, j, k);
                    if (closest_point_on_triangle(&c, &tri) - c).norm() <= reach {
                        clamped[cell] = true;
                    }
                }
            }
        }
    }
    clamped
}

/// Closest point to `p` on triangle `t` (Voronoi-region walk).
pub(crate) fn closest_point_on_triangle(p: &Vector3<f64>, t: &[Vector3<f64>; 3]) -> Vector3<f64> {
    let (a, b, c) = (t[0], t[1], t[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}
