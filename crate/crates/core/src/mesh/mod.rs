//! Coarse-shape initialization: a template mesh is deformed to fit multi-view
//! masks and normals, then its surface seeds the Gaussian cloud.

mod fit;
mod obj;
mod regularize;
mod sample;
mod silhouette;

pub use fit::{fit_coarse_mesh, MeshFitConfig, MeshFitWeights};
pub use obj::{parse_obj, read_obj, write_obj};
pub use regularize::{
    edge_backward, edge_loss, laplacian_backward, laplacian_loss, laplacian_offset_backward, laplacian_offset_loss,
};
pub use sample::{init_gaussians, sample_surface_points, INIT_OPACITY};
pub use silhouette::{silhouette_backward, silhouette_render, SilhouetteOutput};

use std::collections::BTreeSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Minimum face area accepted at construction.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Triangle mesh with fixed topology. Rest edge lengths are captured when the
/// mesh is built and survive vertex updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    rest_edge_lengths: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mesh has a non-finite vertex".into()));
        }
        for (k, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= nv) {
                return Err(Error::InvalidInput(format!(
                    "face {k} references a vertex beyond {nv}"
                )));
            }
        }
        let mut edge_set = BTreeSet::new();
        let mut nbr: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nv];
        for f in &faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_set.insert([a.min(b), a.max(b)]);
                nbr[a].insert(b);
                nbr[b].insert(a);
            }
        }
        let edges: Vec<[usize; 2]> = edge_set.into_iter().collect();
        let mut mesh = Self {
            vertices,
            faces,
            edges,
            rest_edge_lengths: Vec::new(),
            neighbors: nbr.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        for k in 0..mesh.faces.len() {
            if !(mesh.face_area(k) > MIN_FACE_AREA) {
                return Err(Error::InvalidInput(format!("face {k} is degenerate")));
            }
        }
        mesh.rest_edge_lengths = mesh.edges.iter().map(|&[a, b]| mesh.edge_length(a, b)).collect();
        Ok(mesh)
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Unique undirected edges, `[low, high]`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn rest_edge_lengths(&self) -> &[f64] {
        &self.rest_edge_lengths
    }

    /// One-ring of vertex `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Same topology and rest lengths with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<[f64; 3]>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Contract(format!(
                "{} vertices given for a mesh with {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    /// Copy whose current geometry becomes the rest state.
    pub fn rebased(&self) -> Result<Self> {
        Self::new(self.vertices.clone(), self.faces.clone())
    }

    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.vertices[i])
    }

    fn edge_length(&self, a: usize, b: usize) -> f64 {
        (self.vertex(a) - self.vertex(b)).norm()
    }

    /// Unnormalized `(b - a) × (c - a)`.
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f].map(|i| self.vertex(i));
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    /// Unit normal by the right-hand rule on the face's winding.
    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        self.face_cross(f).normalize()
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.vertices.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidState(format!("vertex {i} is not finite"))),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Closed octahedron of circumradius `r`, outward winding.
    pub(crate) fn octahedron(r: f64) -> TriMesh {
        let v = vec![
            [r, 0.0, 0.0],
            [-r, 0.0, 0.0],
            [0.0, r, 0.0],
            [0.0, -r, 0.0],
            [0.0, 0.0, r],
            [0.0, 0.0, -r],
        ];
        let f = vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ];
        TriMesh::new(v, f).unwrap()
    }

    #[test]
    fn topology() {
        let m = octahedron(1.0);
        assert_eq!(m.edges().len(), 12);
        assert_eq!(m.neighbors(4), &[0, 1, 2, 3]);
        for f in 0..8 {
            let c: Vector3<f64> = m.faces()[f].iter().map(|&i| m.vertex(i)).sum::<Vector3<f64>>() / 3.0;
            assert!(m.face_normal(f).dot(&c) > 0.0, "face {f} winds inward");
        }
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 2]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn rest_lengths_survive_updates() {
        let m = octahedron(1.0);
        let moved = m.with_vertices(m.vertices.iter().map(|v| v.map(|x| 2.0 * x)).collect()).unwrap();
        assert_eq!(moved.rest_edge_lengths(), m.rest_edge_lengths());
        assert!((moved.rebased().unwrap().rest_edge_lengths()[0] - 2.0 * m.rest_edge_lengths()[0]).abs() < 1e-12);
    }
}
