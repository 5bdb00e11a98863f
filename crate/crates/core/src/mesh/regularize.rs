use super::TriMesh;

/// Uniform Laplacian of vertex `i` over `vertices`: the vertex minus the mean of its one-ring.
fn laplacian(mesh: &TriMesh, vertices: &[[f64; 3]], i: usize) -> [f64; 3] {
    let nb = mesh.neighbors(i);
    if nb.is_empty() {
        return [0.0; 3];
    }
    let mut d = vertices[i];
    let inv = 1.0 / nb.len() as f64;
    for &j in nb {
        for a in 0..3 {
            d[a] -= inv * vertices[j][a];
        }
    }
    d
}

/// Laplacian of vertex `i`, minus that of `rest` when given.
fn laplacian_delta(mesh: &TriMesh, rest: Option<&[[f64; 3]]>, i: usize) -> [f64; 3] {
    let d = laplacian(mesh, &mesh.vertices, i);
    match rest {
        Some(r) => {
            let d0 = laplacian(mesh, r, i);
            [d[0] - d0[0], d[1] - d0[1], d[2] - d0[2]]
        }
        None => d,
    }
}

fn delta_loss(mesh: &TriMesh, rest: Option<&[[f64; 3]]>) -> f64 {
    if mesh.vertices.is_empty() {
        return 0.0;
    }
    let sum: f64 = (0..mesh.vertices.len())
        .map(|i| laplacian_delta(mesh, rest, i).iter().map(|x| x * x).sum::<f64>())
        .sum();
    sum / mesh.vertices.len() as f64
}

fn delta_backward(mesh: &TriMesh, rest: Option<&[[f64; 3]]>, weight: f64, grads: &mut [[f64; 3]]) {
    let nv = mesh.vertices.len();
    if nv == 0 {
        return;
    }
    let scale = 2.0 * weight / nv as f64;
    for i in 0..nv {
        let nb = mesh.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let d = laplacian_delta(mesh, rest, i);
        let inv = 1.0 / nb.len() as f64;
        for a in 0..3 {
            grads[i][a] += scale * d[a];
        }
        for &j in nb {
            for a in 0..3 {
                grads[j][a] -= scale * inv * d[a];
            }
        }
    }
}

/// Mean over vertices of the squared uniform-Laplacian norm.
pub fn laplacian_loss(mesh: &TriMesh) -> f64 {
    delta_loss(mesh, None)
}

/// Adds `weight · ∂laplacian_loss/∂vertices` into `grads`.
pub fn laplacian_backward(mesh: &TriMesh, weight: f64, grads: &mut [[f64; 3]]) {
    delta_backward(mesh, None, weight, grads)
}

/// [`laplacian_loss`] of the displacement from `rest` (same topology as `mesh`).
/// Zero, with zero gradient, when `mesh` sits at `rest`.
pub fn laplacian_offset_loss(mesh: &TriMesh, rest: &[[f64; 3]]) -> f64 {
    delta_loss(mesh, Some(rest))
}

pub fn laplacian_offset_backward(mesh: &TriMesh, rest: &[[f64; 3]], weight: f64, grads: &mut [[f64; 3]]) {
    delta_backward(mesh, Some(rest), weight, grads)
}

fn edge_terms(mesh: &TriMesh) -> impl Iterator<Item = (usize, usize, f64, f64, [f64; 3])> + '_ {
    mesh.edges().iter().zip(mesh.rest_edge_lengths()).map(|(&[a, b], &rest)| {
        let d = [0, 1, 2].map(|k| mesh.vertices[a][k] - mesh.vertices[b][k]);
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (a, b, len, rest, d)
    })
}

/// Mean over edges of `(length / rest_length - 1)²`.
pub fn edge_loss(mesh: &TriMesh) -> f64 {
    if mesh.edges().is_empty() {
        return 0.0;
    }
    let sum: f64 = edge_terms(mesh).map(|(_, _, len, rest, _)| (len / rest - 1.0).powi(2)).sum();
    sum / mesh.edges().len() as f64
}

/// Adds `weight · ∂edge_loss/∂vertices` into `grads`.
pub fn edge_backward(mesh: &TriMesh, weight: f64, grads: &mut [[f64; 3]]) {
    let ne = mesh.edges().len();
    if ne == 0 {
        return;
    }
    let scale = 2.0 * weight / ne as f64;
    for (a, b, len, rest, d) in edge_terms(mesh) {
        if len == 0.0 {
            continue;
        }
        let g = scale * (len / rest - 1.0) / (rest * len);
        for k in 0..3 {
            grads[a][k] += g * d[k];
            grads[b][k] -= g * d[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::octahedron;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    /// Five vertices in a strip: 0-1-2 along the bottom, 3-4 on top.
    fn strip() -> TriMesh {
        TriMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.5, 1.0, 0.0],
                [1.5, 1.0, 0.0],
            ],
            vec![[0, 1, 3], [1, 4, 3], [1, 2, 4]],
        )
        .unwrap()
    }

    #[test]
    fn coincident_vertices_have_zero_laplacian() {
        let m = strip();
        let flat = m.with_vertices(vec![[0.3, 0.3, 0.3]; 5]).unwrap();
        assert!(laplacian_loss(&flat) < 1e-30);
    }

    #[test]
    fn centroid_center_of_fan() {
        let mut v = vec![[0.0; 3]];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            v.push([a.cos(), a.sin(), 0.0]);
        }
        let f: Vec<[usize; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let m = TriMesh::new(v, f).unwrap();
        assert!(laplacian(&m, &m.vertices, 0).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn displaced_strip_vertex_by_hand() {
        let m = strip();
        let d = 0.4;
        let mut v = m.vertices.clone();
        v[1][2] += d;
        let moved = m.with_vertices(v).unwrap();
        // vertex 1 has neighbours {0, 2, 3, 4}, none displaced: its Laplacian gains d in z
        let rest = laplacian(&m, &m.vertices, 1);
        let want = [rest[0], rest[1], rest[2] + d];
        assert_eq!(laplacian(&moved, &moved.vertices, 1), want);
        // vertex 0's neighbours are {1, 3}: mean displacement d/2
        let rest0 = laplacian(&m, &m.vertices, 0);
        assert!((laplacian(&moved, &moved.vertices, 0)[2] - (rest0[2] - d / 2.0)).abs() < 1e-15);
        let total: f64 = (0..5).map(|i| laplacian(&moved, &moved.vertices, i).iter().map(|x| x * x).sum::<f64>()).sum();
        assert!((laplacian_loss(&moved) - total / 5.0).abs() < 1e-15);
    }

    #[test]
    fn edge_examples() {
        let m = octahedron(1.0);
        assert_eq!(edge_loss(&m), 0.0);
        let scaled = m.with_vertices(m.vertices.iter().map(|v| v.map(|x| 1.1 * x)).collect()).unwrap();
        assert!((edge_loss(&scaled) - 0.01).abs() < 1e-12);
    }

    fn fd_check(loss: impl Fn(&TriMesh) -> f64, back: impl Fn(&TriMesh, f64, &mut [[f64; 3]]), m: &TriMesh) {
        let mut g = vec![[0.0; 3]; m.vertices.len()];
        back(m, 1.0, &mut g);
        let h = 1e-6;
        for i in 0..m.vertices.len() {
            for a in 0..3 {
                let mut p = m.clone();
                p.vertices[i][a] += h;
                let plus = loss(&p);
                p.vertices[i][a] -= 2.0 * h;
                let minus = loss(&p);
                let numeric = (plus - minus) / (2.0 * h);
                assert!((numeric - g[i][a]).abs() < 1e-7, "{i}/{a}: {numeric} vs {}", g[i][a]);
            }
        }
    }

    #[test]
    fn gradients_match_fd() {
        let m = octahedron(1.0);
        let v = m.vertices.iter().enumerate().map(|(i, v)| [v[0] + 0.1 * i as f64, v[1] * 1.3, v[2] - 0.05 * i as f64]).collect();
        let moved = m.with_vertices(v).unwrap();
        fd_check(laplacian_loss, laplacian_backward, &moved);
        fd_check(edge_loss, edge_backward, &moved);
        let rest = m.vertices.clone();
        fd_check(
            |x| laplacian_offset_loss(x, &rest),
            |x, w, g| laplacian_offset_backward(x, &rest, w, g),
            &moved,
        );
    }

    #[test]
    fn offset_loss_vanishes_at_rest() {
        let m = octahedron(1.0);
        assert!(laplacian_loss(&m) > 0.0);
        assert_eq!(laplacian_offset_loss(&m, &m.vertices), 0.0);
        let mut g = vec![[0.0; 3]; m.vertices.len()];
        laplacian_offset_backward(&m, &m.vertices, 1.0, &mut g);
        assert!(g.iter().flatten().all(|&x| x == 0.0));
        let origin = vec![[0.0; 3]; m.vertices.len()];
        assert!((laplacian_offset_loss(&m, &origin) - laplacian_loss(&m)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rigid_invariance(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, tx in -5.0f64..5.0, ty in -5.0f64..5.0) {
            let m = strip();
            let bent = m.with_vertices(m.vertices.iter().enumerate().map(|(i, v)| [v[0], v[1], v[2] + 0.3 * (i % 2) as f64]).collect()).unwrap();
            let r = Rotation3::from_euler_angles(ax, ay, az);
            let t = Vector3::new(tx, ty, 1.0);
            let moved = bent.with_vertices(bent.vertices.iter().map(|v| {
                let p = r * Vector3::from(*v) + t;
                [p.x, p.y, p.z]
            }).collect()).unwrap();
            prop_assert!((laplacian_loss(&moved) - laplacian_loss(&bent)).abs() < 1e-9);
            prop_assert!((edge_loss(&moved) - edge_loss(&bent)).abs() < 1e-9);
        }
    }
}
