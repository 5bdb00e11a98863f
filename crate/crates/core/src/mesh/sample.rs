use nalgebra::Vector3;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::gaussian::{logit, quat_from_rotation, rotation_aligning_z, Gaussian, GaussianCloud};
use crate::spatial::PointIndex;

pub const INIT_OPACITY: f64 = 0.1;

/// `n` points drawn uniformly over the surface area, with their face normals.
pub fn sample_surface_points(mesh: &TriMesh, n: usize, seed: u64) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    if mesh.faces().is_empty() {
        return Err(Error::InvalidInput("mesh has no faces to sample".into()));
    }
    let areas: Vec<f64> = (0..mesh.faces().len()).map(|f| mesh.face_area(f)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::InvalidInput(format!("face areas: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let f = pick.sample(&mut rng);
        let [a, b, c] = mesh.faces()[f].map(|i| mesh.vertex(i));
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let p = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
        let nrm = mesh.face_normal(f);
        points.push([p.x, p.y, p.z]);
        normals.push([nrm.x, nrm.y, nrm.z]);
    }
    Ok((points, normals))
}

/// Flattened surfels at `points`: tangent log-scale is the log of the mean
/// distance to the `n_neighbors` nearest points, the normal axis is halved,
/// and the local third axis follows the normal. Opacity starts at
/// [`INIT_OPACITY`] and color at mid-gray.
pub fn init_gaussians(points: &[[f64; 3]], normals: &[[f64; 3]], n_neighbors: usize) -> Result<GaussianCloud> {
    if points.len() != normals.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} normals",
            points.len(),
            normals.len()
        )));
    }
    if n_neighbors == 0 || points.len() < 4 || points.len() <= n_neighbors {
        return Err(Error::InvalidInput(format!(
            "{} points cannot provide {n_neighbors} nearest neighbours",
            points.len()
        )));
    }
    let index = PointIndex::new(points);
    let mut cloud = GaussianCloud::new(0)?;
    for (i, (p, n)) in points.iter().zip(normals).enumerate() {
        let nn = index.nearest(p, n_neighbors, Some(i));
        let mean_dist = nn.iter().map(|&(_, d2)| d2.sqrt()).sum::<f64>() / nn.len() as f64;
        let base = mean_dist.max(1e-7).ln();
        let normal = Vector3::from(*n);
        if !(normal.norm() > 0.0) {
            return Err(Error::InvalidInput(format!("normal {i} is zero or not finite")));
        }
        cloud.push(Gaussian {
            mean: *p,
            rotation: quat_from_rotation(&rotation_aligning_z(&normal)),
            log_scale: [base, base, base - 2f64.ln()],
            opacity_logit: logit(INIT_OPACITY),
            sh: vec![0.0; 3],
        })?;
    }
    Ok(cloud)
}
