use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::regularize::{edge_backward, edge_loss, laplacian_offset_backward, laplacian_offset_loss};
use super::silhouette::{silhouette_backward, silhouette_render};
use super::TriMesh;
use crate::dataset::ViewDataset;
use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::image::Image;
use crate::recon::{adam_step, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshFitWeights {
    pub mask: f64,
    pub normal: f64,
    pub laplacian: f64,
    pub edge: f64,
}

impl Default for MeshFitWeights {
    fn default() -> Self {
        Self {
            mask: 1.0,
            normal: 0.5,
            laplacian: 0.1,
            edge: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshFitConfig {
    pub iters: usize,
    pub lr: f64,
    pub sharpness: f64,
    /// Views larger than this are box-downsampled by an integer factor.
    pub max_resolution: usize,
    pub weights: MeshFitWeights,
    pub seed: u64,
}

impl Default for MeshFitConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            lr: 1e-3,
            sharpness: 30.0,
            max_resolution: 128,
            weights: MeshFitWeights::default(),
            seed: 0,
        }
    }
}

struct Target {
    camera: Camera,
    mask: Image,
    normal: Image,
}

fn downsample(img: &Image, f: usize) -> Image {
    let (w, h) = (img.width / f, img.height / f);
    let mut out = Image::new(w, h, img.channels);
    let inv = 1.0 / (f * f) as f64;
    for y in 0..h {
        for x in 0..w {
            for c in 0..img.channels {
                let mut s = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        s += img.at(x * f + dx, y * f + dy, c);
                    }
                }
                out.pixel_mut(x, y)[c] = s * inv;
            }
        }
    }
    out
}

fn targets(dataset: &ViewDataset, max_res: usize) -> Result<Vec<Target>> {
    let side = dataset.meta.width.max(dataset.meta.height);
    let f = side.div_ceil(max_res.max(1)).max(1);
    dataset
        .views
        .iter()
        .map(|v| {
            if f == 1 {
                return Ok(Target {
                    camera: v.camera.clone(),
                    mask: v.mask.clone(),
                    normal: v.normal.clone(),
                });
            }
            let c = &v.camera;
            let shift = (f as f64 - 1.0) / 2.0;
            let mut camera = c.clone();
            camera.fx = c.fx / f as f64;
            camera.fy = c.fy / f as f64;
            camera.cx = (c.cx - shift) / f as f64;
            camera.cy = (c.cy - shift) / f as f64;
            camera.width = c.width / f;
            camera.height = c.height / f;
            camera.validate()?;
            Ok(Target {
                camera,
                mask: downsample(&v.mask, f),
                normal: downsample(&v.normal, f),
            })
        })
        .collect()
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Deforms `template` to match the dataset's masks and normal maps under
/// Laplacian and edge regularization, with Adam on vertex positions and one
/// random view per iteration. Rest edge lengths stay those of the template,
/// and the Laplacian term acts on the displacement from the template.
pub fn fit_coarse_mesh(template: &TriMesh, dataset: &ViewDataset, config: &MeshFitConfig) -> Result<TriMesh> {
    dataset.validate()?;
    template.check_finite()?;
    let targets = targets(dataset, config.max_resolution)?;
    let w = &config.weights;
    let mut mesh = template.clone();
    let mut state = AdamState::new(3 * mesh.vertices.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for it in 0..config.iters {
        let t = &targets[rng.gen_range(0..targets.len())];
        let (wd, ht) = (t.camera.width, t.camera.height);
        let out = silhouette_render(&mesh, &t.camera, config.sharpness)?;

        let npx = (wd * ht) as f64;
        let mut g_mask = Image::new(wd, ht, 1);
        let mut l_mask = 0.0;
        for p in 0..wd * ht {
            let d = out.mask.data[p] - t.mask.data[p];
            l_mask += d.abs() / npx;
            g_mask.data[p] = w.mask * sign(d) / npx;
        }
        let inside = t.mask.data.iter().filter(|&&m| m > 0.5).count();
        let mut g_normal = Image::new(wd, ht, 3);
        let mut l_normal = 0.0;
        if inside > 0 {
            let scale = 1.0 / (3 * inside) as f64;
            for p in 0..wd * ht {
                if t.mask.data[p] > 0.5 {
                    for c in 0..3 {
                        let k = 3 * p + c;
                        let d = out.normal.data[k] - t.normal.data[k];
                        l_normal += scale * d.abs();
                        g_normal.data[k] = w.normal * scale * sign(d);
                    }
                }
            }
        }
        let total = w.mask * l_mask
            + w.normal * l_normal
            + w.laplacian * laplacian_offset_loss(&mesh, &template.vertices)
            + w.edge * edge_loss(&mesh);
        if !total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                term: "L_init".into(),
            });
        }
        let mut grads = silhouette_backward(&mesh, &t.camera, config.sharpness, &out, &g_mask, &g_normal)?;
        laplacian_offset_backward(&mesh, &template.vertices, w.laplacian, &mut grads);
        edge_backward(&mesh, w.edge, &mut grads);
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                term: "vertex gradient".into(),
            });
        }
        adam_step(mesh.vertices.as_flattened_mut(), grads.as_flattened(), &mut state, config.lr)?;
    }
    mesh.check_finite()?;
    Ok(mesh)
}
