//! Pruning, cloning and splitting of Gaussians between optimizer steps.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{rotation_from_quat, GaussianCloud};
use crate::render::{CloudGradients, RenderOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct DensityConfig {
    /// Iterations between density-control passes.
    pub interval: usize,
    /// First iteration at which a pass may run.
    pub start_iter: usize,
    pub prune_opacity: f64,
    /// Average screen-space positional gradient (NDC units) above which a
    /// Gaussian is cloned or split.
    pub grad_threshold: f64,
    /// Largest scale (scene units) separating clone candidates from split candidates.
    pub scale_threshold: f64,
    /// No densification beyond this many Gaussians.
    pub max_gaussians: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start_iter: 500,
            prune_opacity: 0.005,
            grad_threshold: 2e-4,
            scale_threshold: 0.02,
            max_gaussians: 20_000,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::InvalidParameter("density interval must be positive".into()));
        }
        for (name, v) in [
            ("prune_opacity", self.prune_opacity),
            ("grad_threshold", self.grad_threshold),
            ("scale_threshold", self.scale_threshold),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Screen-space gradient statistics gathered between passes.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityStats {
    grad_norm_sum: Vec<f64>,
    mean_grad_sum: Vec<[f64; 3]>,
    count: Vec<u32>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_norm_sum: vec![0.0; n],
            mean_grad_sum: vec![[0.0; 3]; n],
            count: vec![0; n],
        }
    }

    /// Adds one iteration: every Gaussian the forward pass kept counts as seen.
    pub fn record(&mut self, out: &RenderOutput, grads: &CloudGradients) {
        let half_w = out.rgb.width as f64 / 2.0;
        let half_h = out.rgb.height as f64 / 2.0;
        for i in out.visible() {
            let [gx, gy] = grads.screen_means[i];
            self.grad_norm_sum[i] += (gx * half_w).hypot(gy * half_h);
            for a in 0..3 {
                self.mean_grad_sum[i][a] += grads.means[i][a];
            }
            self.count[i] += 1;
        }
    }

    /// Mean recorded gradient norm per Gaussian (zero if never seen).
    pub fn average(&self) -> Vec<f64> {
        self.grad_norm_sum
            .iter()
            .zip(&self.count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }
}

/// Result of a pass: the new cloud and, per new Gaussian, the index it was
/// carried over from (`None` for freshly created ones).
#[derive(Debug, Clone)]
pub struct Densified {
    pub cloud: GaussianCloud,
    pub sources: Vec<Option<usize>>,
}

/// Prunes Gaussians below the opacity threshold, clones small ones whose
/// average screen gradient is high (the copy nudged against the accumulated
/// positional gradient) and splits large ones into two children with scales
/// divided by 1.6 and positions drawn from the parent.
pub fn density_control<R: Rng>(
    cloud: &GaussianCloud,
    stats: &DensityStats,
    config: &DensityConfig,
    rng: &mut R,
) -> Result<Densified> {
    config.validate()?;
    if stats.len() != cloud.len() {
        return Err(Error::Contract(format!(
            "density stats cover {} Gaussians, cloud has {}",
            stats.len(),
            cloud.len()
        )));
    }
    let avg = stats.average();
    let keep: Vec<bool> = (0..cloud.len()).map(|i| cloud.opacity(i) >= config.prune_opacity).collect();
    let survivors = keep.iter().filter(|&&k| k).count();
    if survivors == 0 {
        return Err(Error::InvalidState("density control pruned every Gaussian".into()));
    }

    // Strongest gradients first so the cap drops the weakest candidates.
    let mut candidates: Vec<usize> =
        (0..cloud.len()).filter(|&i| keep[i] && avg[i] >= config.grad_threshold).collect();
    candidates.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]).then(a.cmp(&b)));
    let mut budget = config.max_gaussians.saturating_sub(survivors);
    let mut clone = vec![false; cloud.len()];
    let mut split = vec![false; cloud.len()];
    for &i in &candidates {
        if budget == 0 {
            break;
        }
        budget -= 1;
        let max_scale = cloud.scales(i).into_iter().fold(0.0, f64::max);
        if max_scale <= config.scale_threshold {
            clone[i] = true;
        } else {
            split[i] = true;
        }
    }

    let mut out = GaussianCloud::new(cloud.sh_degree())?;
    let mut sources = Vec::new();
    let mut appended = Vec::new();
    let shrink = 1.6f64.ln();
    for i in 0..cloud.len() {
        if !keep[i] {
            continue;
        }
        if split[i] {
            let parent = cloud.get(i);
            let r = rotation_from_quat(&parent.rotation)?;
            let s = Vector3::from(cloud.scales(i));
            let mut children = [parent.clone(), parent];
            for child in &mut children {
                let z = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let offset = r * s.component_mul(&z);
                for a in 0..3 {
                    child.mean[a] += offset[a];
                    child.log_scale[a] -= shrink;
                }
            }
            let [first, second] = children;
            out.push(first)?;
            sources.push(None);
            appended.push(second);
            continue;
        }
        out.push(cloud.get(i))?;
        sources.push(Some(i));
        if clone[i] {
            let mut copy = cloud.get(i);
            let g = Vector3::from(stats.mean_grad_sum[i]);
            if g.norm() > 0.0 {
                let step = 0.5 * cloud.scales(i).into_iter().fold(0.0, f64::max);
                let d = -g.normalize() * step;
                for a in 0..3 {
                    copy.mean[a] += d[a];
                }
            }
            appended.push(copy);
        }
    }
    for g in appended {
        out.push(g)?;
        sources.push(None);
    }
    Ok(Densified { cloud: out, sources })
}
