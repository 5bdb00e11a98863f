use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::density::{density_control, DensityConfig, DensityStats};
use super::loss::{
    anisotropy_backward, anisotropy_loss, photometric_grads, photometric_losses, LossTerms,
    LossWeights,
};
use crate::dataset::ViewDataset;
use crate::deform::{
    deform, field_backward, save_field, tv_backward, tv_loss, DeformationField, FieldConfig,
    FieldGradients,
};
use crate::error::{Error, Result};
use crate::gaussian::{ply_export, GaussianCloud};
use crate::render::{render, render_backward, CloudGradients, RenderSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct LearningRates {
    /// Positional rate at the start of each stage, decaying exponentially to `means_final`.
    pub means_init: f64,
    pub means_final: f64,
    pub rotations: f64,
    pub log_scales: f64,
    pub opacity_logits: f64,
    pub sh: f64,
    pub field_grids: f64,
    pub field_mlp: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means_init: 1.6e-4,
            means_final: 1.6e-6,
            rotations: 1e-3,
            log_scales: 5e-3,
            opacity_logits: 5e-2,
            sh: 2.5e-3,
            field_grids: 1.6e-3,
            field_mlp: 1.6e-4,
        }
    }
}

impl LearningRates {
    /// Positional rate at `step` of a stage lasting `span` iterations.
    pub fn means_at(&self, step: usize, span: usize) -> f64 {
        let p = if span <= 1 { 0.0 } else { step as f64 / (span - 1) as f64 };
        (self.means_init.ln() * (1.0 - p) + self.means_final.ln() * p).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr: LearningRates,
    pub density: DensityConfig,
    pub anisotropy_threshold: f64,
    pub weights: LossWeights,
    pub render: RenderSettings,
    /// Field layout; the bounding box is replaced by the padded bounds of the
    /// stage-1 cloud when `fit_field_bbox` is set.
    pub field: FieldConfig,
    pub fit_field_bbox: bool,
    /// Keeps the deformation at identity in stage 2 (the static baseline).
    pub freeze_field: bool,
    pub seed: u64,
    /// Write `iter_NNNNNN.ply` (and the field in stage 2) every this many iterations.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 3000,
            stage2_iters: 4000,
            lr: LearningRates::default(),
            density: DensityConfig::default(),
            anisotropy_threshold: 5.0,
            weights: LossWeights::default(),
            render: RenderSettings::default(),
            field: FieldConfig::default(),
            fit_field_bbox: true,
            freeze_field: false,
            seed: 0,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_iters == 0 || self.stage2_iters == 0 {
            return Err(Error::InvalidParameter("iteration counts must be positive".into()));
        }
        if !(self.anisotropy_threshold >= 1.0) {
            return Err(Error::InvalidParameter("anisotropy threshold must be >= 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::InvalidParameter("checkpoint interval must be positive".into()));
        }
        if self.checkpoint_every.is_some() && self.checkpoint_dir.is_none() {
            return Err(Error::InvalidParameter("checkpoints need a directory".into()));
        }
        self.density.validate()?;
        self.weights.validate()?;
        self.render.validate()?;
        self.field.validate()
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Global iteration, counting through both stages from 0.
    pub iteration: usize,
    pub stage: u8,
    pub view: usize,
    pub terms: LossTerms,
    pub total: f64,
    pub n_gaussians: usize,
}

/// Progress notifications passed to the observer of [`fit_with_observer`].
pub enum FitEvent<'a> {
    Iteration(&'a LossRecord),
    /// Stage 1 finished; the static cloud as it enters stage 2.
    Stage1End { cloud: &'a GaussianCloud },
    /// Stage 2 about to start, with the freshly initialized field.
    Stage2Start {
        cloud: &'a GaussianCloud,
        field: &'a DeformationField,
    },
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub cloud: GaussianCloud,
    pub field: DeformationField,
    pub log: Vec<LossRecord>,
}

impl FitResult {
    pub fn stage_iterations(&self, stage: u8) -> usize {
        self.log.iter().filter(|r| r.stage == stage).count()
    }
}

struct CloudOptimizer {
    means: AdamState,
    rotations: AdamState,
    log_scales: AdamState,
    opacity: AdamState,
    sh: AdamState,
}

impl CloudOptimizer {
    fn new(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            means: AdamState::new(3 * n),
            rotations: AdamState::new(4 * n),
            log_scales: AdamState::new(3 * n),
            opacity: AdamState::new(n),
            sh: AdamState::new(cloud.sh_coeffs.len()),
        }
    }

    fn step(&mut self, cloud: &mut GaussianCloud, g: &CloudGradients, lr: &LearningRates, means_lr: f64) -> Result<()> {
        adam_step(cloud.means.as_flattened_mut(), g.means.as_flattened(), &mut self.means, means_lr)?;
        adam_step(
            cloud.rotations.as_flattened_mut(),
            g.rotations.as_flattened(),
            &mut self.rotations,
            lr.rotations,
        )?;
        adam_step(
            cloud.log_scales.as_flattened_mut(),
            g.log_scales.as_flattened(),
            &mut self.log_scales,
            lr.log_scales,
        )?;
        adam_step(&mut cloud.opacity_logits, &g.opacity_logits, &mut self.opacity, lr.opacity_logits)?;
        adam_step(&mut cloud.sh_coeffs, &g.sh_coeffs, &mut self.sh, lr.sh)
    }

    fn remap(&mut self, sources: &[Option<usize>], sh_stride: usize) {
        self.means.remap_rows(sources, 3);
        self.rotations.remap_rows(sources, 4);
        self.log_scales.remap_rows(sources, 3);
        self.opacity.remap_rows(sources, 1);
        self.sh.remap_rows(sources, sh_stride);
    }
}

fn check_terms(iteration: usize, terms: &LossTerms, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("L_color", terms.color),
        ("L_mask", terms.mask),
        ("L_normal", terms.normal),
        ("L_tv", terms.tv),
        ("L_ar", terms.ar),
    ] {
        if !v.is_finite() {
            return Err(Error::Diverged {
                iteration,
                term: name.into(),
            });
        }
    }
    let total = terms.total(w)?;
    if !total.is_finite() {
        return Err(Error::Diverged {
            iteration,
            term: "total".into(),
        });
    }
    Ok(total)
}

fn check_grads(iteration: usize, g: &CloudGradients) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            term: "gradient".into(),
        })
    }
}

/// Axis-aligned bounds of the means, padded by 10% of the extent on each side.
pub fn padded_bounds(cloud: &GaussianCloud) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for m in &cloud.means {
        for a in 0..3 {
            lo[a] = lo[a].min(m[a]);
            hi[a] = hi[a].max(m[a]);
        }
    }
    for a in 0..3 {
        let pad = 0.1 * (hi[a] - lo[a]).max(1e-3);
        lo[a] -= pad;
        hi[a] += pad;
    }
    (lo, hi)
}

fn write_checkpoint(
    dir: &Path,
    iteration: usize,
    cloud: &GaussianCloud,
    field: Option<&DeformationField>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ply_export(cloud, &dir.join(format!("iter_{iteration:06}.ply")))?;
    if let Some(f) = field {
        save_field(f, &dir.join(format!("iter_{iteration:06}.field")))?;
    }
    Ok(())
}

/// Two-stage optimization. See [`fit_with_observer`].
pub fn fit(dataset: &ViewDataset, init_cloud: &GaussianCloud, config: &FitConfig) -> Result<FitResult> {
    fit_with_observer(dataset, init_cloud, config, |_| {})
}

/// Stage 1 optimizes a static cloud with density control; stage 2 adds the
/// deformation field (started at identity) and samples each view at its own
/// timestep. One random view per iteration throughout.
pub fn fit_with_observer(
    dataset: &ViewDataset,
    init_cloud: &GaussianCloud,
    config: &FitConfig,
    mut observer: impl FnMut(FitEvent<'_>),
) -> Result<FitResult> {
    config.validate()?;
    dataset.validate()?;
    init_cloud.validate()?;
    let w = &config.weights;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cloud = init_cloud.clone();
    let mut opt = CloudOptimizer::new(&cloud);
    let mut stats = DensityStats::new(cloud.len());
    let mut log = Vec::with_capacity(config.stage1_iters + config.stage2_iters);
    let checkpoint = |it: usize| -> Option<&Path> {
        match (config.checkpoint_every, &config.checkpoint_dir) {
            (Some(k), Some(dir)) if (it + 1) % k == 0 => Some(dir.as_path()),
            _ => None,
        }
    };

    for step in 0..config.stage1_iters {
        let v = rng.gen_range(0..dataset.len());
        let view = &dataset.views[v];
        let out = render(&cloud, &view.camera, &config.render)?;
        let (color, mask, normal) = photometric_losses(&out, &view.rgb, &view.mask, &view.normal)?;
        let terms = LossTerms {
            color,
            mask,
            normal,
            tv: 0.0,
            ar: anisotropy_loss(&cloud, config.anisotropy_threshold),
        };
        let total = check_terms(step, &terms, w)?;
        let (gr, ga, gn) = photometric_grads(&out, &view.rgb, &view.mask, &view.normal, w)?;
        let mut grads = render_backward(&cloud, &view.camera, &config.render, &out, &gr, &ga, &gn)?;
        anisotropy_backward(&cloud, config.anisotropy_threshold, w.lambda_ar, &mut grads);
        check_grads(step, &grads)?;
        stats.record(&out, &grads);
        opt.step(&mut cloud, &grads, &config.lr, config.lr.means_at(step, config.stage1_iters))?;

        let record = LossRecord {
            iteration: step,
            stage: 1,
            view: v,
            terms,
            total,
            n_gaussians: cloud.len(),
        };
        observer(FitEvent::Iteration(&record));
        log.push(record);

        let done = step + 1;
        let d = &config.density;
        if done % d.interval == 0 && done >= d.start_iter && done < config.stage1_iters {
            let result = density_control(&cloud, &stats, d, &mut rng)?;
            opt.remap(&result.sources, 3 * cloud.sh_per_channel());
            cloud = result.cloud;
            stats = DensityStats::new(cloud.len());
        }
        if let Some(dir) = checkpoint(step) {
            write_checkpoint(dir, step, &cloud, None)?;
        }
    }
    observer(FitEvent::Stage1End { cloud: &cloud });

    let mut field_config = config.field.clone();
    if config.fit_field_bbox {
        let (lo, hi) = padded_bounds(&cloud);
        field_config.bbox_min = lo;
        field_config.bbox_max = hi;
    }
    let mut field = DeformationField::new(&field_config, config.seed ^ 0xf1e1d)?;
    let mut grid_state = AdamState::new(field.grids().len());
    let mut mlp_state = AdamState::new(field.mlp().len());
    observer(FitEvent::Stage2Start {
        cloud: &cloud,
        field: &field,
    });

    for step in 0..config.stage2_iters {
        let iteration = config.stage1_iters + step;
        let v = rng.gen_range(0..dataset.len());
        let view = &dataset.views[v];
        let deformed = if config.freeze_field {
            None
        } else {
            Some(deform(&cloud, view.t, &field)?)
        };
        let posed = deformed.as_ref().unwrap_or(&cloud);
        let out = render(posed, &view.camera, &config.render)?;
        let (color, mask, normal) = photometric_losses(&out, &view.rgb, &view.mask, &view.normal)?;
        let terms = LossTerms {
            color,
            mask,
            normal,
            tv: if config.freeze_field { 0.0 } else { tv_loss(&field) },
            ar: anisotropy_loss(&cloud, config.anisotropy_threshold),
        };
        let total = check_terms(iteration, &terms, w)?;
        let (gr, ga, gn) = photometric_grads(&out, &view.rgb, &view.mask, &view.normal, w)?;
        let mut grads = render_backward(posed, &view.camera, &config.render, &out, &gr, &ga, &gn)?;
        let field_grads: Option<FieldGradients> = if config.freeze_field {
            None
        } else {
            let (mut fg, mean_grads) = field_backward(&field, &cloud, view.t, &grads)?;
            grads.means = mean_grads;
            tv_backward(&field, w.lambda_tv, &mut fg);
            if !fg.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    term: "field gradient".into(),
                });
            }
            Some(fg)
        };
        anisotropy_backward(&cloud, config.anisotropy_threshold, w.lambda_ar, &mut grads);
        check_grads(iteration, &grads)?;
        opt.step(&mut cloud, &grads, &config.lr, config.lr.means_at(step, config.stage2_iters))?;
        if let Some(fg) = field_grads {
            adam_step(field.grids_mut(), fg.grids(), &mut grid_state, config.lr.field_grids)?;
            adam_step(field.mlp_mut(), fg.mlp(), &mut mlp_state, config.lr.field_mlp)?;
        }

        let record = LossRecord {
            iteration,
            stage: 2,
            view: v,
            terms,
            total,
            n_gaussians: cloud.len(),
        };
        observer(FitEvent::Iteration(&record));
        log.push(record);
        if let Some(dir) = checkpoint(iteration) {
            write_checkpoint(dir, iteration, &cloud, Some(&field))?;
        }
    }
    Ok(FitResult { cloud, field, log })
}

/// The static avatar: the cloud deformed to `t = 0`.
pub fn extract_canonical(cloud: &GaussianCloud, field: &DeformationField) -> Result<GaussianCloud> {
    deform(cloud, 0.0, field)
}

/// Writes the loss log as CSV with a header row.
pub fn write_loss_csv(log: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "iteration", "stage", "L_color", "L_mask", "L_normal", "L_tv", "L_ar", "total",
    ])
    .map_err(|e| csv_error(path, e))?;
    for r in log {
        w.write_record(&[
            r.iteration.to_string(),
            r.stage.to_string(),
            format!("{:e}", r.terms.color),
            format!("{:e}", r.terms.mask),
            format!("{:e}", r.terms.normal),
            format!("{:e}", r.terms.tv),
            format!("{:e}", r.terms.ar),
            format!("{:e}", r.total),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("CSV", format!("{}: {other:?}", path.display())),
    }
}
