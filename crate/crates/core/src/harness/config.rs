//! `key=value` override files for the synthetic generator and the fit.
//!
//! One assignment per line; blank lines and `#` comments are skipped. Unknown
//! keys are errors so that typos never pass silently.

use std::path::Path;

use super::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::recon::FitConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overrides {
    entries: Vec<(usize, String, String)>,
}

impl Overrides {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("config", format!("line {}: expected key=value", n + 1)))?;
            entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apply_synth(&self, cfg: &mut SynthConfig) -> Result<()> {
        for (line, k, v) in &self.entries {
            let bad = || bad_value(*line, k, v);
            match k.as_str() {
                "n_views" => cfg.n_views = v.parse().map_err(|_| bad())?,
                "elevation_amp_deg" => cfg.elevation_amp_deg = v.parse().map_err(|_| bad())?,
                "n_gaussians_gt" => cfg.n_gaussians_gt = v.parse().map_err(|_| bad())?,
                "resolution" => cfg.resolution = v.parse().map_err(|_| bad())?,
                "inconsistency_sigma" => cfg.inconsistency_sigma = v.parse().map_err(|_| bad())?,
                "color_jitter" => cfg.color_jitter = v.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(unknown(*line, k)),
            }
        }
        cfg.validate()
    }

    pub fn apply_fit(&self, cfg: &mut FitConfig) -> Result<()> {
        for (line, k, v) in &self.entries {
            let bad = || bad_value(*line, k, v);
            let f = || v.parse::<f64>().map_err(|_| bad());
            let u = || v.parse::<usize>().map_err(|_| bad());
            let b = || v.parse::<bool>().map_err(|_| bad());
            match k.as_str() {
                "stage1_iters" => cfg.stage1_iters = u()?,
                "stage2_iters" => cfg.stage2_iters = u()?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                "lambda_m" => cfg.weights.lambda_m = f()?,
                "lambda_n" => cfg.weights.lambda_n = f()?,
                "lambda_tv" => cfg.weights.lambda_tv = f()?,
                "lambda_ar" => cfg.weights.lambda_ar = f()?,
                "anisotropy_threshold" => cfg.anisotropy_threshold = f()?,
                "freeze_field" => cfg.freeze_field = b()?,
                "checkpoint_every" => cfg.checkpoint_every = Some(u()?),
                "lr.means_init" => cfg.lr.means_init = f()?,
                "lr.means_final" => cfg.lr.means_final = f()?,
                "lr.rotations" => cfg.lr.rotations = f()?,
                "lr.log_scales" => cfg.lr.log_scales = f()?,
                "lr.opacity_logits" => cfg.lr.opacity_logits = f()?,
                "lr.sh" => cfg.lr.sh = f()?,
                "lr.field_grids" => cfg.lr.field_grids = f()?,
                "lr.field_mlp" => cfg.lr.field_mlp = f()?,
                "density.interval" => cfg.density.interval = u()?,
                "density.start_iter" => cfg.density.start_iter = u()?,
                "density.prune_opacity" => cfg.density.prune_opacity = f()?,
                "density.grad_threshold" => cfg.density.grad_threshold = f()?,
                "density.scale_threshold" => cfg.density.scale_threshold = f()?,
                "density.max_gaussians" => cfg.density.max_gaussians = u()?,
                "field.resolutions" => {
                    cfg.field.resolutions = v
                        .split(',')
                        .map(|r| r.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?
                }
                "field.features" => cfg.field.features = u()?,
                "field.hidden" => cfg.field.hidden = u()?,
                "field.color_head" => cfg.field.color_head = b()?,
                _ => return Err(unknown(*line, k)),
            }
        }
        Ok(())
    }
}

fn bad_value(line: usize, k: &str, v: &str) -> Error {
    Error::format("config", format!("line {line}: bad value {v:?} for {k}"))
}

fn unknown(line: usize, k: &str) -> Error {
    Error::format("config", format!("line {line}: unknown key {k:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn applies_known_keys() {
        let o = Overrides::parse("# demo\nstage1_iters = 10\nlambda_n=0\nfield.resolutions=8, 16\n\nfreeze_field=true # baseline\n").unwrap();
        let mut cfg = FitConfig::default();
        o.apply_fit(&mut cfg).unwrap();
        assert_eq!(cfg.stage1_iters, 10);
        assert_eq!(cfg.weights.lambda_n, 0.0);
        assert_eq!(cfg.field.resolutions, vec![8, 16]);
        assert!(cfg.freeze_field);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut cfg = FitConfig::default();
        let err = Overrides::parse("a=1\nlambda_q=2").unwrap().apply_fit(&mut cfg).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = Overrides::parse("stage1_iters=x").unwrap().apply_fit(&mut cfg).unwrap_err();
        assert!(err.to_string().contains("stage1_iters"), "{err}");
        assert!(Overrides::parse("novalue").is_err());
        let mut s = SynthConfig::default();
        assert!(Overrides::parse("n_views=1").unwrap().apply_synth(&mut s).is_err());
    }
}
