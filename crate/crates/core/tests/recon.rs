use canonsplat::deform::{deform, load_field};
use canonsplat::gaussian::{ply_import, GaussianCloud};
use canonsplat::harness::{initial_cloud, mean, psnr_vs_targets, synth_dataset, InitConfig, InitMethod, SynthConfig, SynthOutput};
use canonsplat::recon::{fit, fit_with_observer, write_loss_csv, DensityConfig, FitConfig, FitEvent};
use canonsplat::render::render;

fn small(sigma: f64) -> SynthOutput {
    synth_dataset(&SynthConfig {
        n_views: 6,
        resolution: 32,
        n_gaussians_gt: 400,
        inconsistency_sigma: sigma,
        color_jitter: if sigma > 0.0 { 0.02 } else { 0.0 },
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn init(s: &SynthOutput, n: usize) -> GaussianCloud {
    let cfg = InitConfig {
        n_points: n,
        ..InitConfig::default()
    };
    initial_cloud(InitMethod::Template, &s.dataset, &s.template.mesh, &cfg).unwrap().0
}

fn short(s1: usize, s2: usize) -> FitConfig {
    FitConfig {
        stage1_iters: s1,
        stage2_iters: s2,
        seed: 5,
        ..FitConfig::default()
    }
}

#[test]
fn same_seed_same_result() {
    let s = small(0.02);
    let cloud = init(&s, 300);
    let a = fit(&s.dataset, &cloud, &short(30, 20)).unwrap();
    let b = fit(&s.dataset, &cloud, &short(30, 20)).unwrap();
    assert_eq!(a.cloud, b.cloud);
    assert_eq!(a.field, b.field);
    assert_eq!(a.log, b.log);
    let c = fit(&s.dataset, &cloud, &FitConfig { seed: 6, ..short(30, 20) }).unwrap();
    assert_ne!(a.cloud, c.cloud);
}

#[test]
fn stage_boundary_is_seamless() {
    let s = small(0.02);
    let cloud = init(&s, 300);
    let cfg = short(20, 3);
    let mut end1 = None;
    let mut start2 = None;
    fit_with_observer(&s.dataset, &cloud, &cfg, |e| match e {
        FitEvent::Stage1End { cloud } => end1 = Some(cloud.clone()),
        FitEvent::Stage2Start { cloud, field } => start2 = Some((cloud.clone(), field.clone())),
        FitEvent::Iteration(_) => {}
    })
    .unwrap();
    let end1 = end1.unwrap();
    let (c2, field) = start2.unwrap();
    assert!(field.is_identity());
    for v in &s.dataset.views {
        let a = render(&end1, &v.camera, &cfg.render).unwrap();
        let b = render(&deform(&c2, v.t, &field).unwrap(), &v.camera, &cfg.render).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.alpha, b.alpha);
    }
}

#[test]
fn schedule_and_log_have_exact_lengths() {
    let s = small(0.0);
    let r = fit(&s.dataset, &init(&s, 300), &short(17, 9)).unwrap();
    assert_eq!(r.stage_iterations(1), 17);
    assert_eq!(r.stage_iterations(2), 9);
    assert!(r.log.iter().enumerate().all(|(i, rec)| rec.iteration == i));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_loss_csv(&r.log, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 26);
    assert!(text.lines().next().unwrap().starts_with("iteration,stage"));
}

#[test]
fn frozen_field_stays_identity() {
    let s = small(0.02);
    let r = fit(&s.dataset, &init(&s, 300), &FitConfig { freeze_field: true, ..short(10, 10) }).unwrap();
    assert!(r.field.is_identity());
    assert!(r.log.iter().filter(|l| l.stage == 2).all(|l| l.terms.tv == 0.0));
}

#[test]
fn fitting_improves_on_the_initialization() {
    let s = small(0.0);
    let cloud = init(&s, 400);
    let before = mean(psnr_vs_targets(&cloud, &s.dataset).unwrap());
    let r = fit(&s.dataset, &cloud, &short(250, 50)).unwrap();
    let after = mean(psnr_vs_targets(&r.cloud, &s.dataset).unwrap());
    assert!(after > before + 5.0, "PSNR {before:.2} -> {after:.2}");
}

#[test]
fn density_control_respects_the_cap() {
    let s = small(0.0);
    let cfg = FitConfig {
        density: DensityConfig {
            start_iter: 20,
            interval: 20,
            grad_threshold: 1e-6,
            max_gaussians: 450,
            ..DensityConfig::default()
        },
        ..short(120, 1)
    };
    let r = fit(&s.dataset, &init(&s, 300), &cfg).unwrap();
    let peak = r.log.iter().map(|l| l.n_gaussians).max().unwrap();
    assert!(peak > 300, "no growth");
    assert!(peak <= 450, "peak {peak} over the cap");
}

#[test]
fn checkpoints_are_readable() {
    let s = small(0.02);
    let dir = tempfile::tempdir().unwrap();
    let cfg = FitConfig {
        checkpoint_every: Some(5),
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..short(10, 10)
    };
    let r = fit(&s.dataset, &init(&s, 300), &cfg).unwrap();
    for it in [4, 9, 14, 19] {
        let c = ply_import(dir.path().join(format!("iter_{it:06}.ply"))).unwrap();
        c.validate().unwrap();
    }
    assert!(!dir.path().join("iter_000009.field").exists());
    let last = load_field(&dir.path().join("iter_000019.field")).unwrap();
    assert_eq!(last, r.field);
    assert_eq!(ply_import(dir.path().join("iter_000019.ply")).unwrap(), r.cloud);
}

#[test]
fn bad_configs_are_rejected() {
    let s = small(0.0);
    let cloud = init(&s, 300);
    assert!(fit(&s.dataset, &cloud, &short(0, 5)).is_err());
    let cfg = FitConfig {
        checkpoint_every: Some(5),
        ..short(5, 5)
    };
    assert!(fit(&s.dataset, &cloud, &cfg).is_err());
}
