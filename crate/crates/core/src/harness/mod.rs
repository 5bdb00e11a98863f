//! Synthetic data, metrics and pipeline plumbing shared by the CLI and the
//! acceptance suite.

pub mod config;
pub mod figure;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use config::Overrides;
pub use figure::{capsule_figure, skeleton, subject_figure, template_figure, Figure, BONE_NAMES};
pub use io::{read_dataset, read_png, write_dataset, write_png};
pub use metrics::{mean_angular_error_deg, psnr, PSNR_CAP};
pub use pipeline::{
    evaluate, figure_skinning_grid, initial_cloud, mean, psnr_vs_targets, turntable_cameras, write_eval_csv,
    InitConfig, InitMethod, ViewEval, FIGURE_BBOX,
};
pub use synth::{
    camera_orbit, ground_truth_cloud, orbit_camera, orbit_elevation_deg, perturb_cloud, render_view, synth_dataset,
    SynthConfig, SynthOutput,
};
