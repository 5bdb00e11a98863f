//! Losses, the optimizer and the two-stage fitting schedule.

mod adam;
mod density;
mod fit;
mod loss;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use density::{density_control, Densified, DensityConfig, DensityStats};
pub use fit::{
    extract_canonical, fit, fit_with_observer, padded_bounds, write_loss_csv, FitConfig, FitEvent,
    FitResult, LearningRates, LossRecord,
};
pub(crate) use fit::csv_error;
pub use loss::{
    anisotropy_backward, anisotropy_loss, photometric_grads, photometric_losses, spiky_fraction,
    total_loss, LossTerms, LossWeights,
};
