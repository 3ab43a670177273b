//! Conditional-GAN training: alternating discriminator and generator
//! updates, validation-based checkpoint selection and loss telemetry.

mod bundle;
mod run;
mod step;

pub use bundle::{sidecar_path, SavedModel};
pub use run::{train, validation_rmse, TrainData, TrainLog, TrainOutcome, TrainRow};
pub use step::{gan_train_step, GanState, StepLosses, TrainConfig};
