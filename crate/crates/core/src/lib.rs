//! Predicting the ensemble spread of a gridded forecast from its single
//! deterministic control run.
//!
//! The crate treats the problem as paired video-to-video translation: a 3D
//! conditional GAN (a U-Net generator with a patch discriminator) maps the
//! 16-step control forecast cube onto the 16-step spread cube. Around the
//! model sit a synthetic ensemble generator, the binary cube and weight
//! formats, the climatology and persistence baselines, the verification
//! metrics (RMSE, SSIM, area-weighted spread integral) and the two
//! post-processing schemes (MC-dropout averaging and multi-model averaging).

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod postprocess;
pub mod training;
pub mod verify;

mod binfmt;
mod threads;

pub use error::{Error, Result};
pub use threads::worker_threads;
