use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binfmt::{read_json, write_json};
use crate::data::{Cube, Normalizer, SpreadCube};
use crate::error::{Error, Result};
use crate::model::{generate, load_params, save_params, ArchConfig, ModelParams};
use crate::numerics::{RngStream, Tensor};

/// A trained generator together with everything needed to run it on raw
/// control cubes.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub arch: ArchConfig,
    pub normalizer: Normalizer,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    arch: ArchConfig,
    normalizer: Normalizer,
}

/// `model.spw` -> `model.json`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

impl SavedModel {
    /// Writes the weight file and its JSON sidecar (architecture and
    /// normalizer).
    pub fn save(&self, weights: &Path) -> Result<()> {
        save_params(weights, &self.params)?;
        write_json(
            &sidecar_path(weights),
            &Sidecar {
                arch: self.arch.clone(),
                normalizer: self.normalizer,
            },
        )
    }

    pub fn load(weights: &Path) -> Result<Self> {
        let side: Sidecar = read_json(&sidecar_path(weights))?;
        let params = load_params(weights, &side.arch)?;
        Ok(Self {
            arch: side.arch,
            normalizer: side.normalizer,
            params,
        })
    }

    fn input_batch(&self, control: &Cube) -> Result<Tensor<f32>> {
        let x = self.normalizer.control_input(control)?;
        let s = x.shape();
        if s != self.arch.input_shape {
            return Err(Error::shape(
                "predict",
                format!(
                    "control cube {:?} does not match model input {:?}",
                    control.extents(),
                    self.arch.input_shape
                ),
            ));
        }
        x.reshape([&[1], s].concat())
    }

    /// One forward pass in physical units, clamped at zero. With
    /// `dropout` the pass draws masks from that stream; without it the
    /// prediction is deterministic.
    pub fn predict(&self, control: &Cube, dropout: Option<&RngStream>) -> Result<SpreadCube> {
        let x = self.input_batch(control)?;
        let quiet = RngStream::new(0, 0);
        let y = generate(
            &self.params,
            &self.arch,
            &x,
            dropout.is_some(),
            dropout.unwrap_or(&quiet),
        )?;
        self.normalizer.spread_output(&y, control)
    }
}
