//! Averaging schemes on top of a trained generator: Monte-Carlo dropout
//! over one model and the plain mean over independently trained models.
//! Both average in physical units, after each prediction is clamped at 0.

use crate::data::{Cube, SpreadCube};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::threads::par_map;
use crate::training::SavedModel;

/// Default number of stochastic passes.
pub const DEFAULT_DROPOUT_PASSES: usize = 10;
/// Default number of independently trained models.
pub const DEFAULT_MODELS: usize = 5;

/// Gridpointwise mean of equally shaped cubes, summed in input order.
pub fn mean_cube(cubes: &[SpreadCube]) -> Result<SpreadCube> {
    let first = cubes
        .first()
        .ok_or_else(|| Error::invalid("mean_cube", "no cubes to average"))?;
    let mut acc = vec![0.0f64; first.values.numel()];
    for c in cubes {
        if c.extents() != first.extents() {
            return Err(Error::shape(
                "mean_cube",
                format!("{:?} vs {:?}", c.extents(), first.extents()),
            ));
        }
        for (a, &v) in acc.iter_mut().zip(c.values.data()) {
            *a += f64::from(v);
        }
    }
    let n = cubes.len() as f64;
    let values = Tensor::new(
        first.values.shape(),
        acc.into_iter().map(|s| (s / n) as f32).collect(),
    )?;
    Cube::new(first.init_date, first.grid, values)
}

/// The individual stochastic passes; pass `r` uses stream `(seed, r)`.
pub fn mc_dropout_passes(
    model: &SavedModel,
    control: &Cube,
    n: usize,
    seed: u64,
) -> Result<Vec<SpreadCube>> {
    if n == 0 {
        return Err(Error::invalid("mc_dropout_mean", "need at least one pass"));
    }
    let runs: Vec<u64> = (0..n as u64).collect();
    par_map(&runs, &|&r: &u64| {
        model.predict(control, Some(&RngStream::new(seed, r)))
    })
    .into_iter()
    .collect()
}

/// Mean of `n` forward passes with dropout left on.
pub fn mc_dropout_mean(
    model: &SavedModel,
    control: &Cube,
    n: usize,
    seed: u64,
) -> Result<SpreadCube> {
    mean_cube(&mc_dropout_passes(model, control, n, seed)?)
}

/// Independently trained models sharing one input layout.
#[derive(Debug, Clone)]
pub struct EnsembleOfModels {
    models: Vec<SavedModel>,
}

impl EnsembleOfModels {
    pub fn new(models: Vec<SavedModel>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::invalid("multi_model_mean", "empty model list"))?;
        if let Some(m) = models
            .iter()
            .find(|m| m.arch.input_shape != first.arch.input_shape)
        {
            return Err(Error::Config(format!(
                "model input {:?} differs from {:?}",
                m.arch.input_shape, first.arch.input_shape
            )));
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[SavedModel] {
        &self.models
    }

    /// Deterministic prediction of every member.
    pub fn predictions(&self, control: &Cube) -> Result<Vec<SpreadCube>> {
        par_map(&self.models, &|m: &SavedModel| m.predict(control, None))
            .into_iter()
            .collect()
    }
}

/// Mean of the members' deterministic predictions.
pub fn multi_model_mean(models: &EnsembleOfModels, control: &Cube) -> Result<SpreadCube> {
    mean_cube(&models.predictions(control)?)
}
