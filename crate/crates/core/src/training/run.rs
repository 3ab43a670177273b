use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bundle::SavedModel;
use super::step::{gan_train_step, GanState, TrainConfig};
use crate::binfmt::write_atomic;
use crate::data::{DatasetIndex, Normalizer, RunSource};
use crate::error::{Error, Result};
use crate::model::{init_params, ArchConfig};
use crate::numerics::{RngStream, Tensor};
use crate::threads::par_map;
use crate::verify::rmse;

/// One optimizer step of telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: u64,
    pub epoch: usize,
    pub d_loss: f32,
    pub g_adv: f32,
    pub g_l1: f32,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
    pub epoch_wall_ms: Vec<u64>,
    /// Mean validation RMSE after each epoch (physical units); empty when
    /// there is no validation split.
    pub val_rmse: Vec<f64>,
}

impl TrainLog {
    /// CSV with columns `step, epoch, d_loss, g_adv, g_l1, wall_ms`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
        write_atomic(path, &bytes)
    }
}

/// Everything the training loop reads: a run source and the dates of the
/// training and validation splits, plus the normalizer fitted on training
/// data.
pub struct TrainData<'a> {
    pub source: &'a dyn RunSource,
    pub train: DatasetIndex,
    pub val: DatasetIndex,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: SavedModel,
    /// Lowest validation RMSE; the final model when there is no
    /// validation split.
    pub best_model: SavedModel,
    /// Zero-based; the checkpoint files count from 1.
    pub best_epoch: usize,
    pub log: TrainLog,
}

fn batch(data: &TrainData<'_>, dates: &[chrono::NaiveDate]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let pairs = par_map(
        dates,
        &|d: &chrono::NaiveDate| -> Result<(Tensor<f32>, Tensor<f32>)> {
            let (c, s) = data.source.pair(*d)?;
            Ok((
                data.normalizer.control_input(&c)?,
                data.normalizer.spread_target(&s)?,
            ))
        },
    );
    let (xs, ys): (Vec<_>, Vec<_>) = pairs
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// Mean over runs and lead times of the per-slice RMSE between the
/// model's deterministic prediction and the true spread.
pub fn validation_rmse(
    model: &SavedModel,
    source: &dyn RunSource,
    dates: &DatasetIndex,
) -> Result<f64> {
    if dates.is_empty() {
        return Err(Error::Data("empty validation split".into()));
    }
    let per_run = par_map(&dates.dates, &|d: &chrono::NaiveDate| -> Result<f64> {
        let (c, truth) = source.pair(*d)?;
        let pred = model.predict(&c, None)?;
        let mut acc = 0.0;
        for k in 0..truth.steps() {
            let a: Vec<f64> = pred.slice(k).iter().map(|&v| f64::from(v)).collect();
            let b: Vec<f64> = truth.slice(k).iter().map(|&v| f64::from(v)).collect();
            acc += rmse(&a, &b)?;
        }
        Ok(acc / truth.steps() as f64)
    });
    let vals = per_run.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Trains a fresh model. Checkpoints (`epoch_NNN.spw`, `best.spw`, each
/// with its JSON sidecar) go to `checkpoint_dir` when given.
pub fn train(
    data: &TrainData<'_>,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    let train_idx = match cfg.max_train_samples {
        Some(k) => data.train.subsample(k),
        None => data.train.clone(),
    };
    let val_idx = match cfg.max_val_samples {
        Some(k) => data.val.subsample(k),
        None => data.val.clone(),
    };
    if train_idx.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let (probe, _) = data.source.pair(train_idx.dates[0])?;
    let [t, h, w] = probe.extents();
    if [t, h, w, 1] != arch.input_shape {
        return Err(Error::shape(
            "train",
            format!(
                "dataset cubes {:?} do not match architecture input {:?}",
                probe.extents(),
                arch.input_shape
            ),
        ));
    }

    let root = RngStream::new(cfg.seed, 0);
    let params = init_params(arch, &root.split_str("init"))?;
    let mut state = GanState::new(params, cfg.adam());
    let model_of = |state: &GanState| SavedModel {
        arch: arch.clone(),
        normalizer: data.normalizer,
        params: state.params.clone(),
    };

    let n = train_idx.len();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, SavedModel)> = None;
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = root.split_str("shuffle").split(epoch as u64).permutation(n);
        for chunk in order.chunks(cfg.batch_size) {
            let t0 = Instant::now();
            let dates: Vec<_> = chunk.iter().map(|&i| train_idx.dates[i]).collect();
            let (x, y) = batch(data, &dates)?;
            let losses = gan_train_step(
                &mut state,
                arch,
                &x,
                &y,
                cfg,
                &root.split_str("step").split(step),
            )?;
            log.rows.push(TrainRow {
                step,
                epoch,
                d_loss: losses.d_loss,
                g_adv: losses.g_adv,
                g_l1: losses.g_l1,
                wall_ms: t0.elapsed().as_millis() as u64,
            });
            step += 1;
        }
        log.epoch_wall_ms.push(started.elapsed().as_millis() as u64);

        let model = model_of(&state);
        if !val_idx.is_empty() {
            let v = validation_rmse(&model, data.source, &val_idx)?;
            log.val_rmse.push(v);
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                if let Some(dir) = checkpoint_dir {
                    model.save(&dir.join("best.spw"))?;
                }
                best = Some((v, epoch, model.clone()));
            }
        }
        if let Some(dir) = checkpoint_dir {
            let last = epoch + 1 == cfg.epochs;
            if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
                model.save(&dir.join(format!("epoch_{:03}.spw", epoch + 1)))?;
            }
        }
    }
    let final_model = model_of(&state);
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs - 1, final_model.clone()),
    };
    Ok(TrainOutcome {
        final_model,
        best_model,
        best_epoch,
        log,
    })
}
