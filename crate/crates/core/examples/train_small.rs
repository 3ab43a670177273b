// Trains the compact U-Net GAN on a synthetic 16x32 ensemble for a few
// epochs and saves the best checkpoint as a loadable model.

use std::path::Path;

use spreadcast::data::{chronological_split, Normalizer, RunSource, SynthConfig};
use spreadcast::model::compact_arch;
use spreadcast::training::{train, SavedModel, TrainConfig, TrainData};
use spreadcast::Result;

pub struct Outcome {
    pub steps: usize,
    pub val_rmse: Vec<f64>,
    pub best_epoch: usize,
    pub first_l1: f32,
    pub last_l1: f32,
}

pub fn run(out: &Path, epochs: usize, samples: usize) -> Result<Outcome> {
    let source = SynthConfig {
        grid_h: 16,
        grid_w: 32,
        steps: 8,
        members: 10,
        years: 1,
        ..SynthConfig::default()
    };
    let splits = chronological_split(&source.dates())?;
    let train_idx = splits.train.subsample(samples);
    let pairs: Vec<_> = train_idx
        .dates
        .iter()
        .map(|&d| source.pair(d))
        .collect::<Result<_>>()?;
    let normalizer = Normalizer::fit(pairs.iter().map(|(c, s)| (c, s)))?;

    let arch = compact_arch([8, 16, 32, 1], 4)?;
    let cfg = TrainConfig {
        epochs,
        lr: 1e-3,
        max_val_samples: Some(8),
        ..TrainConfig::default()
    };
    let data = TrainData {
        source: &source,
        train: train_idx,
        val: splits.val,
        normalizer,
    };
    let outcome = train(&data, &arch, &cfg, Some(out))?;
    outcome.best_model.save(&out.join("model.spw"))?;
    outcome.log.write_csv(&out.join("train_log.csv"))?;
    // the saved bundle round-trips
    assert_eq!(
        SavedModel::load(&out.join("model.spw"))?,
        outcome.best_model
    );

    let rows = &outcome.log.rows;
    Ok(Outcome {
        steps: rows.len(),
        val_rmse: outcome.log.val_rmse.clone(),
        best_epoch: outcome.best_epoch,
        first_l1: rows[0].g_l1,
        last_l1: rows[rows.len() - 1].g_l1,
    })
}

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("spreadcast_train_small");
    let o = run(&dir, 4, 60)?;
    println!(
        "{} steps, L1 {:.4} -> {:.4}",
        o.steps, o.first_l1, o.last_l1
    );
    for (e, v) in o.val_rmse.iter().enumerate() {
        println!("epoch {} val rmse {v:.3}", e + 1);
    }
    println!(
        "best epoch {}, saved to {}",
        o.best_epoch + 1,
        dir.join("model.spw").display()
    );
    Ok(())
}
