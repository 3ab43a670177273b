// MC-dropout averaging and multi-model averaging on briefly trained
// compact models, compared with single predictions on held-out days.

use spreadcast::data::{chronological_split, Cube, Normalizer, RunSource, SynthConfig};
use spreadcast::model::compact_arch;
use spreadcast::numerics::RngStream;
use spreadcast::postprocess::{mc_dropout_mean, multi_model_mean, EnsembleOfModels};
use spreadcast::training::{train, TrainConfig, TrainData};
use spreadcast::Result;

fn mse(a: &Cube, b: &Cube) -> f64 {
    let d = a.values.data().iter().zip(b.values.data());
    d.map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        / a.values.numel() as f64
}

/// Mean squared errors over the evaluated days.
#[derive(Debug, Default)]
pub struct Scores {
    pub single_pass: f64,
    pub dropout_mean: f64,
    /// Average of the members' own errors.
    pub members: f64,
    pub model_mean: f64,
}

pub fn run(models: usize, passes: usize, days: usize) -> Result<Scores> {
    let source = SynthConfig {
        grid_h: 16,
        grid_w: 32,
        steps: 8,
        members: 10,
        years: 1,
        ..SynthConfig::default()
    };
    let splits = chronological_split(&source.dates())?;
    let train_idx = splits.train.subsample(40);
    let pairs: Vec<_> = train_idx
        .dates
        .iter()
        .map(|&d| source.pair(d))
        .collect::<Result<_>>()?;
    let normalizer = Normalizer::fit(pairs.iter().map(|(c, s)| (c, s)))?;
    let data = TrainData {
        source: &source,
        train: train_idx,
        val: splits.val.subsample(4),
        normalizer,
    };
    let arch = compact_arch([8, 16, 32, 1], 4)?;
    let trained = (0..models as u64)
        .map(|seed| {
            let cfg = TrainConfig {
                epochs: 2,
                lr: 1e-3,
                seed,
                ..TrainConfig::default()
            };
            Ok(train(&data, &arch, &cfg, None)?.best_model)
        })
        .collect::<Result<Vec<_>>>()?;
    let ensemble = EnsembleOfModels::new(trained)?;

    let mut s = Scores::default();
    let test = splits.test.subsample(days);
    for &d in &test.dates {
        let (control, truth) = source.pair(d)?;
        let first = &ensemble.models()[0];
        s.single_pass += mse(
            &first.predict(&control, Some(&RngStream::new(1, 0)))?,
            &truth,
        );
        s.dropout_mean += mse(&mc_dropout_mean(first, &control, passes, 1)?, &truth);
        let each = ensemble.predictions(&control)?;
        s.members += each.iter().map(|p| mse(p, &truth)).sum::<f64>() / each.len() as f64;
        s.model_mean += mse(&multi_model_mean(&ensemble, &control)?, &truth);
    }
    let n = test.len() as f64;
    for v in [
        &mut s.single_pass,
        &mut s.dropout_mean,
        &mut s.members,
        &mut s.model_mean,
    ] {
        *v /= n;
    }
    Ok(s)
}

fn main() -> Result<()> {
    let s = run(3, 10, 10)?;
    println!("one dropout pass      mse {:.3}", s.single_pass);
    println!("mean of 10 passes     mse {:.3}", s.dropout_mean);
    println!("models on their own   mse {:.3}", s.members);
    println!("mean of 3 models      mse {:.3}", s.model_mean);
    Ok(())
}
