//! Small architectures and datasets shared by the integration tests.
#![allow(dead_code)]

pub mod arch_gen;
pub mod gradcheck;
pub mod oracles;

use chrono::NaiveDate;
use spreadcast::data::{DatasetIndex, Normalizer, RunSource, SynthConfig};
use spreadcast::model::{ArchConfig, LayerSpec, SkipAlign};
use spreadcast::numerics::Activation;
use spreadcast::pipeline::{ArchChoice, RunConfig};
use spreadcast::training::TrainConfig;

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Two-level U-Net with a two-layer discriminator; a few thousand
/// weights, fast enough to train inside a unit test.
pub fn tiny_arch(input_shape: [usize; 4]) -> ArchConfig {
    let lrelu = Activation::LeakyRelu(0.2);
    ArchConfig {
        input_shape,
        encoder: vec![
            LayerSpec::conv(4, [3, 3, 3], [1, 2, 2])
                .without_batch_norm()
                .with_activation(lrelu),
            LayerSpec::conv(8, [3, 3, 3], [2, 2, 2]).with_activation(lrelu),
        ],
        decoder: vec![
            LayerSpec::deconv(8, [3, 3, 3], [2, 2, 2])
                .with_activation(Activation::Relu)
                .with_dropout(Some(0.5)),
            LayerSpec::deconv(4, [3, 3, 3], [1, 2, 2]).with_activation(Activation::Relu),
        ],
        output_layer: LayerSpec::conv(1, [3, 3, 3], [1, 1, 1])
            .without_batch_norm()
            .with_activation(Activation::Tanh),
        skip_pairs: vec![(0, 1)],
        disc_layers: vec![
            LayerSpec::conv(4, [3, 3, 3], [1, 2, 2])
                .without_batch_norm()
                .with_activation(lrelu),
            LayerSpec::conv(1, [3, 3, 3], [1, 1, 1])
                .without_batch_norm()
                .with_activation(Activation::Identity),
        ],
        noise_sigma: 0.05,
        skip_align: SkipAlign::CropDecoder,
        bn_eps: 1e-3,
        bn_momentum: 0.99,
    }
}

/// 8x16 grid, 4 steps, 6 members, one year from 2015-01-01.
pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        grid_h: 8,
        grid_w: 16,
        steps: 4,
        members: 6,
        years: 1,
        start_date: date("2015-01-01"),
        ..SynthConfig::default()
    }
}

pub fn days(from: &str, n: usize) -> DatasetIndex {
    let d0 = date(from);
    DatasetIndex::new((0..n as u64).map(|k| d0 + chrono::Days::new(k)).collect()).unwrap()
}

pub fn fit_normalizer(source: &dyn RunSource, idx: &DatasetIndex) -> Normalizer {
    let pairs: Vec<_> = idx.dates.iter().map(|d| source.pair(*d).unwrap()).collect();
    Normalizer::fit(pairs.iter().map(|(c, s)| (c, s))).unwrap()
}

/// Run config over [`tiny_synth`] and [`tiny_arch`]: two epochs, two
/// model seeds, three dropout passes.
pub fn tiny_run_config(work_dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig {
        data: tiny_synth(),
        arch: ArchChoice::Custom(Box::new(tiny_arch([4, 8, 16, 1]))),
        train: TrainConfig {
            epochs: 2,
            batch_size: 2,
            max_train_samples: Some(40),
            max_val_samples: Some(8),
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.postprocess.models = 2;
    cfg.postprocess.dropout_passes = 3;
    cfg.paths.work_dir = work_dir.to_path_buf();
    cfg
}
