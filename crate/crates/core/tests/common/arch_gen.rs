//! Random valid U-Net layouts for the shape properties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spreadcast::model::{
    discriminator_forward, generator_forward, init_params, ArchConfig, ForwardMode, LayerSpec,
    SkipAlign,
};
use spreadcast::numerics::{Activation, Eager, RngStream, Tensor};

pub fn input(shape: [usize; 4], n: usize) -> Tensor<f32> {
    Tensor::from_fn([n, shape[0], shape[1], shape[2], shape[3]], |i| {
        ((i * 7919 % 1000) as f32 / 500.0) - 1.0
    })
}

fn pick_activation(rng: &mut ChaCha8Rng) -> Activation {
    match rng.gen_range(0..4) {
        0 => Activation::LeakyRelu(0.2),
        1 => Activation::Relu,
        2 => Activation::Tanh,
        _ => Activation::Identity,
    }
}

fn random_layer(rng: &mut ChaCha8Rng, deconv: bool, strides: [usize; 3]) -> LayerSpec {
    let filters = rng.gen_range(1..=4);
    let kernel = [
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    ];
    let base = if deconv {
        LayerSpec::deconv(filters, kernel, strides)
    } else {
        LayerSpec::conv(filters, kernel, strides)
    };
    let base = if rng.gen_bool(0.3) {
        base.without_batch_norm()
    } else {
        base
    };
    let dropout = rng.gen_bool(0.5).then(|| rng.gen_range(0.0..0.8));
    base.with_activation(pick_activation(rng))
        .with_dropout(dropout)
}

/// A U-Net whose decoder mirrors the encoder strides. Extents are
/// arbitrary apart from being divisible by the first encoder stride, so
/// odd extents exercise the crop and pad alignment paths.
pub fn random_arch(seed: u64) -> ArchConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let strides: Vec<[usize; 3]> = (0..n)
        .map(|_| {
            [
                rng.gen_range(1..=2),
                rng.gen_range(1..=2),
                rng.gen_range(1..=2),
            ]
        })
        .collect();
    let encoder: Vec<LayerSpec> = strides
        .iter()
        .map(|&s| random_layer(&mut rng, false, s))
        .collect();
    let decoder: Vec<LayerSpec> = (0..n)
        .map(|j| random_layer(&mut rng, true, strides[n - 1 - j]))
        .collect();
    let mut shape = [0; 4];
    for a in 0..3 {
        shape[a] = strides[0][a] * rng.gen_range(1..=5);
    }
    shape[3] = 1;
    let disc_layers = (0..rng.gen_range(1..=3))
        .map(|_| {
            let s = [
                rng.gen_range(1..=2),
                rng.gen_range(1..=2),
                rng.gen_range(1..=2),
            ];
            random_layer(&mut rng, false, s).with_dropout(None)
        })
        .collect();
    // every decoder input after the first is aligned with its mirror
    // encoder output, which pins the extents back onto the input grid
    let skip_pairs = (1..n).map(|j| (n - 1 - j, j)).collect();
    ArchConfig {
        input_shape: shape,
        encoder,
        decoder,
        output_layer: LayerSpec::conv(1, [3, 3, 3], [1, 1, 1])
            .without_batch_norm()
            .with_activation(Activation::Tanh),
        skip_pairs,
        disc_layers,
        noise_sigma: rng.gen_range(0.0..0.3),
        skip_align: if rng.gen_bool(0.5) {
            SkipAlign::CropDecoder
        } else {
            SkipAlign::PadEncoder
        },
        bn_eps: 1e-3,
        bn_momentum: 0.99,
    }
}

/// Trains-mode generator and discriminator passes over a batch of two on
/// `random_arch(seed)`: the output must have the input shape and the
/// logits the shape `validate` predicts.
pub fn round_trip(seed: u64) -> Result<(), String> {
    let cfg = random_arch(seed);
    let shapes = cfg
        .validate()
        .map_err(|e| format!("seed {seed}: constructed config rejected: {e}"))?;
    let params = init_params(&cfg, &RngStream::new(seed, 1)).unwrap();
    let x = input(cfg.input_shape, 2);
    let (y, _) = generator_forward(
        &mut Eager,
        &params,
        &cfg,
        &x,
        ForwardMode::TRAIN,
        &RngStream::new(seed, 2),
    )
    .unwrap();
    if y.shape() != x.shape() {
        return Err(format!(
            "seed {seed}: output {:?} for input {:?}",
            y.shape(),
            x.shape()
        ));
    }
    if !y.data().iter().all(|v| v.abs() <= 1.0) {
        return Err(format!("seed {seed}: output leaves [-1, 1]"));
    }
    let (logits, _) = discriminator_forward(
        &mut Eager,
        &params,
        &cfg,
        &x,
        &y,
        ForwardMode::TRAIN,
        &RngStream::new(seed, 3),
    )
    .unwrap();
    let l = shapes.disc_logits;
    if logits.shape() != [2, l[0], l[1], l[2], l[3]] {
        return Err(format!(
            "seed {seed}: logits {:?}, expected {l:?}",
            logits.shape()
        ));
    }
    Ok(())
}
