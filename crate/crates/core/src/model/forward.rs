use std::collections::BTreeMap;

use super::arch::{ArchConfig, LayerKind, LayerSpec, SkipAlign};
use super::params::{running_mean_name, running_var_name, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::ops::center_offsets;
use crate::numerics::{BatchStats, BnMode, Eager, Float, Graph, RngStream, Tensor};

/// Which statistics batch normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnPhase {
    /// Statistics of the current batch; the batch moments are reported
    /// back so the caller can fold them into the running averages.
    Batch,
    /// Stored running statistics.
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardMode {
    pub bn: BnPhase,
    /// Dropout in the generator; Gaussian input noise in the discriminator.
    pub stochastic: bool,
}

impl ForwardMode {
    pub const TRAIN: Self = Self {
        bn: BnPhase::Batch,
        stochastic: true,
    };
    pub const INFER: Self = Self {
        bn: BnPhase::Running,
        stochastic: false,
    };
    /// Running statistics with dropout left on, for Monte-Carlo sampling.
    pub const MC_DROPOUT: Self = Self {
        bn: BnPhase::Running,
        stochastic: true,
    };
}

/// Batch moments observed by one batch-norm layer during a forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub prefix: String,
    pub stats: BatchStats<T>,
}

struct Ctx<'a, T> {
    mode: ForwardMode,
    eps: f64,
    rng: &'a RngStream,
    updates: Vec<BnUpdate<T>>,
}

fn lookup<'p, T>(params: &'p BTreeMap<String, Tensor<T>>, name: &str) -> Result<&'p Tensor<T>> {
    params
        .get(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
}

fn layer<T: Float, G: Graph<T>>(
    g: &mut G,
    params: &BTreeMap<String, Tensor<T>>,
    prefix: &str,
    spec: &LayerSpec,
    x: &G::Value,
    ctx: &mut Ctx<'_, T>,
) -> Result<G::Value> {
    let scoped = |e: Error| e.context(prefix);
    let k = g.param(
        &format!("{prefix}.kernel"),
        lookup(params, &format!("{prefix}.kernel"))?,
    );
    let b = g.param(
        &format!("{prefix}.bias"),
        lookup(params, &format!("{prefix}.bias"))?,
    );
    let mut h = match spec.kind {
        LayerKind::Conv => g.conv3d(x, &k, &b, spec.strides),
        LayerKind::Deconv => g.conv3d_transpose(x, &k, &b, spec.strides),
    }
    .map_err(scoped)?;
    if spec.batch_norm {
        let gamma = g.param(
            &format!("{prefix}.bn.gamma"),
            lookup(params, &format!("{prefix}.bn.gamma"))?,
        );
        let beta = g.param(
            &format!("{prefix}.bn.beta"),
            lookup(params, &format!("{prefix}.bn.beta"))?,
        );
        let (mean, var);
        let mode = match ctx.mode.bn {
            BnPhase::Batch => BnMode::Train,
            BnPhase::Running => {
                mean = lookup(params, &running_mean_name(prefix))?;
                var = lookup(params, &running_var_name(prefix))?;
                BnMode::Infer {
                    mean: mean.data(),
                    var: var.data(),
                }
            }
        };
        let (y, stats) = g
            .batch_norm(&h, &gamma, &beta, mode, ctx.eps)
            .map_err(scoped)?;
        if let Some(stats) = stats {
            ctx.updates.push(BnUpdate {
                prefix: prefix.to_string(),
                stats,
            });
        }
        h = y;
    }
    if let Some(rate) = spec.dropout {
        let mut rng = ctx.rng.split_str(prefix);
        h = g
            .dropout(&h, rate, &mut rng, ctx.mode.stochastic)
            .map_err(scoped)?;
    }
    g.activation(&h, spec.activation).map_err(scoped)
}

fn join_skip<T: Float, G: Graph<T>>(
    g: &mut G,
    align: SkipAlign,
    dec: G::Value,
    enc: &G::Value,
) -> Result<G::Value> {
    let ds = g.tensor(&dec).shape().to_vec();
    let es = g.tensor(enc).shape().to_vec();
    let mut dec = dec;
    let mut enc = enc.clone();
    if ds[..4] != es[..4] {
        match align {
            SkipAlign::CropDecoder => {
                let target = [&ds[..1], &es[1..4], &ds[4..]].concat();
                dec = g.crop(&dec, &center_offsets(&ds, &target), &target)?;
            }
            SkipAlign::PadEncoder => {
                let target = [&es[..1], &ds[1..4], &es[4..]].concat();
                enc = g.pad(&enc, &center_offsets(&target, &es), &target)?;
            }
        }
    }
    g.concat(&[dec, enc], 4)
}

/// Generator forward pass over a batch `x` of shape `(N, T, H, W, 1)`.
///
/// Returns the `(N, T, H, W, 1)` output and, in [`BnPhase::Batch`], the
/// batch moments of every normalized layer.
pub fn generator_forward<T: Float, G: Graph<T>>(
    g: &mut G,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &ArchConfig,
    x: &G::Value,
    mode: ForwardMode,
    rng: &RngStream,
) -> Result<(G::Value, Vec<BnUpdate<T>>)> {
    let in_shape = g.tensor(x).shape().to_vec();
    if in_shape.len() != 5 || in_shape[1..] != cfg.input_shape {
        return Err(Error::shape(
            "generator",
            format!(
                "input {in_shape:?} does not match configured extents {:?}",
                cfg.input_shape
            ),
        ));
    }
    let mut ctx = Ctx {
        mode,
        eps: cfg.bn_eps,
        rng,
        updates: Vec::new(),
    };
    let mut skips = Vec::with_capacity(cfg.encoder.len());
    let mut h = x.clone();
    for (i, spec) in cfg.encoder.iter().enumerate() {
        h = layer(g, params, &format!("gen.enc{i}"), spec, &h, &mut ctx)?;
        skips.push(h.clone());
    }
    for j in 0..=cfg.decoder.len() {
        for &(e, _) in cfg.skip_pairs.iter().filter(|p| p.1 == j) {
            h = join_skip(g, cfg.skip_align, h, &skips[e])?;
        }
        if j < cfg.decoder.len() {
            h = layer(
                g,
                params,
                &format!("gen.dec{j}"),
                &cfg.decoder[j],
                &h,
                &mut ctx,
            )?;
        }
    }
    drop(skips);
    h = layer(g, params, "gen.out", &cfg.output_layer, &h, &mut ctx)?;
    let out_shape = g.tensor(&h).shape().to_vec();
    if out_shape[1..4] != in_shape[1..4] {
        let target = [&in_shape[..4], &out_shape[4..]].concat();
        h = g.crop(&h, &center_offsets(&out_shape, &target), &target)?;
    }
    Ok((h, ctx.updates))
}

/// Discriminator over an (input, candidate) pair, each `(N, T, H, W, 1)`.
/// Returns raw patch logits.
pub fn discriminator_forward<T: Float, G: Graph<T>>(
    g: &mut G,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &ArchConfig,
    x: &G::Value,
    y: &G::Value,
    mode: ForwardMode,
    rng: &RngStream,
) -> Result<(G::Value, Vec<BnUpdate<T>>)> {
    let xs = g.tensor(x).shape().to_vec();
    if xs != g.tensor(y).shape() {
        return Err(Error::shape(
            "discriminator",
            format!("input {xs:?} vs candidate {:?}", g.tensor(y).shape()),
        ));
    }
    let mut ctx = Ctx {
        mode,
        eps: cfg.bn_eps,
        rng,
        updates: Vec::new(),
    };
    let mut streams = Vec::with_capacity(2);
    for (v, tag) in [(x, "x"), (y, "y")] {
        let mut v = v.clone();
        if mode.stochastic && cfg.noise_sigma > 0.0 {
            let n: usize = xs.iter().product();
            let draws = rng.split_str(&format!("disc.noise.{tag}")).fill_normal(n);
            let sigma = cfg.noise_sigma;
            let noise = g.input(Tensor::new(
                xs.clone(),
                draws.into_iter().map(|d| T::of(d * sigma)).collect(),
            )?);
            v = g.add(&v, &noise)?;
        }
        streams.push(layer(
            g,
            params,
            &format!("disc.{tag}0"),
            &cfg.disc_layers[0],
            &v,
            &mut ctx,
        )?);
    }
    let mut h = g.concat(&streams, 4)?;
    drop(streams);
    for (k, spec) in cfg.disc_layers.iter().enumerate().skip(1) {
        h = layer(g, params, &format!("disc.l{k}"), spec, &h, &mut ctx)?;
    }
    Ok((h, ctx.updates))
}

/// Folds observed batch moments into the running statistics:
/// `running = m * running + (1 - m) * batch`.
pub fn apply_bn_updates(
    params: &mut ModelParams,
    updates: &[BnUpdate<f32>],
    momentum: f64,
) -> Result<()> {
    let m = momentum as f32;
    for u in updates {
        for (name, batch) in [
            (running_mean_name(&u.prefix), &u.stats.mean),
            (running_var_name(&u.prefix), &u.stats.var),
        ] {
            let cur = lookup(params, &name)?;
            if cur.numel() != batch.len() {
                return Err(Error::shape(
                    "bn_update",
                    format!("{name}: {} vs {}", cur.numel(), batch.len()),
                ));
            }
            let next = cur
                .data()
                .iter()
                .zip(batch)
                .map(|(&r, &b)| m * r + (1.0 - m) * b)
                .collect();
            let t = Tensor::new(cur.shape(), next)?;
            params.insert(name, t);
        }
    }
    Ok(())
}

/// Eager generator inference on a batch `(N, T, H, W, 1)` using running
/// batch-norm statistics. With `dropout_active` every call draws fresh
/// masks from `rng`.
pub fn generate(
    params: &ModelParams,
    cfg: &ArchConfig,
    x: &Tensor<f32>,
    dropout_active: bool,
    rng: &RngStream,
) -> Result<Tensor<f32>> {
    let mode = if dropout_active {
        ForwardMode::MC_DROPOUT
    } else {
        ForwardMode::INFER
    };
    let (y, _) = generator_forward(&mut Eager, params, cfg, x, mode, rng)?;
    Ok(y)
}
