use std::collections::BTreeMap;

use super::arch::{ArchConfig, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Stddev of the normal kernel initializer.
pub const INIT_STDDEV: f64 = 0.02;

const RUNNING_MEAN: &str = "bn.running_mean";
const RUNNING_VAR: &str = "bn.running_var";

/// Named parameters and batch-norm buffers of a generator and its
/// discriminator, keyed by layer path (`gen.enc0.kernel`, `disc.l1.bn.gamma`, ...).
pub type ModelParams = BTreeMap<String, Tensor<f32>>;

/// Whether `name` is a batch-norm running statistic rather than a trainable
/// weight.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(RUNNING_MEAN) || name.ends_with(RUNNING_VAR)
}

pub fn running_mean_name(prefix: &str) -> String {
    format!("{prefix}.{RUNNING_MEAN}")
}

pub fn running_var_name(prefix: &str) -> String {
    format!("{prefix}.{RUNNING_VAR}")
}

/// Layer path prefix and the channel count entering it.
pub(crate) struct LayerSlot<'a> {
    pub prefix: String,
    pub spec: &'a LayerSpec,
    pub in_channels: usize,
}

pub(crate) fn generator_slots(cfg: &ArchConfig) -> Result<Vec<LayerSlot<'_>>> {
    let shapes = cfg.validate()?;
    let mut slots = Vec::new();
    for (i, spec) in cfg.encoder.iter().enumerate() {
        slots.push(LayerSlot {
            prefix: format!("gen.enc{i}"),
            spec,
            in_channels: shapes.encoder_in[i][3],
        });
    }
    for (j, spec) in cfg.decoder.iter().enumerate() {
        slots.push(LayerSlot {
            prefix: format!("gen.dec{j}"),
            spec,
            in_channels: shapes.decoder_in[j][3],
        });
    }
    slots.push(LayerSlot {
        prefix: "gen.out".into(),
        spec: &cfg.output_layer,
        in_channels: shapes.output_in[3],
    });
    Ok(slots)
}

pub(crate) fn discriminator_slots(cfg: &ArchConfig) -> Result<Vec<LayerSlot<'_>>> {
    let shapes = cfg.validate()?;
    let c = cfg.input_shape[3];
    let first = &cfg.disc_layers[0];
    let mut slots = vec![
        LayerSlot {
            prefix: "disc.x0".into(),
            spec: first,
            in_channels: c,
        },
        LayerSlot {
            prefix: "disc.y0".into(),
            spec: first,
            in_channels: c,
        },
    ];
    for (k, spec) in cfg.disc_layers.iter().enumerate().skip(1) {
        slots.push(LayerSlot {
            prefix: format!("disc.l{k}"),
            spec,
            in_channels: shapes.disc_in[k][3],
        });
    }
    Ok(slots)
}

fn kernel_shape(spec: &LayerSpec, cin: usize) -> Vec<usize> {
    let [a, b, c] = spec.kernel;
    match spec.kind {
        LayerKind::Conv => vec![a, b, c, cin, spec.filters],
        LayerKind::Deconv => vec![a, b, c, spec.filters, cin],
    }
}

fn slot_shapes(slot: &LayerSlot<'_>, out: &mut BTreeMap<String, Vec<usize>>) {
    let p = &slot.prefix;
    let f = slot.spec.filters;
    out.insert(
        format!("{p}.kernel"),
        kernel_shape(slot.spec, slot.in_channels),
    );
    out.insert(format!("{p}.bias"), vec![f]);
    if slot.spec.batch_norm {
        for n in ["bn.gamma", "bn.beta", RUNNING_MEAN, RUNNING_VAR] {
            out.insert(format!("{p}.{n}"), vec![f]);
        }
    }
}

/// Name and shape of every entry `init_params` produces for `cfg`.
pub fn expected_shapes(cfg: &ArchConfig) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for slot in generator_slots(cfg)?
        .iter()
        .chain(discriminator_slots(cfg)?.iter())
    {
        slot_shapes(slot, &mut out);
    }
    Ok(out)
}

/// Kernels from N(0, 0.02); biases and shifts zero; scales one; running
/// variance one. Each tensor draws from its own stream keyed by name, so
/// the result does not depend on iteration order.
pub fn init_params(cfg: &ArchConfig, rng: &RngStream) -> Result<ModelParams> {
    let mut params = ModelParams::new();
    for (name, shape) in expected_shapes(cfg)? {
        let t = if name.ends_with(".kernel") {
            let n = shape.iter().product();
            let draws = rng.split_str(&name).fill_normal(n);
            Tensor::new(
                shape,
                draws
                    .into_iter()
                    .map(|v| (v * INIT_STDDEV) as f32)
                    .collect(),
            )?
        } else if name.ends_with(".bn.gamma") || name.ends_with(RUNNING_VAR) {
            Tensor::ones(shape)
        } else {
            Tensor::zeros(shape)
        };
        params.insert(name, t);
    }
    Ok(params)
}

/// Number of trainable scalars (kernels, biases, batch-norm scale and shift).
pub fn trainable_count(params: &ModelParams, prefix: &str) -> usize {
    params
        .iter()
        .filter(|(n, _)| n.starts_with(prefix) && !is_buffer(n))
        .map(|(_, t)| t.numel())
        .sum()
}

/// Checks that `params` holds exactly the entries `cfg` expects.
pub fn check_params(params: &ModelParams, cfg: &ArchConfig) -> Result<()> {
    let expected = expected_shapes(cfg)?;
    for (name, shape) in &expected {
        match params.get(name) {
            None => return Err(Error::Config(format!("missing parameter {name}"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, architecture expects {shape:?}",
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    if let Some(extra) = params.keys().find(|n| !expected.contains_key(*n)) {
        return Err(Error::Config(format!("unexpected parameter {extra}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_arch;

    #[test]
    fn first_kernel_shape_and_variance() {
        let cfg = default_arch([16, 64, 128, 1]).unwrap();
        let p = init_params(&cfg, &RngStream::new(7, 0)).unwrap();
        let k = &p["gen.enc0.kernel"];
        assert_eq!(k.shape(), &[4, 4, 4, 1, 16]);
        let n = k.numel() as f64;
        let mean = k.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = k
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((0.0002..=0.0006).contains(&var), "{var}");
    }

    #[test]
    fn first_encoder_layer_has_no_batch_norm() {
        let cfg = default_arch([16, 64, 128, 1]).unwrap();
        let p = init_params(&cfg, &RngStream::new(1, 0)).unwrap();
        assert!(!p.contains_key("gen.enc0.bn.gamma"));
        assert!(p.contains_key("gen.enc1.bn.gamma"));
        assert!(!p.contains_key("gen.out.bn.gamma"));
        assert_eq!(p["gen.dec0.kernel"].shape(), &[3, 4, 4, 256, 256]);
        check_params(&p, &cfg).unwrap();
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = default_arch([4, 64, 64, 1]).unwrap();
        let a = init_params(&cfg, &RngStream::new(3, 0)).unwrap();
        let b = init_params(&cfg, &RngStream::new(3, 0)).unwrap();
        let c = init_params(&cfg, &RngStream::new(4, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
