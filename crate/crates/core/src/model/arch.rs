use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::conv::same_padding;
use crate::numerics::Activation;

/// Per-sample tensor extents `(T, H, W, C)`.
pub type Extents = [usize; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub kernel: [usize; 3],
    pub strides: [usize; 3],
    pub batch_norm: bool,
    #[serde(default)]
    pub dropout: Option<f64>,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: [usize; 3], strides: [usize; 3]) -> Self {
        Self {
            kind: LayerKind::Conv,
            filters,
            kernel,
            strides,
            batch_norm: true,
            dropout: None,
            activation: Activation::LeakyRelu(0.2),
        }
    }

    pub fn deconv(filters: usize, kernel: [usize; 3], strides: [usize; 3]) -> Self {
        Self {
            kind: LayerKind::Deconv,
            filters,
            kernel,
            strides,
            batch_norm: true,
            dropout: Some(0.5),
            activation: Activation::Relu,
        }
    }

    pub fn without_batch_norm(mut self) -> Self {
        self.batch_norm = false;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_dropout(mut self, dropout: Option<f64>) -> Self {
        self.dropout = dropout;
        self
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.filters == 0 || self.kernel.contains(&0) || self.strides.contains(&0) {
            return Err(Error::Config(format!(
                "{path}: filters, kernel and strides must be >= 1"
            )));
        }
        if let Some(r) = self.dropout {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!(
                    "{path}: dropout rate {r} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Output extents for an input of extents `input`.
    pub fn output_extents(&self, input: Extents) -> Extents {
        let mut out = [0, 0, 0, self.filters];
        for a in 0..3 {
            out[a] = match self.kind {
                LayerKind::Conv => same_padding(input[a], self.kernel[a], self.strides[a]).0,
                LayerKind::Deconv => input[a] * self.strides[a],
            };
        }
        out
    }
}

/// How a skip connection reconciles mismatched spatial extents, which
/// arise when an odd extent is halved with ceil rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipAlign {
    /// Center-crop the (larger) decoder tensor to the encoder extents.
    #[default]
    CropDecoder,
    /// Zero-pad the encoder tensor to the decoder extents; the generator
    /// output is center-cropped back to the input extents at the end.
    PadEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_shape: Extents,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub output_layer: LayerSpec,
    /// `(encoder index, decoder index)`: the encoder output is concatenated
    /// onto the input of that decoder layer. Decoder index
    /// `decoder.len()` addresses the output layer.
    pub skip_pairs: Vec<(usize, usize)>,
    /// The first entry is applied separately to the input and candidate
    /// streams before they are concatenated.
    pub disc_layers: Vec<LayerSpec>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub skip_align: SkipAlign,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_eps() -> f64 {
    1e-3
}

fn default_bn_momentum() -> f64 {
    0.99
}

/// Encoder rows of the generator, verbatim.
pub fn generator_encoder_rows() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(16, [4, 4, 4], [2, 2, 2]).without_batch_norm(),
        LayerSpec::conv(32, [4, 4, 4], [1, 2, 2]),
        LayerSpec::conv(64, [4, 4, 4], [1, 2, 2]),
        LayerSpec::conv(128, [3, 4, 4], [1, 2, 2]),
        LayerSpec::conv(128, [3, 4, 4], [1, 2, 2]),
        LayerSpec::conv(256, [3, 4, 4], [1, 2, 2]),
        LayerSpec::conv(256, [3, 4, 4], [1, 1, 1]),
    ]
}

/// The literal eight-row decoder. It does not map a
/// 16-step cube back onto itself (see [`default_arch`]); kept so the
/// literal layout can still be configured and inspected.
pub fn literal_decoder_rows() -> Vec<LayerSpec> {
    vec![
        LayerSpec::deconv(256, [3, 4, 4], [1, 1, 1]),
        LayerSpec::deconv(128, [3, 4, 4], [1, 2, 2]),
        LayerSpec::deconv(128, [3, 4, 4], [1, 2, 2]),
        LayerSpec::deconv(64, [4, 4, 4], [1, 2, 2]),
        LayerSpec::deconv(32, [4, 4, 4], [1, 2, 2]),
        LayerSpec::deconv(16, [4, 4, 4], [1, 2, 2]),
        LayerSpec::deconv(16, [4, 4, 4], [2, 1, 1]),
        LayerSpec::deconv(16, [4, 4, 4], [2, 1, 1]),
    ]
}

/// Discriminator rows, verbatim.
pub fn discriminator_rows() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(32, [4, 4, 4], [1, 2, 2]).without_batch_norm(),
        LayerSpec::conv(256, [4, 4, 4], [2, 2, 2]),
        LayerSpec::conv(1, [4, 4, 4], [2, 1, 1])
            .without_batch_norm()
            .with_activation(Activation::Identity),
    ]
}

/// Decoder that mirrors the encoder strides in reverse, taking filter
/// counts and kernels from the literal rows where they line up.
pub fn mirrored_decoder_rows() -> Vec<LayerSpec> {
    let strides = [
        [1, 1, 1],
        [1, 2, 2],
        [1, 2, 2],
        [1, 2, 2],
        [1, 2, 2],
        [1, 2, 2],
        [2, 2, 2],
    ];
    literal_decoder_rows()
        .into_iter()
        .zip(strides)
        .map(|(mut row, s)| {
            row.strides = s;
            row
        })
        .collect()
}

/// Default pix2pix3D layout for cubes of extents `input_shape`
/// (`T, H, W, 1`). Requires `H` and `W` divisible by 64 and `T` by 2.
pub fn default_arch(input_shape: Extents) -> Result<ArchConfig> {
    let [t, h, w, c] = input_shape;
    if c != 1 {
        return Err(Error::Config(format!(
            "expected a single input channel, got {c}"
        )));
    }
    if t % 2 != 0 || h % 64 != 0 || w % 64 != 0 {
        return Err(Error::Config(format!(
            "input extents {input_shape:?} are not divisible by (2, 64, 64); \
             use default_arch_ceil_mode for odd grids"
        )));
    }
    default_arch_ceil_mode(input_shape)
}

/// [`default_arch`] without the divisibility requirement. Odd extents are
/// halved with ceil rounding and the skip connections crop to fit.
pub fn default_arch_ceil_mode(input_shape: Extents) -> Result<ArchConfig> {
    let decoder = mirrored_decoder_rows();
    let n_enc = 7;
    // encoder i feeds decoder layer (n_enc - 1 - i): the input of decoder j
    // has the extents of encoder output n_enc - 1 - j.
    let skip_pairs = (1..decoder.len()).map(|j| (n_enc - 1 - j, j)).collect();
    let cfg = ArchConfig {
        input_shape,
        encoder: generator_encoder_rows(),
        decoder,
        output_layer: LayerSpec::conv(1, [4, 4, 4], [1, 1, 1])
            .without_batch_norm()
            .with_activation(Activation::Tanh),
        skip_pairs,
        disc_layers: discriminator_rows(),
        noise_sigma: 0.1,
        skip_align: SkipAlign::CropDecoder,
        bn_eps: default_bn_eps(),
        bn_momentum: default_bn_momentum(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// A three-level U-Net with `base`, `2 base` and `4 base` filters and a
/// two-layer patch discriminator, for grids too small or machines too slow
/// for the default layout. Same layer kinds, activations and dropout
/// placement as the default; the first level halves only the grid, the
/// other two halve time as well. Requires `T` divisible by 4.
pub fn compact_arch(input_shape: Extents, base: usize) -> Result<ArchConfig> {
    if input_shape[3] != 1 || base == 0 {
        return Err(Error::Config(format!(
            "compact layout needs one input channel and base >= 1, got {input_shape:?}, {base}"
        )));
    }
    let lrelu = Activation::LeakyRelu(0.2);
    let relu = Activation::Relu;
    let k = [3, 4, 4];
    let (grid, both) = ([1, 2, 2], [2, 2, 2]);
    let cfg = ArchConfig {
        input_shape,
        encoder: vec![
            LayerSpec::conv(base, k, grid)
                .without_batch_norm()
                .with_activation(lrelu),
            LayerSpec::conv(2 * base, k, both).with_activation(lrelu),
            LayerSpec::conv(4 * base, k, both).with_activation(lrelu),
        ],
        decoder: vec![
            LayerSpec::deconv(2 * base, k, both)
                .with_activation(relu)
                .with_dropout(Some(0.5)),
            LayerSpec::deconv(base, k, both).with_activation(relu),
            LayerSpec::deconv(base, k, grid).with_activation(relu),
        ],
        output_layer: LayerSpec::conv(1, [3, 3, 3], [1, 1, 1])
            .without_batch_norm()
            .with_activation(Activation::Tanh),
        skip_pairs: vec![(1, 1), (0, 2)],
        disc_layers: vec![
            LayerSpec::conv(base, k, grid)
                .without_batch_norm()
                .with_activation(lrelu),
            LayerSpec::conv(2 * base, k, both).with_activation(lrelu),
            LayerSpec::conv(1, k, [1, 1, 1])
                .without_batch_norm()
                .with_activation(Activation::Identity),
        ],
        noise_sigma: 0.05,
        skip_align: SkipAlign::CropDecoder,
        bn_eps: default_bn_eps(),
        bn_momentum: default_bn_momentum(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Per-layer extents obtained by propagating `input_shape` through a
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchShapes {
    /// Input extents of each encoder layer.
    pub encoder_in: Vec<Extents>,
    pub encoder_out: Vec<Extents>,
    /// Input extents of each decoder layer after skip concatenation.
    pub decoder_in: Vec<Extents>,
    pub decoder_out: Vec<Extents>,
    pub output_in: Extents,
    /// Generator output after any final crop.
    pub output: Extents,
    pub disc_in: Vec<Extents>,
    pub disc_logits: Extents,
}

fn align(cfg: &ArchConfig, dec: Extents, enc: Extents, where_: &str) -> Result<Extents> {
    let fits = |small: &Extents, big: &Extents| (0..3).all(|a| small[a] <= big[a]);
    match cfg.skip_align {
        SkipAlign::CropDecoder if fits(&enc, &dec) => Ok([enc[0], enc[1], enc[2], dec[3] + enc[3]]),
        SkipAlign::PadEncoder if fits(&enc, &dec) => Ok([dec[0], dec[1], dec[2], dec[3] + enc[3]]),
        _ => Err(Error::Config(format!(
            "{where_}: skip connection cannot join decoder extents {dec:?} with encoder extents {enc:?}"
        ))),
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<ArchShapes> {
        if self.input_shape.contains(&0) {
            return Err(Error::Config("input_shape extents must be positive".into()));
        }
        if self.encoder.is_empty() || self.disc_layers.is_empty() {
            return Err(Error::Config(
                "encoder and discriminator need at least one layer".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0)
            || !(self.bn_eps > 0.0)
            || !(0.0..1.0).contains(&self.bn_momentum)
        {
            return Err(Error::Config(
                "noise_sigma >= 0, bn_eps > 0 and bn_momentum in [0,1) required".into(),
            ));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            l.validate(&format!("encoder[{i}]"))?;
        }
        for (i, l) in self.decoder.iter().enumerate() {
            l.validate(&format!("decoder[{i}]"))?;
        }
        self.output_layer.validate("output_layer")?;
        for (i, l) in self.disc_layers.iter().enumerate() {
            l.validate(&format!("disc_layers[{i}]"))?;
        }
        for &(e, d) in &self.skip_pairs {
            if e >= self.encoder.len() || d > self.decoder.len() {
                return Err(Error::Config(format!("skip pair ({e}, {d}) out of range")));
            }
        }

        let mut h = self.input_shape;
        let mut encoder_in = Vec::new();
        let mut encoder_out = Vec::new();
        for l in &self.encoder {
            encoder_in.push(h);
            h = l.output_extents(h);
            encoder_out.push(h);
        }
        let mut decoder_in = Vec::new();
        let mut decoder_out = Vec::new();
        for j in 0..=self.decoder.len() {
            for &(e, _) in self.skip_pairs.iter().filter(|p| p.1 == j) {
                h = align(self, h, encoder_out[e], &format!("decoder[{j}]"))?;
            }
            if j == self.decoder.len() {
                break;
            }
            decoder_in.push(h);
            h = self.decoder[j].output_extents(h);
            decoder_out.push(h);
        }
        let output_in = h;
        let raw = self.output_layer.output_extents(h);
        let target = self.input_shape;
        let output = match self.skip_align {
            SkipAlign::PadEncoder if (0..3).all(|a| raw[a] >= target[a]) => {
                [target[0], target[1], target[2], raw[3]]
            }
            _ => raw,
        };
        if output != target {
            return Err(Error::Config(format!(
                "generator maps {target:?} to {output:?}; output must equal the input extents"
            )));
        }

        let first = self.disc_layers[0].output_extents(self.input_shape);
        let mut disc_in = vec![self.input_shape];
        let mut d = [first[0], first[1], first[2], 2 * first[3]];
        for l in &self.disc_layers[1..] {
            disc_in.push(d);
            d = l.output_extents(d);
        }
        Ok(ArchShapes {
            encoder_in,
            encoder_out,
            decoder_in,
            decoder_out,
            output_in,
            output,
            disc_in,
            disc_logits: d,
        })
    }
}
