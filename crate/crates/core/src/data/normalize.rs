use serde::{Deserialize, Serialize};

use super::cube::{Cube, SpreadCube};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `y = (x - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub offset: f64,
    pub scale: f64,
}

impl Affine {
    /// Maps `[min, max]` onto `[-1, 1]`.
    pub fn from_range(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(Error::Data(format!(
                "degenerate normalization range [{min}, {max}]"
            )));
        }
        Ok(Self {
            offset: 0.5 * (max + min),
            scale: 0.5 * (max - min),
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }
}

/// Running minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Default for Range {
    fn default() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl Range {
    pub fn observe(&mut self, values: &[f32]) {
        for &v in values {
            let v = f64::from(v);
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }
}

/// Affine maps for the control field and the spread, fitted on the
/// training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub control: Affine,
    pub spread: Affine,
}

/// Accumulates training-split ranges one run at a time.
#[derive(Debug, Clone, Default)]
pub struct NormalizerFit {
    pub control: Range,
    pub spread: Range,
}

impl NormalizerFit {
    pub fn observe(&mut self, control: &Cube, spread: &SpreadCube) {
        self.control.observe(control.values.data());
        self.spread.observe(spread.values.data());
    }

    pub fn finish(&self) -> Result<Normalizer> {
        Ok(Normalizer {
            control: Affine::from_range(self.control.min, self.control.max)?,
            spread: Affine::from_range(self.spread.min, self.spread.max)?,
        })
    }
}

impl Normalizer {
    pub fn fit<'a>(pairs: impl IntoIterator<Item = (&'a Cube, &'a SpreadCube)>) -> Result<Self> {
        let mut f = NormalizerFit::default();
        for (c, s) in pairs {
            f.observe(c, s);
        }
        f.finish()
    }

    fn map(values: &Tensor<f32>, f: impl Fn(f64) -> f64) -> Tensor<f32> {
        values.map(|v| f(f64::from(v)) as f32)
    }

    /// Normalized control values shaped `(T, H, W, 1)` for the generator.
    pub fn control_input(&self, control: &Cube) -> Result<Tensor<f32>> {
        let [t, h, w] = control.extents();
        Self::map(&control.values, |x| self.control.apply(x)).reshape([t, h, w, 1])
    }

    /// Normalized spread values shaped `(T, H, W, 1)`.
    pub fn spread_target(&self, spread: &SpreadCube) -> Result<Tensor<f32>> {
        let [t, h, w] = spread.extents();
        Self::map(&spread.values, |x| self.spread.apply(x)).reshape([t, h, w, 1])
    }

    /// Physical spread from a normalized `(T, H, W, 1)` prediction, clamped
    /// at zero.
    pub fn spread_output(&self, y: &Tensor<f32>, like: &Cube) -> Result<SpreadCube> {
        let values =
            Self::map(y, |v| self.spread.invert(v).max(0.0)).reshape(like.extents().to_vec())?;
        Cube::new(like.init_date, like.grid, values)
    }
}
