//! Forecast cubes and their file format.
//!
//! Cube file (little-endian): magic `ESC1`, version `u32`, init date as a
//! length-prefixed ISO-8601 string, rank `u32` (= 3), extents `u64 × 3`
//! (T, H, W), grid metadata `f64 × 4` (lat0, dlat, lon0, dlon), dtype `u32`
//! (0 = f32), row-major payload, CRC-32.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{Error, FormatError, Result};
use crate::numerics::Tensor;

const MAGIC: [u8; 4] = *b"ESC1";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

/// Forecast steps per run.
pub const LEAD_STEPS: usize = 16;
/// Hours between consecutive forecast steps.
pub const STEP_HOURS: usize = 6;

/// Lead time in hours of step `k` (0-based): 6, 12, ..., 96.
pub fn lead_hours(k: usize) -> usize {
    STEP_HOURS * (k + 1)
}

/// Regular latitude/longitude grid, described by the center of the first
/// cell and the spacing along each axis, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lat0: f64,
    pub dlat: f64,
    pub lon0: f64,
    pub dlon: f64,
}

impl Grid {
    /// Global grid of `nlat × nlon` cells, latitudes running north to south.
    /// Cell centers never sit on a pole.
    pub fn global(nlat: usize, nlon: usize) -> Self {
        let dlat = -180.0 / nlat as f64;
        let dlon = 360.0 / nlon as f64;
        Self {
            lat0: 90.0 + dlat / 2.0,
            dlat,
            lon0: 0.0,
            dlon,
        }
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat0 + i as f64 * self.dlat
    }

    pub fn lon(&self, j: usize) -> f64 {
        self.lon0 + j as f64 * self.dlon
    }

    pub fn validate(&self, nlat: usize) -> Result<()> {
        let ok = [self.lat0, self.dlat, self.lon0, self.dlon]
            .iter()
            .all(|v| v.is_finite())
            && self.dlat != 0.0
            && self.dlon != 0.0;
        let last = self.lat(nlat.saturating_sub(1));
        if !ok || self.lat0.abs() > 90.0 || last.abs() > 90.0 {
            return Err(Error::Data(format!(
                "degenerate grid {self:?} for {nlat} latitudes"
            )));
        }
        Ok(())
    }
}

/// One forecast run (or its spread): values `(T, H, W)` on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub init_date: NaiveDate,
    pub grid: Grid,
    pub values: Tensor<f32>,
}

pub type ForecastCube = Cube;
/// Same layout as a [`ForecastCube`]; values are non-negative spreads.
pub type SpreadCube = Cube;

impl Cube {
    pub fn new(init_date: NaiveDate, grid: Grid, values: Tensor<f32>) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::Data(format!(
                "cube values must be (T, H, W), got {:?}",
                values.shape()
            )));
        }
        grid.validate(values.shape()[1])?;
        if !values.all_finite() {
            return Err(Error::NonFinite {
                what: format!("cube {init_date}"),
            });
        }
        Ok(Self {
            init_date,
            grid,
            values,
        })
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn extents(&self) -> [usize; 3] {
        let s = self.values.shape();
        [s[0], s[1], s[2]]
    }

    /// Values of step `k` as a row-major `(H, W)` slice.
    pub fn slice(&self, k: usize) -> &[f32] {
        let [_, h, w] = self.extents();
        &self.values.data()[k * h * w..(k + 1) * h * w]
    }

    /// Same values under a different date (persistence relabels the
    /// previous day's cube this way).
    pub fn relabeled(&self, date: NaiveDate) -> Self {
        Self {
            init_date: date,
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new(MAGIC, VERSION);
        e.str(&self.init_date.format("%Y-%m-%d").to_string());
        e.u32(3);
        for x in self.extents() {
            e.u64(x as u64);
        }
        for v in [
            self.grid.lat0,
            self.grid.dlat,
            self.grid.lon0,
            self.grid.dlon,
        ] {
            e.f64(v);
        }
        e.u32(DTYPE_F32);
        e.f32s(self.values.data());
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut d = Decoder::open(bytes, MAGIC, VERSION)?;
        let date = d.str()?;
        let init_date = NaiveDate::parse_from_str(&date, "%Y-%m-%d")
            .map_err(|_| FormatError::Header(format!("bad init date {date:?}")))?;
        let extents = d.extents(3)?;
        if extents.len() != 3 {
            return Err(FormatError::Header(format!(
                "cube rank {} != 3",
                extents.len()
            )));
        }
        let grid = Grid {
            lat0: d.f64()?,
            dlat: d.f64()?,
            lon0: d.f64()?,
            dlon: d.f64()?,
        };
        let dtype = d.u32()?;
        if dtype != DTYPE_F32 {
            return Err(FormatError::UnsupportedDtype(dtype));
        }
        let data = d.f32_payload(&extents)?;
        // payload must account for every remaining byte
        if d.remaining() != 0 {
            return Err(FormatError::PayloadLength {
                extents,
                payload_bytes: data.len() * 4 + d.remaining(),
            });
        }
        d.finish()?;
        let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
        let values = Tensor::new(shape, data).map_err(|e| FormatError::Header(e.to_string()))?;
        Cube::new(init_date, grid, values).map_err(|e| FormatError::Header(e.to_string()))
    }
}

pub fn write_cube(cube: &Cube, path: &Path) -> Result<()> {
    write_atomic(path, &cube.encode())
}

pub fn read_cube(path: &Path) -> Result<Cube> {
    Cube::decode(&read_file(path)?).map_err(|k| Error::format(path, k))
}
