//! Synthetic ensemble forecasts.
//!
//! The control field is a zonal wave plus a few Gaussian bumps that drift
//! eastward:
//!
//! `Z = Z0 + A cos(lat) sin(k lon - w t + theta_d) + sum_j B_j exp(-d_j^2 / 2 s_j^2)`
//!
//! `theta_d` combines a seasonal phase with smooth date-keyed noise, so the
//! calendar day says something about the flow but not everything. Member
//! `i` shifts the phase by `xi_i * sigma0 * (t / 96h)^p` and scales each bump
//! amplitude by `1 + zeta_ij * sigma0 * (t / 96h)^p`, with `xi`, `zeta`
//! standard normal and fixed per member. The spread therefore grows with
//! lead time and is concentrated where the control field is steep in phase
//! or carries a bump, which makes it learnable from the control run.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::cube::{lead_hours, Cube, Grid};
use super::split::DatasetIndex;
use super::spread::{EnsembleRun, SpreadEstimator};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    /// Center latitude in degrees.
    pub lat: f64,
    /// Center longitude at initialization, degrees.
    pub lon: f64,
    /// Gaussian width, degrees.
    pub width: f64,
    /// Peak height anomaly, meters.
    pub amplitude: f64,
    /// Eastward drift, degrees per hour.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub steps: usize,
    pub members: usize,
    /// Mean height, meters.
    pub z_mean: f64,
    /// Wave amplitude, meters.
    pub amplitude: f64,
    /// Relative seasonal modulation of the wave amplitude.
    pub seasonal_amplitude: f64,
    /// Zonal wavenumber.
    pub wavenumber: f64,
    /// Phase speed of the wave, radians per hour.
    pub omega: f64,
    /// Stddev of the date-keyed phase noise, radians.
    pub phase_jitter: f64,
    /// Stddev of the date-keyed bump longitude offset, degrees.
    pub bump_jitter: f64,
    /// Days between independent knots of the date-keyed noise.
    pub knot_days: u32,
    pub bumps: Vec<Bump>,
    /// Perturbation scale at 96 h lead time.
    pub sigma0: f64,
    /// Growth exponent of the perturbations in lead time.
    pub growth_p: f64,
    pub estimator: SpreadEstimator,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Number of calendar years of daily runs.
    pub years: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid_h: 64,
            grid_w: 128,
            steps: 16,
            members: 20,
            z_mean: 5500.0,
            amplitude: 150.0,
            seasonal_amplitude: 0.3,
            wavenumber: 4.0,
            omega: 2.0 * PI / 120.0,
            phase_jitter: 1.5,
            bump_jitter: 60.0,
            knot_days: 4,
            bumps: vec![
                Bump {
                    lat: 50.0,
                    lon: 0.0,
                    width: 10.0,
                    amplitude: 120.0,
                    speed: 0.5,
                },
                Bump {
                    lat: -40.0,
                    lon: 120.0,
                    width: 12.0,
                    amplitude: -100.0,
                    speed: 0.4,
                },
                Bump {
                    lat: 20.0,
                    lon: 240.0,
                    width: 8.0,
                    amplitude: 80.0,
                    speed: 0.7,
                },
            ],
            sigma0: 0.4,
            growth_p: 1.0,
            estimator: SpreadEstimator::Sample,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
            years: 9,
        }
    }
}

fn days_since_epoch(d: NaiveDate) -> i64 {
    d.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap())
        .num_days()
}

/// Smoothly interpolated standard-normal noise over days: independent
/// values at every `knot`-th day, cosine-blended in between.
fn value_noise(rng: &RngStream, day: i64, knot: u32) -> f64 {
    let knot = i64::from(knot.max(1));
    let k0 = day.div_euclid(knot);
    let frac = day.rem_euclid(knot) as f64 / knot as f64;
    let at = |k: i64| rng.split(k as u64).normal();
    let w = 0.5 - 0.5 * (PI * frac).cos();
    let (a, b) = (at(k0), at(k0 + 1));
    // keep unit variance between knots
    (a * (1.0 - w) + b * w) / ((1.0 - w).powi(2) + w * w).sqrt()
}

fn wrap180(x: f64) -> f64 {
    (x + 180.0).rem_euclid(360.0) - 180.0
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::Config(format!(
                "members must be >= 2, got {}",
                self.members
            )));
        }
        if !(self.sigma0 >= 0.0) || !self.sigma0.is_finite() {
            return Err(Error::Config(format!(
                "sigma0 must be >= 0, got {}",
                self.sigma0
            )));
        }
        if self.grid_h == 0 || self.grid_w == 0 || self.steps == 0 || self.years == 0 {
            return Err(Error::Config(
                "grid, steps and years must be positive".into(),
            ));
        }
        if self.bumps.iter().any(|b| !(b.width > 0.0)) {
            return Err(Error::Config("bump widths must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::global(self.grid_h, self.grid_w)
    }

    /// Daily init dates from `start_date` over `years` calendar years.
    pub fn dates(&self) -> DatasetIndex {
        let end = self
            .start_date
            .with_year(self.start_date.year() + self.years as i32)
            .unwrap_or(self.start_date + chrono::Days::new(365 * u64::from(self.years)));
        DatasetIndex {
            dates: self
                .start_date
                .iter_days()
                .take_while(|d| *d < end)
                .collect(),
        }
    }

    fn date_rng(&self, date: NaiveDate) -> RngStream {
        RngStream::new(self.seed, 0).split(days_since_epoch(date) as u64)
    }

    /// Generates the control run, the members (kept only if
    /// `keep_members`) and the spread for one init date.
    pub fn run(&self, date: NaiveDate, keep_members: bool) -> Result<EnsembleRun> {
        self.validate()?;
        let (h, w, steps) = (self.grid_h, self.grid_w, self.steps);
        let grid = self.grid();
        let day = days_since_epoch(date);
        let season = 2.0 * PI * f64::from(date.ordinal0()) / 365.25;
        let noise = RngStream::new(self.seed, 1);
        let theta = season
            + self.phase_jitter * value_noise(&noise.split_str("phase"), day, self.knot_days);
        let amp = self.amplitude * (1.0 + self.seasonal_amplitude * season.cos());
        let offsets: Vec<f64> = (0..self.bumps.len())
            .map(|j| {
                self.bump_jitter
                    * value_noise(
                        &noise.split_str("bump").split(j as u64),
                        day,
                        self.knot_days,
                    )
            })
            .collect();

        let lat_rad: Vec<f64> = (0..h).map(|i| grid.lat(i).to_radians()).collect();
        let cos_lat: Vec<f64> = lat_rad.iter().map(|l| l.cos()).collect();
        let (sin_k, cos_k): (Vec<f64>, Vec<f64>) = (0..w)
            .map(|j| (self.wavenumber * grid.lon(j).to_radians()).sin_cos())
            .unzip();
        // bump factors are separable in latitude and longitude
        let lat_f: Vec<Vec<f64>> = self
            .bumps
            .iter()
            .map(|b| {
                (0..h)
                    .map(|i| (-(grid.lat(i) - b.lat).powi(2) / (2.0 * b.width * b.width)).exp())
                    .collect()
            })
            .collect();

        let member_rng = self.date_rng(date).split_str("members");
        let draws: Vec<(f64, Vec<f64>)> = (0..self.members)
            .map(|m| {
                let mut r = member_rng.split(m as u64);
                let xi = r.normal();
                (xi, r.fill_normal(self.bumps.len()))
            })
            .collect();
        let control_draw = (0.0, vec![0.0; self.bumps.len()]);

        let field = |xi: f64, zeta: &[f64]| -> Result<Cube> {
            let mut out = Vec::with_capacity(steps * h * w);
            for k in 0..steps {
                let t = lead_hours(k) as f64;
                let g = self.sigma0 * (t / 96.0).powf(self.growth_p);
                let (sp, cp) = (theta - self.omega * t + xi * g).sin_cos();
                let lon_f: Vec<Vec<f64>> = self
                    .bumps
                    .iter()
                    .enumerate()
                    .map(|(j, b)| {
                        let c = b.lon + offsets[j] + b.speed * t;
                        let shrink = b.lat.to_radians().cos();
                        (0..w)
                            .map(|x| {
                                (-(wrap180(grid.lon(x) - c) * shrink).powi(2)
                                    / (2.0 * b.width * b.width))
                                    .exp()
                            })
                            .collect()
                    })
                    .collect();
                let amps: Vec<f64> = self
                    .bumps
                    .iter()
                    .zip(zeta)
                    .map(|(b, z)| b.amplitude * (1.0 + z * g))
                    .collect();
                for i in 0..h {
                    let wave = amp * cos_lat[i];
                    for x in 0..w {
                        let mut z = self.z_mean + wave * (sin_k[x] * cp + cos_k[x] * sp);
                        for j in 0..amps.len() {
                            z += amps[j] * lat_f[j][i] * lon_f[j][x];
                        }
                        out.push(z as f32);
                    }
                }
            }
            Cube::new(date, grid, Tensor::new([steps, h, w], out)?)
        };

        let control = field(control_draw.0, &control_draw.1)?;
        let members = draws
            .iter()
            .map(|(xi, zeta)| field(*xi, zeta))
            .collect::<Result<Vec<_>>>()?;
        let mut run = EnsembleRun::from_members(control, members, self.estimator)?;
        if !keep_members {
            run.members.clear();
        }
        Ok(run)
    }
}

/// [`SynthConfig::run`] as a free function.
pub fn synth_ensemble(cfg: &SynthConfig, date: NaiveDate) -> Result<EnsembleRun> {
    cfg.run(date, true)
}
