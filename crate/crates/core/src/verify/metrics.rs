use serde::{Deserialize, Serialize};

use crate::data::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimDenominator {
    /// `(mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2)`.
    #[default]
    Variance,
    /// `(mu_x^2 + mu_y^2 + C1)(sd_x + sd_y + C2)`. With this form
    /// `ssim(x, x)` is not 1 unless the field is constant.
    Stddev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseWeighting {
    #[default]
    Unweighted,
    /// Cell areas proportional to `cos(lat)`.
    CosLat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub c1: f64,
    pub c2: f64,
    /// Data range the constants were derived from.
    pub data_range: f64,
    #[serde(default)]
    pub ssim_denominator: SsimDenominator,
    #[serde(default)]
    pub rmse_weighting: RmseWeighting,
}

impl MetricConfig {
    /// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
    pub fn from_range(data_range: f64) -> Result<Self> {
        let cfg = Self {
            c1: (0.01 * data_range).powi(2),
            c2: (0.03 * data_range).powi(2),
            data_range,
            ssim_denominator: SsimDenominator::Variance,
            rmse_weighting: RmseWeighting::Unweighted,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0) || !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(Error::Config(format!(
                "SSIM constants must be positive, got C1={} C2={}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

fn same_len(op: &'static str, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::shape(
            op,
            format!("fields of {} and {} values", x.len(), y.len()),
        ));
    }
    Ok(())
}

/// `sqrt(mean((x - y)^2))`, unweighted.
pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len("rmse", x, y)?;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// RMSE of `(H, W)` slices with `cos(lat)` cell weights.
pub fn rmse_area_weighted(x: &[f64], y: &[f64], h: usize, grid: &Grid) -> Result<f64> {
    same_len("rmse", x, y)?;
    let w = lat_weights(h, x.len(), grid)?;
    let cols = x.len() / h;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (xr, yr)) in x.chunks_exact(cols).zip(y.chunks_exact(cols)).enumerate() {
        let ss: f64 = xr.iter().zip(yr).map(|(a, b)| (a - b) * (a - b)).sum();
        num += w[i] * ss;
        den += w[i] * cols as f64;
    }
    Ok((num / den).sqrt())
}

/// Single-window SSIM from global statistics of the two fields. Means,
/// variances and covariance use divisor `N`.
pub fn ssim(x: &[f64], y: &[f64], cfg: &MetricConfig) -> Result<f64> {
    same_len("ssim", x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    let spread_term = match cfg.ssim_denominator {
        SsimDenominator::Variance => vx + vy,
        SsimDenominator::Stddev => vx.sqrt() + vy.sqrt(),
    };
    Ok((2.0 * mx * my + cfg.c1) * (2.0 * cxy + cfg.c2)
        / ((mx * mx + my * my + cfg.c1) * (spread_term + cfg.c2)))
}

fn lat_weights(h: usize, len: usize, grid: &Grid) -> Result<Vec<f64>> {
    if h == 0 || len % h != 0 {
        return Err(Error::shape(
            "spread_integral",
            format!("{len} values do not form {h} rows"),
        ));
    }
    grid.validate(h)?;
    let w: Vec<f64> = (0..h).map(|i| grid.lat(i).to_radians().cos()).collect();
    if w.iter().any(|&v| v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Data(format!("degenerate grid {grid:?}")));
    }
    Ok(w)
}

/// Area mean of a `(H, W)` slice with midpoint `cos(lat)` weights.
///
/// Evaluated as `r + sum w (x - r) / sum w` around the first value `r`, so
/// a constant field comes back exactly.
pub fn spread_integral(x: &[f64], h: usize, grid: &Grid) -> Result<f64> {
    let w = lat_weights(h, x.len(), grid)?;
    let cols = x.len() / h;
    let r = x[0];
    let (mut num, mut den) = (0.0, 0.0);
    for (row, &wi) in x.chunks_exact(cols).zip(&w) {
        num += wi * row.iter().map(|v| v - r).sum::<f64>();
        den += wi * cols as f64;
    }
    Ok(r + num / den)
}
