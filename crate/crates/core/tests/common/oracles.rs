//! Direct-formula oracles for the metrics and brute-force ones for the
//! baselines.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spreadcast::data::{
    chronological_split, DatasetIndex, Grid, RunSource, SpreadCube, SynthConfig,
};
use spreadcast::verify::{
    persistence_spread, rmse, spread_integral, ssim, Climatology, MetricConfig, SsimDenominator,
};

use super::{date, tiny_synth};

pub fn field(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn ssim_oracle(x: &[f64], y: &[f64], c1: f64, c2: f64, stddev: bool) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let vx = mean(&dx.iter().map(|d| d * d).collect::<Vec<_>>());
    let vy = mean(&dy.iter().map(|d| d * d).collect::<Vec<_>>());
    let cov = mean(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    let s = if stddev {
        vx.sqrt() + vy.sqrt()
    } else {
        vx + vy
    };
    (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (s + c2))
}

pub fn area_mean_oracle(x: &[f64], h: usize, w: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..h {
        let lat = 90.0 - 180.0 * (i as f64 + 0.5) / h as f64;
        let c = lat.to_radians().cos();
        for j in 0..w {
            num += c * x[i * w + j];
            den += c;
        }
    }
    num / den
}

fn close(what: &str, k: usize, got: f64, want: f64, tol: f64) -> Result<f64, String> {
    let err = (got - want).abs();
    if err < tol {
        Ok(err)
    } else {
        Err(format!("{what}, field {k}: {got} vs oracle {want}"))
    }
}

/// rmse, both SSIM variants and the spread integral on 100 random 8x16
/// fields against the oracles above. Returns the largest gap.
pub fn metric_oracles() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (h, w) = (8, 16);
    let grid = Grid::global(h, w);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let x = field(&mut rng, h * w, 0.0, 60.0);
        let y = field(&mut rng, h * w, 0.0, 60.0);
        let direct =
            (x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (h * w) as f64).sqrt();
        worst = worst.max(close("rmse", k, rmse(&x, &y).unwrap(), direct, 1e-10)?);

        let mut cfg = MetricConfig::from_range(60.0).unwrap();
        let want = ssim_oracle(&x, &y, cfg.c1, cfg.c2, false);
        worst = worst.max(close("ssim", k, ssim(&x, &y, &cfg).unwrap(), want, 1e-10)?);
        cfg.ssim_denominator = SsimDenominator::Stddev;
        let want = ssim_oracle(&x, &y, cfg.c1, cfg.c2, true);
        worst = worst.max(close(
            "ssim (stddev)",
            k,
            ssim(&x, &y, &cfg).unwrap(),
            want,
            1e-10,
        )?);

        let got = spread_integral(&x, h, &grid).unwrap();
        worst = worst.max(close(
            "spread_integral",
            k,
            got,
            area_mean_oracle(&x, h, w),
            1e-10,
        )?);
    }
    Ok(worst)
}

/// Spread integral of cos(lat) on the 64x128 grid, and its distance from
/// a 200k-point midpoint quadrature of the continuous ratio.
pub fn cos_lat_integral() -> Result<(f64, f64), String> {
    let (h, w) = (64, 128);
    let grid = Grid::global(h, w);
    let f: Vec<f64> = (0..h * w)
        .map(|g| grid.lat(g / w).to_radians().cos())
        .collect();
    let got = spread_integral(&f, h, &grid).unwrap();
    let n = 200_000;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let phi = -PI / 2.0 + PI * (i as f64 + 0.5) / n as f64;
        num += phi.cos().powi(2);
        den += phi.cos();
    }
    let fine = num / den;
    if (fine - PI / 4.0).abs() > 1e-9 {
        return Err(format!("reference quadrature {fine} is off"));
    }
    if (got - PI / 4.0).abs() >= 1e-3 || (got - fine).abs() >= 1e-3 {
        return Err(format!("cos(lat) integrates to {got}"));
    }
    Ok((got, fine))
}

/// Every daily spread of seven synthetic years, 2010 through 2016.
pub fn seven_years() -> (SynthConfig, BTreeMap<NaiveDate, SpreadCube>) {
    let cfg = SynthConfig {
        years: 7,
        start_date: date("2010-01-01"),
        ..tiny_synth()
    };
    let all = cfg
        .dates()
        .dates
        .into_iter()
        .map(|d| (d, cfg.pair(d).unwrap().1))
        .collect();
    (cfg, all)
}

pub fn calendar_key(d: NaiveDate) -> (u32, u32) {
    if d.month() == 2 && d.day() == 29 {
        (2, 28)
    } else {
        (d.month(), d.day())
    }
}

/// Climatology fitted on 2010-2015, in both insertion orders, against a
/// brute-force calendar grouping for every day of 2016. Returns the number
/// of days compared.
pub fn climatology_oracle(all: &BTreeMap<NaiveDate, SpreadCube>) -> Result<usize, String> {
    let train: Vec<&SpreadCube> = all.values().filter(|c| c.init_date.year() < 2016).collect();
    let mut clim = Climatology::new();
    for c in &train {
        clim.add(c).unwrap();
    }
    let mut reversed = Climatology::new();
    for c in train.iter().rev() {
        reversed.add(c).unwrap();
    }
    let mut checked = 0;
    for target in all.keys().filter(|d| d.year() == 2016) {
        let group: Vec<&&SpreadCube> = train
            .iter()
            .filter(|c| calendar_key(c.init_date) == calendar_key(*target))
            .collect();
        let n = group.len();
        if n == 0 {
            return Err(format!("no training days for {target}"));
        }
        let numel = group[0].values.numel();
        let want: Vec<f32> = (0..numel)
            .map(|g| {
                let s: f64 = group.iter().map(|c| f64::from(c.values.data()[g])).sum();
                (s / n as f64) as f32
            })
            .collect();
        let got = clim.predict(*target).unwrap();
        if got.values.data() != &want[..] || got.init_date != *target {
            return Err(format!("climatology differs from brute force on {target}"));
        }
        if reversed.predict(*target).unwrap() != got {
            return Err(format!(
                "climatology depends on insertion order on {target}"
            ));
        }
        checked += 1;
    }
    // Feb 29 falls back on the Feb 28 slot
    if clim.count(date("2016-02-29")) != clim.count(date("2016-02-28")) {
        return Err("Feb 29 does not share the Feb 28 slot".into());
    }
    Ok(checked)
}

/// Persistence against a one-day-lag join over the test split. Returns
/// the number of days compared.
pub fn persistence_oracle(all: &BTreeMap<NaiveDate, SpreadCube>) -> Result<usize, String> {
    let idx = DatasetIndex::new(all.keys().copied().collect()).unwrap();
    let test = chronological_split(&idx).unwrap().test;
    for d in &test.dates {
        let got = persistence_spread(all, *d).unwrap();
        let prev = &all[&(*d - chrono::Days::new(1))];
        if got.values != prev.values || got.grid != prev.grid || got.init_date != *d {
            return Err(format!("persistence differs from the lag join on {d}"));
        }
    }
    if persistence_spread(all, *all.keys().next().unwrap()).is_ok() {
        return Err("persistence invented a day before the archive".into());
    }
    Ok(test.len())
}
