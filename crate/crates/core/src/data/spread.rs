use serde::{Deserialize, Serialize};

use super::cube::{Cube, ForecastCube, SpreadCube};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// How the spread of an ensemble is measured at each gridpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadEstimator {
    /// Standard deviation about the ensemble mean, divisor `M - 1`.
    #[default]
    Sample,
    /// Standard deviation about the ensemble mean, divisor `M`.
    Population,
    /// Root-mean-square deviation of the members from the control run.
    AboutControl,
}

/// Gridpointwise spread of `members`, two-pass in 64-bit.
pub fn spread_values(
    members: &[&[f64]],
    control: Option<&[f64]>,
    estimator: SpreadEstimator,
) -> Result<Vec<f64>> {
    let m = members.len();
    if m < 2 {
        return Err(Error::Data(format!(
            "spread needs at least 2 members, got {m}"
        )));
    }
    let n = members[0].len();
    if members.iter().any(|x| x.len() != n) || control.is_some_and(|c| c.len() != n) {
        return Err(Error::shape("compute_spread", "members differ in size"));
    }
    let mut out = vec![0.0; n];
    let center: Vec<f64> = match (estimator, control) {
        (SpreadEstimator::AboutControl, Some(c)) => c.to_vec(),
        (SpreadEstimator::AboutControl, None) => {
            return Err(Error::Data(
                "spread about the control needs the control run".into(),
            ))
        }
        _ => {
            let mut mean = vec![0.0; n];
            for x in members {
                for (a, &v) in mean.iter_mut().zip(*x) {
                    *a += v;
                }
            }
            mean.iter_mut().for_each(|a| *a /= m as f64);
            mean
        }
    };
    for x in members {
        for ((o, &v), &c) in out.iter_mut().zip(*x).zip(&center) {
            *o += (v - c) * (v - c);
        }
    }
    let div = match estimator {
        SpreadEstimator::Sample => (m - 1) as f64,
        SpreadEstimator::Population | SpreadEstimator::AboutControl => m as f64,
    };
    out.iter_mut().for_each(|o| *o = (*o / div).sqrt());
    Ok(out)
}

fn to_f64(c: &Cube) -> Vec<f64> {
    c.values.data().iter().map(|&v| f64::from(v)).collect()
}

/// Spread cube of an ensemble. All cubes must share grid and init date.
pub fn compute_spread(
    control: &ForecastCube,
    members: &[ForecastCube],
    estimator: SpreadEstimator,
) -> Result<SpreadCube> {
    for m in members {
        if m.extents() != control.extents()
            || m.grid != control.grid
            || m.init_date != control.init_date
        {
            return Err(Error::Data(format!(
                "member of {} does not match the control run's grid or date",
                m.init_date
            )));
        }
    }
    let cols: Vec<Vec<f64>> = members.iter().map(to_f64).collect();
    let refs: Vec<&[f64]> = cols.iter().map(|v| v.as_slice()).collect();
    let ctrl = to_f64(control);
    let s = spread_values(&refs, Some(&ctrl), estimator)?;
    let values = Tensor::new(
        control.values.shape(),
        s.into_iter().map(|v| v as f32).collect(),
    )?;
    Cube::new(control.init_date, control.grid, values)
}

/// A control run, its perturbed members and their spread.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub control: ForecastCube,
    /// Empty when the members were not retained.
    pub members: Vec<ForecastCube>,
    pub spread: SpreadCube,
}

impl EnsembleRun {
    pub fn from_members(
        control: ForecastCube,
        members: Vec<ForecastCube>,
        estimator: SpreadEstimator,
    ) -> Result<Self> {
        let spread = compute_spread(&control, &members, estimator)?;
        Ok(Self {
            control,
            members,
            spread,
        })
    }
}
