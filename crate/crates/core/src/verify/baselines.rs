use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};

use crate::data::{Cube, Grid, SpreadCube};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Calendar key of a date; Feb 29 shares the Feb 28 slot.
pub fn month_day(d: NaiveDate) -> (u32, u32) {
    match (d.month(), d.day()) {
        (2, 29) => (2, 28),
        md => md,
    }
}

/// Per-calendar-day running sums of training spreads.
#[derive(Debug, Clone, Default)]
pub struct Climatology {
    slots: BTreeMap<(u32, u32), (Vec<f64>, usize)>,
    layout: Option<([usize; 3], Grid)>,
}

impl Climatology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, spread: &SpreadCube) -> Result<()> {
        let layout = (spread.extents(), spread.grid);
        match &self.layout {
            Some(l) if *l != layout => {
                return Err(Error::Data(format!(
                    "climatology input {} has a different layout",
                    spread.init_date
                )))
            }
            None => self.layout = Some(layout),
            _ => {}
        }
        let (sum, count) = self
            .slots
            .entry(month_day(spread.init_date))
            .or_insert_with(|| (vec![0.0; spread.values.numel()], 0));
        for (s, &v) in sum.iter_mut().zip(spread.values.data()) {
            *s += f64::from(v);
        }
        *count += 1;
        Ok(())
    }

    /// Number of training runs that fell on the calendar day of `date`.
    pub fn count(&self, date: NaiveDate) -> usize {
        self.slots.get(&month_day(date)).map_or(0, |s| s.1)
    }

    /// Mean training spread for the calendar day of `date`, labeled `date`.
    pub fn predict(&self, date: NaiveDate) -> Result<SpreadCube> {
        let (sum, count) = self
            .slots
            .get(&month_day(date))
            .ok_or_else(|| Error::Data(format!("no training run on calendar day of {date}")))?;
        let (extents, grid) = self.layout.expect("layout set with first slot");
        let n = *count as f64;
        let values = Tensor::new(
            extents.to_vec(),
            sum.iter().map(|s| (s / n) as f32).collect(),
        )?;
        Cube::new(date, grid, values)
    }
}

/// Climatological spread for `date` from a list of training spreads.
pub fn climatology_spread(train: &[SpreadCube], date: NaiveDate) -> Result<SpreadCube> {
    let mut c = Climatology::new();
    for s in train {
        c.add(s)?;
    }
    c.predict(date)
}

/// The true spread of the day before `target`, relabeled to `target`.
pub fn persistence_spread(
    archive: &BTreeMap<NaiveDate, SpreadCube>,
    target: NaiveDate,
) -> Result<SpreadCube> {
    let prev = target
        .pred_opt()
        .ok_or_else(|| Error::Data(format!("no day before {target}")))?;
    archive
        .get(&prev)
        .map(|c| c.relabeled(target))
        .ok_or_else(|| {
            Error::Data(format!(
                "persistence for {target} needs the spread of {prev}"
            ))
        })
}
