use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::metrics::{
    rmse, rmse_area_weighted, spread_integral, ssim, MetricConfig, RmseWeighting,
};
use crate::binfmt::{write_atomic, write_json};
use crate::data::{lead_hours, SpreadCube};
use crate::error::{Error, Result};
use crate::threads::par_map;

/// Method name under which the true spread itself is scored.
pub const TRUTH: &str = "truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRow {
    pub date: NaiveDate,
    pub method: String,
    pub lead_hours: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub spread_integral: f64,
}

/// Per-lead-hour metrics averaged over the evaluated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub lead_hours: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub spread_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub mean_rmse: f64,
    pub mean_ssim: f64,
    pub mean_spread_integral: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: MetricConfig,
    /// Method order as first supplied, truth first.
    pub methods: Vec<String>,
    pub rows: Vec<EvalRow>,
    /// Sorted by ascending mean RMSE; ties keep method order.
    pub summary: Vec<SummaryRow>,
    pub daily: Vec<DailyRow>,
}

fn score(
    truth: &SpreadCube,
    pred: &SpreadCube,
    method: &str,
    cfg: &MetricConfig,
) -> Result<Vec<DailyRow>> {
    if pred.extents() != truth.extents() {
        return Err(Error::shape(
            "evaluate",
            format!(
                "{method} on {}: {:?} vs truth {:?}",
                truth.init_date,
                pred.extents(),
                truth.extents()
            ),
        ));
    }
    let [steps, h, _] = truth.extents();
    (0..steps)
        .map(|k| {
            let x: Vec<f64> = pred.slice(k).iter().map(|&v| f64::from(v)).collect();
            let y: Vec<f64> = truth.slice(k).iter().map(|&v| f64::from(v)).collect();
            let e = match cfg.rmse_weighting {
                RmseWeighting::Unweighted => rmse(&x, &y)?,
                RmseWeighting::CosLat => rmse_area_weighted(&x, &y, h, &truth.grid)?,
            };
            Ok(DailyRow {
                date: truth.init_date,
                method: method.to_string(),
                lead_hours: lead_hours(k),
                rmse: e,
                ssim: ssim(&x, &y, cfg)?,
                spread_integral: spread_integral(&x, h, &pred.grid)?,
            })
        })
        .collect()
}

/// Streams test runs through the metrics; [`finish`](Self::finish)
/// averages them in the order they were added.
#[derive(Debug, Clone)]
pub struct Evaluator {
    cfg: MetricConfig,
    methods: Option<Vec<String>>,
    daily: Vec<DailyRow>,
}

impl Evaluator {
    pub fn new(cfg: MetricConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            methods: None,
            daily: Vec::new(),
        })
    }

    /// Scores one run. Every call must name the same methods in the same
    /// order.
    pub fn add_case(
        &mut self,
        truth: &SpreadCube,
        predictions: &[(&str, &SpreadCube)],
    ) -> Result<()> {
        let mut names = vec![TRUTH.to_string()];
        for (n, p) in predictions {
            if *n == TRUTH || names.iter().any(|m| m == n) {
                return Err(Error::invalid(
                    "evaluate",
                    format!("duplicate or reserved method name {n:?}"),
                ));
            }
            if p.init_date != truth.init_date {
                return Err(Error::invalid(
                    "evaluate",
                    format!("{n} labeled {} for truth {}", p.init_date, truth.init_date),
                ));
            }
            names.push(n.to_string());
        }
        match &self.methods {
            Some(m) if *m != names => {
                return Err(Error::invalid(
                    "evaluate",
                    format!("methods {names:?} differ from earlier {m:?}"),
                ))
            }
            None => self.methods = Some(names),
            _ => {}
        }
        let mut jobs: Vec<(&str, &SpreadCube)> = vec![(TRUTH, truth)];
        jobs.extend_from_slice(predictions);
        let cfg = self.cfg;
        for rows in par_map(&jobs, &|(n, p): &(&str, &SpreadCube)| {
            score(truth, p, n, &cfg)
        }) {
            self.daily.extend(rows?);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<EvalReport> {
        let methods = self
            .methods
            .ok_or_else(|| Error::Data("no test runs were evaluated".into()))?;
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for m in &methods {
            let mine: Vec<&DailyRow> = self.daily.iter().filter(|r| &r.method == m).collect();
            let mut leads: Vec<usize> = mine.iter().map(|r| r.lead_hours).collect();
            leads.sort_unstable();
            leads.dedup();
            for &l in &leads {
                let at: Vec<&&DailyRow> = mine.iter().filter(|r| r.lead_hours == l).collect();
                let n = at.len() as f64;
                rows.push(EvalRow {
                    method: m.clone(),
                    lead_hours: l,
                    rmse: at.iter().map(|r| r.rmse).sum::<f64>() / n,
                    ssim: at.iter().map(|r| r.ssim).sum::<f64>() / n,
                    spread_integral: at.iter().map(|r| r.spread_integral).sum::<f64>() / n,
                });
            }
            let n = mine.len() as f64;
            summary.push(SummaryRow {
                method: m.clone(),
                mean_rmse: mine.iter().map(|r| r.rmse).sum::<f64>() / n,
                mean_ssim: mine.iter().map(|r| r.ssim).sum::<f64>() / n,
                mean_spread_integral: mine.iter().map(|r| r.spread_integral).sum::<f64>() / n,
                runs: mine.len() / leads.len().max(1),
            });
        }
        summary.sort_by(|a, b| a.mean_rmse.total_cmp(&b.mean_rmse));
        Ok(EvalReport {
            metrics: self.cfg,
            methods,
            rows,
            summary,
            daily: self.daily,
        })
    }
}

/// Scores each `(truth, [(method, prediction)])` case and averages.
pub fn evaluate<'a>(
    cases: impl IntoIterator<Item = (&'a SpreadCube, Vec<(&'a str, &'a SpreadCube)>)>,
    cfg: &MetricConfig,
) -> Result<EvalReport> {
    let mut ev = Evaluator::new(*cfg)?;
    for (truth, preds) in cases {
        ev.add_case(truth, &preds)?;
    }
    ev.finish()
}

#[derive(Serialize)]
struct CurveRow<'a> {
    method: &'a str,
    lead_hours: usize,
    spread_integral: f64,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    metrics: &'a MetricConfig,
    methods: &'a [SummaryRow],
}

fn csv_bytes<S: Serialize>(rows: impl IntoIterator<Item = S>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CURVES_CSV: &str = "spread_curves.csv";
pub const DAILY_CSV: &str = "daily.csv";

impl EvalReport {
    pub fn row(&self, method: &str, lead: usize) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.lead_hours == lead)
    }

    pub fn summary_for(&self, method: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method)
    }

    /// Mean spread integral per lead hour for `method`.
    pub fn spread_curve(&self, method: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.lead_hours, r.spread_integral))
            .collect()
    }

    /// Writes `report.csv`, `summary.json`, `spread_curves.csv` and
    /// `daily.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(REPORT_CSV), &csv_bytes(&self.rows)?)?;
        write_atomic(&dir.join(DAILY_CSV), &csv_bytes(&self.daily)?)?;
        let curves = self.rows.iter().map(|r| CurveRow {
            method: &r.method,
            lead_hours: r.lead_hours,
            spread_integral: r.spread_integral,
        });
        write_atomic(&dir.join(CURVES_CSV), &csv_bytes(curves)?)?;
        write_json(
            &dir.join(SUMMARY_JSON),
            &SummaryFile {
                metrics: &self.metrics,
                methods: &self.summary,
            },
        )
    }
}
