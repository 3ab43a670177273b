//! Climatology and persistence baselines, forecast error norms and
//! per-lead-hour evaluation reports.

mod baselines;
mod metrics;
mod report;

pub use baselines::{climatology_spread, month_day, persistence_spread, Climatology};
pub use metrics::{
    rmse, rmse_area_weighted, spread_integral, ssim, MetricConfig, RmseWeighting, SsimDenominator,
};
pub use report::{
    evaluate, DailyRow, EvalReport, EvalRow, Evaluator, SummaryRow, CURVES_CSV, DAILY_CSV,
    REPORT_CSV, SUMMARY_JSON, TRUTH,
};
