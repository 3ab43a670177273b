// Climatology and persistence baselines on a synthetic three-year
// archive, scored with RMSE, SSIM and the area-weighted spread integral.

use std::collections::BTreeMap;
use std::path::Path;

use spreadcast::data::{chronological_split, RunSource, SynthConfig};
use spreadcast::verify::{evaluate, persistence_spread, Climatology, EvalReport, MetricConfig};
use spreadcast::Result;

pub fn run(out: &Path, test_days: usize) -> Result<EvalReport> {
    let source = SynthConfig {
        grid_h: 16,
        grid_w: 32,
        members: 10,
        years: 3,
        ..SynthConfig::default()
    };
    let splits = chronological_split(&source.dates())?;

    let mut clim = Climatology::new();
    let mut max_spread = 0.0f32;
    for &d in &splits.train.dates {
        let s = source.pair(d)?.1;
        max_spread = s.values.data().iter().fold(max_spread, |m, &v| m.max(v));
        clim.add(&s)?;
    }

    let test = splits.test.subsample(test_days);
    let mut truth = BTreeMap::new();
    for &d in &test.dates {
        let prev = d.pred_opt().expect("test dates follow the training split");
        truth.insert(prev, source.pair(prev)?.1);
        truth.insert(d, source.pair(d)?.1);
    }
    let mut cases = Vec::new();
    for &d in &test.dates {
        cases.push((d, clim.predict(d)?, persistence_spread(&truth, d)?));
    }

    let cfg = MetricConfig::from_range(f64::from(max_spread))?;
    let report = evaluate(
        cases
            .iter()
            .map(|(d, c, p)| (&truth[d], vec![("climatology", c), ("persistence", p)])),
        &cfg,
    )?;
    report.write(out)?;
    Ok(report)
}

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("spreadcast_baselines");
    let report = run(&dir, 20)?;
    for s in &report.summary {
        println!(
            "{:<12} rmse {:>7.3}  ssim {:.3}  spread {:>8.2}",
            s.method, s.mean_rmse, s.mean_ssim, s.mean_spread_integral
        );
    }
    println!("report written to {}", dir.display());
    Ok(())
}
