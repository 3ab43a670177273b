//! End-to-end benchmark: synthesize, split, fit baselines, train one or
//! more models, then score every method on the test split.
//!
//! Runs are regenerated from the synthetic configuration whenever they are
//! needed instead of being held in memory, so the archive size is bounded
//! only by time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::binfmt::{write_atomic, write_json};
use crate::data::{
    chronological_split, DatasetIndex, Normalizer, NormalizerFit, Range, RunSource, Splits,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::model::{compact_arch, default_arch, default_arch_ceil_mode, ArchConfig};
use crate::postprocess::{
    mc_dropout_passes, mean_cube, EnsembleOfModels, DEFAULT_DROPOUT_PASSES, DEFAULT_MODELS,
};
use crate::threads::par_map;
use crate::training::{train, SavedModel, TrainConfig, TrainData};
use crate::verify::{
    rmse, Climatology, EvalReport, Evaluator, MetricConfig, RmseWeighting, SsimDenominator,
};

/// Architecture section of a run config: a preset name or a full layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    /// `"default"`, `"default_ceil_mode"`, `"compact"` (8 base filters)
    /// or `"compact:N"`.
    Preset(String),
    Custom(Box<ArchConfig>),
}

impl Default for ArchChoice {
    fn default() -> Self {
        ArchChoice::Preset("default".into())
    }
}

impl ArchChoice {
    pub fn resolve(&self, input_shape: [usize; 4]) -> Result<ArchConfig> {
        match self {
            ArchChoice::Preset(p) if p == "default" => default_arch(input_shape),
            ArchChoice::Preset(p) if p == "default_ceil_mode" => {
                default_arch_ceil_mode(input_shape)
            }
            ArchChoice::Preset(p) if p == "compact" => compact_arch(input_shape, 8),
            ArchChoice::Preset(p) => match p.strip_prefix("compact:").map(str::parse) {
                Some(Ok(base)) => compact_arch(input_shape, base),
                _ => Err(Error::Config(format!("unknown architecture preset {p:?}"))),
            },
            ArchChoice::Custom(a) => {
                if a.input_shape != input_shape {
                    return Err(Error::Config(format!(
                        "architecture input {:?} does not match data extents {input_shape:?}",
                        a.input_shape
                    )));
                }
                a.validate()?;
                Ok((**a).clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimRangeMode {
    /// Range of the true spread over the training split.
    #[default]
    TrainSpread,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub ssim_denominator: SsimDenominator,
    pub ssim_range_mode: SsimRangeMode,
    pub rmse_weighting: RmseWeighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessSection {
    /// Stochastic passes per MC-dropout prediction.
    pub dropout_passes: usize,
    pub dropout_seed: u64,
    /// Independently trained models; model `k` trains with seed
    /// `train.seed + k`.
    pub models: usize,
}

impl Default for PostprocessSection {
    fn default() -> Self {
        Self {
            dropout_passes: DEFAULT_DROPOUT_PASSES,
            dropout_seed: 0,
            models: DEFAULT_MODELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub arch: ArchChoice,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
    pub postprocess: PostprocessSection,
    pub paths: Paths,
}

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.data.steps, self.data.grid_h, self.data.grid_w, 1]
    }

    /// Validated copy with the architecture spelled out in full.
    pub fn resolved(&self) -> Result<Self> {
        self.data.validate()?;
        self.train.validate()?;
        if self.postprocess.dropout_passes == 0 || self.postprocess.models == 0 {
            return Err(Error::Config(
                "dropout_passes and models must be >= 1".into(),
            ));
        }
        let arch = self.arch.resolve(self.input_shape())?;
        Ok(Self {
            arch: ArchChoice::Custom(Box::new(arch)),
            ..self.clone()
        })
    }

    pub fn arch_config(&self) -> Result<ArchConfig> {
        self.arch.resolve(self.input_shape())
    }

    /// Desk-scale benchmark: 64 × 128 grid, 16 steps, 20 members, nine
    /// years of daily runs (about seven for training) subsampled to 700
    /// training runs, 10 epochs, three seeds.
    pub fn desk_benchmark() -> Self {
        Self {
            train: TrainConfig {
                max_train_samples: Some(700),
                max_val_samples: Some(60),
                ..TrainConfig::default()
            },
            postprocess: PostprocessSection {
                models: 3,
                ..PostprocessSection::default()
            },
            ..Self::default()
        }
    }

    /// Benchmark small enough for one core in a few minutes: 16 × 32 grid,
    /// three years, the compact architecture, 200 training runs for eight
    /// epochs, three seeds.
    pub fn reduced_benchmark() -> Self {
        Self {
            data: SynthConfig {
                grid_h: 16,
                grid_w: 32,
                years: 3,
                ..SynthConfig::default()
            },
            arch: ArchChoice::Preset("compact".into()),
            train: TrainConfig {
                epochs: 8,
                max_train_samples: Some(200),
                max_val_samples: Some(30),
                ..TrainConfig::default()
            },
            postprocess: PostprocessSection {
                models: 3,
                ..PostprocessSection::default()
            },
            ..Self::default()
        }
    }
}

/// Statistics gathered in one pass over the training split.
#[derive(Debug, Clone)]
pub struct TrainingStats {
    pub climatology: Climatology,
    pub normalizer: Normalizer,
    pub spread_range: Range,
}

/// Streams the training split once, accumulating the climatology and the
/// normalizer ranges.
pub fn training_stats(source: &dyn RunSource, train: &DatasetIndex) -> Result<TrainingStats> {
    let mut clim = Climatology::new();
    let mut fit = NormalizerFit::default();
    for chunk in train.dates.chunks(32) {
        let pairs = par_map(chunk, &|d: &NaiveDate| source.pair(*d));
        for p in pairs {
            let (c, s) = p?;
            clim.add(&s)?;
            fit.observe(&c, &s);
        }
    }
    Ok(TrainingStats {
        climatology: clim,
        normalizer: fit.finish()?,
        spread_range: fit.spread,
    })
}

pub fn metric_config(section: &MetricsSection, spread_range: &Range) -> Result<MetricConfig> {
    let l = match section.ssim_range_mode {
        SsimRangeMode::TrainSpread => spread_range.max - spread_range.min,
        SsimRangeMode::Fixed(l) => l,
    };
    let mut cfg = MetricConfig::from_range(l)?;
    cfg.ssim_denominator = section.ssim_denominator;
    cfg.rmse_weighting = section.rmse_weighting;
    Ok(cfg)
}

pub const CLIMATOLOGY: &str = "climatology";
pub const PERSISTENCE: &str = "persistence";

pub fn model_name(k: usize) -> String {
    format!("pix2pix3d_seed{k}")
}

pub fn dropout_name(k: usize) -> String {
    format!("pix2pix3d_seed{k}_dropout_mean")
}

pub const MODEL_MEAN: &str = "pix2pix3d_model_mean";

/// Per test run: MSE of the multi-model mean and the mean of the
/// individual models' MSEs, over the whole cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JensenRow {
    pub date: NaiveDate,
    pub mse_of_mean: f64,
    pub mean_of_mse: f64,
}

/// Per model, test run and lead hour: RMSE of the MC-dropout mean, the
/// average RMSE of its individual stochastic passes and the RMSE of the
/// deterministic pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutRow {
    pub model: usize,
    pub date: NaiveDate,
    pub lead_hours: usize,
    pub mean_rmse: f64,
    pub pass_rmse: f64,
    pub deterministic_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub best_epoch: usize,
    pub val_rmse: Vec<f64>,
    pub test_rmse: f64,
    pub test_ssim: f64,
    pub beats_climatology: bool,
    pub beats_persistence: bool,
    pub dropout_mean_rmse: f64,
    pub single_pass_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub train_runs: usize,
    pub val_runs: usize,
    pub test_runs: usize,
    pub climatology_rmse: f64,
    pub climatology_ssim: f64,
    pub persistence_rmse: f64,
    pub persistence_ssim: f64,
    pub seeds: Vec<SeedOutcome>,
    pub seeds_beating_both: usize,
    pub model_mean_rmse: f64,
    pub jensen_max_excess: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: EvalReport,
    pub summary: BenchmarkSummary,
    pub jensen: Vec<JensenRow>,
    pub dropout: Vec<DropoutRow>,
    pub models: Vec<SavedModel>,
}

fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

/// Scores climatology, persistence and every model (plain, MC-dropout
/// mean, and the mean over models) on the test dates.
pub fn evaluate_test_split(
    source: &dyn RunSource,
    test: &DatasetIndex,
    climatology: &Climatology,
    models: &[SavedModel],
    metrics: &MetricConfig,
    post: &PostprocessSection,
) -> Result<(EvalReport, Vec<JensenRow>, Vec<DropoutRow>)> {
    let ensemble = EnsembleOfModels::new(models.to_vec())?;
    let mut ev = Evaluator::new(*metrics)?;
    let mut jensen = Vec::new();
    let mut dropout = Vec::new();
    let mut previous: Option<(NaiveDate, crate::data::SpreadCube)> = None;
    for &date in &test.dates {
        let (control, truth) = source.pair(date)?;
        let prev_date = date
            .pred_opt()
            .ok_or_else(|| Error::Data(format!("no day before {date}")))?;
        let prev_truth = match previous.take() {
            Some((d, s)) if d == prev_date => s,
            _ => source.pair(prev_date)?.1,
        };
        let persistence = prev_truth.relabeled(date);
        let clim = climatology.predict(date)?;
        let plain = ensemble.predictions(&control)?;
        let mut mc = Vec::with_capacity(models.len());
        for (k, m) in models.iter().enumerate() {
            let passes = mc_dropout_passes(m, &control, post.dropout_passes, post.dropout_seed)?;
            let mean = mean_cube(&passes)?;
            for step in 0..truth.steps() {
                let y = f64s(truth.slice(step));
                let pass_rmse = passes
                    .iter()
                    .map(|p| rmse(&f64s(p.slice(step)), &y))
                    .sum::<Result<f64>>()?
                    / passes.len() as f64;
                dropout.push(DropoutRow {
                    model: k,
                    date,
                    lead_hours: crate::data::lead_hours(step),
                    mean_rmse: rmse(&f64s(mean.slice(step)), &y)?,
                    pass_rmse,
                    deterministic_rmse: rmse(&f64s(plain[k].slice(step)), &y)?,
                });
            }
            mc.push(mean);
        }
        let model_mean = mean_cube(&plain)?;
        jensen.push(JensenRow {
            date,
            mse_of_mean: mse(model_mean.values.data(), truth.values.data()),
            mean_of_mse: plain
                .iter()
                .map(|p| mse(p.values.data(), truth.values.data()))
                .sum::<f64>()
                / plain.len() as f64,
        });

        let names: Vec<(String, String)> = (0..models.len())
            .map(|k| (model_name(k), dropout_name(k)))
            .collect();
        let mut preds: Vec<(&str, &crate::data::SpreadCube)> =
            vec![(CLIMATOLOGY, &clim), (PERSISTENCE, &persistence)];
        for (k, (n, d)) in names.iter().enumerate() {
            preds.push((n.as_str(), &plain[k]));
            preds.push((d.as_str(), &mc[k]));
        }
        preds.push((MODEL_MEAN, &model_mean));
        ev.add_case(&truth, &preds)?;
        previous = Some((date, truth));
    }
    Ok((ev.finish()?, jensen, dropout))
}

fn summarize(
    report: &EvalReport,
    splits: &Splits,
    trained: &[(u64, usize, Vec<f64>)],
    jensen: &[JensenRow],
    dropout: &[DropoutRow],
) -> Result<BenchmarkSummary> {
    let get = |m: &str| {
        report
            .summary_for(m)
            .cloned()
            .ok_or_else(|| Error::Data(format!("report has no rows for {m}")))
    };
    let clim = get(CLIMATOLOGY)?;
    let pers = get(PERSISTENCE)?;
    let mut seeds = Vec::new();
    for (k, (seed, best_epoch, val)) in trained.iter().enumerate() {
        let m = get(&model_name(k))?;
        let rows: Vec<&DropoutRow> = dropout.iter().filter(|r| r.model == k).collect();
        let n = rows.len().max(1) as f64;
        seeds.push(SeedOutcome {
            seed: *seed,
            best_epoch: *best_epoch,
            val_rmse: val.clone(),
            test_rmse: m.mean_rmse,
            test_ssim: m.mean_ssim,
            beats_climatology: m.mean_rmse < clim.mean_rmse && m.mean_ssim > clim.mean_ssim,
            beats_persistence: m.mean_rmse < pers.mean_rmse && m.mean_ssim > pers.mean_ssim,
            dropout_mean_rmse: rows.iter().map(|r| r.mean_rmse).sum::<f64>() / n,
            single_pass_rmse: rows.iter().map(|r| r.pass_rmse).sum::<f64>() / n,
        });
    }
    Ok(BenchmarkSummary {
        train_runs: splits.train.len(),
        val_runs: splits.val.len(),
        test_runs: splits.test.len(),
        climatology_rmse: clim.mean_rmse,
        climatology_ssim: clim.mean_ssim,
        persistence_rmse: pers.mean_rmse,
        persistence_ssim: pers.mean_ssim,
        seeds_beating_both: seeds
            .iter()
            .filter(|s| s.beats_climatology && s.beats_persistence)
            .count(),
        seeds,
        model_mean_rmse: get(MODEL_MEAN)?.mean_rmse,
        jensen_max_excess: jensen
            .iter()
            .map(|j| j.mse_of_mean - j.mean_of_mse)
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

pub const SUMMARY_FILE: &str = "benchmark.json";
pub const JENSEN_CSV: &str = "jensen.csv";
pub const DROPOUT_CSV: &str = "mc_dropout.csv";

/// Runs the whole benchmark and writes every artifact under
/// `cfg.paths.work_dir`:
///
/// - `resolved_config.json`
/// - `train.idx`, `val.idx`, `test.idx`
/// - `models/seed_K/` with `best.spw`, per-epoch checkpoints and `train_log.csv`
/// - `report/` with the evaluation CSVs and JSON summary
/// - `jensen.csv`, `mc_dropout.csv`, `benchmark.json`
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkOutcome> {
    let resolved = cfg.resolved()?;
    let arch = resolved.arch_config()?;
    let work = resolved.paths.work_dir.clone();
    fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
    write_json(&work.join(RESOLVED_CONFIG), &resolved)?;

    let source = &resolved.data;
    let splits = chronological_split(&source.dates())?;
    splits.train.write(&work.join("train.idx"))?;
    splits.val.write(&work.join("val.idx"))?;
    splits.test.write(&work.join("test.idx"))?;

    let stats = training_stats(source, &splits.train)?;
    let metrics = metric_config(&resolved.metrics, &stats.spread_range)?;

    let mut models = Vec::new();
    let mut trained = Vec::new();
    for k in 0..resolved.postprocess.models {
        let seed = resolved.train.seed + k as u64;
        let tcfg = TrainConfig {
            seed,
            ..resolved.train.clone()
        };
        let dir = work.join("models").join(format!("seed_{k}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let data = TrainData {
            source,
            train: splits.train.clone(),
            val: splits.val.clone(),
            normalizer: stats.normalizer,
        };
        let out = train(&data, &arch, &tcfg, Some(&dir))?;
        out.log.write_csv(&dir.join("train_log.csv"))?;
        out.best_model.save(&dir.join("best.spw"))?;
        trained.push((seed, out.best_epoch, out.log.val_rmse.clone()));
        models.push(out.best_model);
    }

    let (report, jensen, dropout) = evaluate_test_split(
        source,
        &splits.test,
        &stats.climatology,
        &models,
        &metrics,
        &resolved.postprocess,
    )?;
    report.write(&work.join("report"))?;
    write_atomic(&work.join(JENSEN_CSV), &csv_bytes(&jensen)?)?;
    write_atomic(&work.join(DROPOUT_CSV), &csv_bytes(&dropout)?)?;
    let summary = summarize(&report, &splits, &trained, &jensen, &dropout)?;
    write_json(&work.join(SUMMARY_FILE), &summary)?;
    Ok(BenchmarkOutcome {
        report,
        summary,
        jensen,
        dropout,
        models,
    })
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                out.insert(p.strip_prefix(dir).unwrap_or(&p).to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}
