//! Command-line front end. Each subcommand is a thin wrapper over the
//! library; failures print one `error[CODE]: message` line to stderr and
//! exit nonzero.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use crate::binfmt::write_json;
use crate::data::{
    chronological_split, compute_spread, read_cube, read_run, write_cube, write_run, Archive,
    DatasetIndex, Range, Splits, SpreadCube, SpreadEstimator, SPREAD_FILE,
};
use crate::error::{Error, Result};
use crate::pipeline::{
    metric_config, run_benchmark, training_stats, RunConfig, SsimRangeMode, RESOLVED_CONFIG,
};
use crate::postprocess::{mc_dropout_mean, multi_model_mean, EnsembleOfModels};
use crate::threads::par_map;
use crate::training::{train, SavedModel, TrainData};
use crate::verify::{Evaluator, MetricConfig, TRUTH};

#[derive(Debug, Parser)]
#[command(
    name = "spreadcast",
    version,
    about = "Predict ensemble spread from a control forecast"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Climatology,
    Persistence,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic archive: one run directory per day.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every member cube (large).
        #[arg(long)]
        members: bool,
        /// First init date to write (default: start of the configured years).
        #[arg(long)]
        from: Option<NaiveDate>,
        /// Last init date to write, inclusive.
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    /// Recompute `spread.esc` of a run directory from its member cubes.
    Spread {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "sample")]
        estimator: EstimatorArg,
    },
    /// Write chronological train/val/test index files into the archive.
    Split {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model on an archive.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Weight file of the best checkpoint; its sidecar, log and
        /// checkpoints are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the spread cube of one control cube.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        control: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Average this many passes with dropout active.
        #[arg(long)]
        mc_dropout: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Climatological or persistence spread for one init date.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean prediction of several independently trained models.
    Postprocess {
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        control: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction directories against the true spread.
    Evaluate {
        /// An archive (with `runs/`) or a directory of `YYYY-MM-DD.esc`.
        #[arg(long)]
        truth: PathBuf,
        /// Directories of `YYYY-MM-DD.esc`; `NAME=DIR` sets the method
        /// name, otherwise the directory name is used.
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to the dates of this index file.
        #[arg(long)]
        dates: Option<PathBuf>,
        /// Metric settings; `ssim_range_mode: train_spread` needs an
        /// archive as `--truth`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Synthesize, train every seed, evaluate and check post-processing.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `paths.work_dir`.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Sample,
    Population,
    AboutControl,
}

impl From<EstimatorArg> for SpreadEstimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Sample => SpreadEstimator::Sample,
            EstimatorArg::Population => SpreadEstimator::Population,
            EstimatorArg::AboutControl => SpreadEstimator::AboutControl,
        }
    }
}

fn date_file(dir: &Path, date: NaiveDate) -> PathBuf {
    dir.join(format!("{}.esc", date.format("%Y-%m-%d")))
}

fn dated_files(dir: &Path) -> Result<Vec<NaiveDate>> {
    let mut dates = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let parsed = name
            .to_str()
            .and_then(|s| s.strip_suffix(".esc"))
            .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok());
        dates.extend(parsed);
    }
    dates.sort();
    Ok(dates)
}

/// Splits from the archive's index files, or computed and written when
/// they are missing.
fn archive_splits(archive: &Archive) -> Result<Splits> {
    let paths = ["train", "val", "test"].map(|s| archive.index_path(s));
    if paths.iter().all(|p| p.exists()) {
        let [train, val, test] = paths.map(|p| DatasetIndex::read(&p));
        return Ok(Splits {
            train: train?,
            val: val?,
            test: test?,
        });
    }
    let splits = chronological_split(&archive.dates()?)?;
    splits.train.write(&paths[0])?;
    splits.val.write(&paths[1])?;
    splits.test.write(&paths[2])?;
    Ok(splits)
}

fn synth(
    config: &Path,
    out: &Path,
    members: bool,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    cfg.data.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(RESOLVED_CONFIG), &cfg)?;
    let archive = Archive::new(out);
    let dates: Vec<NaiveDate> = cfg
        .data
        .dates()
        .dates
        .into_iter()
        .filter(|d| from.map_or(true, |f| *d >= f) && to.map_or(true, |t| *d <= t))
        .collect();
    for chunk in dates.chunks(64) {
        par_map(chunk, &|d: &NaiveDate| {
            write_run(&archive.run_dir(*d), &cfg.data.run(*d, members)?)
        })
        .into_iter()
        .collect::<Result<()>>()?;
    }
    println!("wrote {} runs to {}", dates.len(), out.display());
    Ok(())
}

fn respread(run: &Path, estimator: SpreadEstimator) -> Result<()> {
    let r = read_run(run, true)?;
    if r.members.is_empty() {
        return Err(Error::Data(format!(
            "{} has no member files",
            run.display()
        )));
    }
    let spread = compute_spread(&r.control, &r.members, estimator)?;
    write_cube(&spread, &run.join(SPREAD_FILE))
}

fn train_cmd(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?.resolved()?;
    let arch = cfg.arch_config()?;
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let checkpoints = dir.join(format!("{stem}_checkpoints"));
    fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
    write_json(&dir.join(RESOLVED_CONFIG), &cfg)?;

    let archive = Archive::new(data);
    let splits = archive_splits(&archive)?;
    let stats = training_stats(&archive, &splits.train)?;
    let td = TrainData {
        source: &archive,
        train: splits.train,
        val: splits.val,
        normalizer: stats.normalizer,
    };
    let outcome = train(&td, &arch, &cfg.train, Some(&checkpoints))?;
    outcome.best_model.save(out)?;
    outcome
        .log
        .write_csv(&dir.join(format!("{stem}_log.csv")))?;
    println!(
        "best epoch {} of {}",
        outcome.best_epoch + 1,
        cfg.train.epochs
    );
    Ok(())
}

fn predict(model: &Path, control: &Path, out: &Path, mc: Option<usize>, seed: u64) -> Result<()> {
    let m = SavedModel::load(model)?;
    let c = read_cube(control)?;
    let s = match mc {
        Some(n) => mc_dropout_mean(&m, &c, n, seed)?,
        None => m.predict(&c, None)?,
    };
    write_cube(&s, out)
}

fn baseline(kind: BaselineKind, data: &Path, date: NaiveDate, out: &Path) -> Result<()> {
    let archive = Archive::new(data);
    let s = match kind {
        BaselineKind::Climatology => {
            let splits = archive_splits(&archive)?;
            training_stats(&archive, &splits.train)?
                .climatology
                .predict(date)?
        }
        BaselineKind::Persistence => {
            let prev = date
                .pred_opt()
                .ok_or_else(|| Error::Data(format!("no day before {date}")))?;
            archive.read_spread(prev)?.relabeled(date)
        }
    };
    write_cube(&s, out)
}

fn postprocess(models: &[PathBuf], control: &Path, out: &Path) -> Result<()> {
    let loaded = models
        .iter()
        .map(|p| SavedModel::load(p))
        .collect::<Result<Vec<_>>>()?;
    let ens = EnsembleOfModels::new(loaded)?;
    write_cube(&multi_model_mean(&ens, &read_cube(control)?)?, out)
}

fn parse_pred(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() => (name.to_string(), PathBuf::from(dir)),
        _ => {
            let p = PathBuf::from(spec);
            let name = p
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or(spec)
                .to_string();
            (name, p)
        }
    }
}

fn evaluate_cmd(
    truth: &Path,
    preds: &[String],
    out: &Path,
    dates: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    let archive = truth.join("runs").is_dir().then(|| Archive::new(truth));
    let read_truth = |d: NaiveDate| match &archive {
        Some(a) => a.read_spread(d),
        None => read_cube(&date_file(truth, d)),
    };
    let preds: Vec<(String, PathBuf)> = preds.iter().map(|s| parse_pred(s)).collect();
    if let Some((name, _)) = preds.iter().find(|(n, _)| n == TRUTH) {
        return Err(Error::Config(format!("method name {name:?} is reserved")));
    }
    let dates = match dates {
        Some(p) => DatasetIndex::read(p)?.dates,
        None => dated_files(&preds[0].1)?,
    };
    if dates.is_empty() {
        return Err(Error::Data("no dates to evaluate".into()));
    }

    let metrics: MetricConfig = match config {
        Some(c) => {
            let cfg = RunConfig::load(c)?;
            let range = match (cfg.metrics.ssim_range_mode, &archive) {
                (SsimRangeMode::Fixed(_), _) => Range::default(),
                (SsimRangeMode::TrainSpread, Some(a)) => {
                    training_stats(a, &archive_splits(a)?.train)?.spread_range
                }
                (SsimRangeMode::TrainSpread, None) => {
                    return Err(Error::Config(
                        "ssim_range_mode train_spread needs an archive as --truth".into(),
                    ))
                }
            };
            metric_config(&cfg.metrics, &range)?
        }
        None => {
            let mut r = Range::default();
            for &d in &dates {
                r.observe(read_truth(d)?.values.data());
            }
            MetricConfig::from_range(r.max - r.min)?
        }
    };

    let mut ev = Evaluator::new(metrics)?;
    for &d in &dates {
        let t = read_truth(d)?;
        let cubes: Vec<SpreadCube> = preds
            .iter()
            .map(|(_, dir)| read_cube(&date_file(dir, d)))
            .collect::<Result<_>>()?;
        let named: Vec<(&str, &SpreadCube)> =
            preds.iter().map(|(n, _)| n.as_str()).zip(&cubes).collect();
        ev.add_case(&t, &named)?;
    }
    let report = ev.finish()?;
    report.write(out)?;
    for s in &report.summary {
        println!(
            "{:<32} rmse {:>10.4}  ssim {:.4}",
            s.method, s.mean_rmse, s.mean_ssim
        );
    }
    Ok(())
}

fn benchmark(config: &Path, work_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(w) = work_dir {
        cfg.paths.work_dir = w;
    }
    let out = run_benchmark(&cfg)?;
    let s = &out.summary;
    println!(
        "climatology   rmse {:.4} ssim {:.4}",
        s.climatology_rmse, s.climatology_ssim
    );
    println!(
        "persistence   rmse {:.4} ssim {:.4}",
        s.persistence_rmse, s.persistence_ssim
    );
    for seed in &s.seeds {
        println!(
            "seed {:<4} rmse {:.4} ssim {:.4} dropout mean rmse {:.4} beats both: {}",
            seed.seed,
            seed.test_rmse,
            seed.test_ssim,
            seed.dropout_mean_rmse,
            seed.beats_climatology && seed.beats_persistence
        );
    }
    println!("model mean    rmse {:.4}", s.model_mean_rmse);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            config,
            out,
            members,
            from,
            to,
        } => synth(&config, &out, members, from, to),
        Command::Spread { run, estimator } => respread(&run, estimator.into()),
        Command::Split { data } => {
            let s = archive_splits(&Archive::new(&data))?;
            println!(
                "train {} val {} test {}",
                s.train.len(),
                s.val.len(),
                s.test.len()
            );
            Ok(())
        }
        Command::Train { config, data, out } => train_cmd(&config, &data, &out),
        Command::Predict {
            model,
            control,
            out,
            mc_dropout,
            seed,
        } => predict(&model, &control, &out, mc_dropout, seed),
        Command::Baseline {
            kind,
            data,
            date,
            out,
        } => baseline(kind, &data, date, &out),
        Command::Postprocess {
            models,
            control,
            out,
        } => postprocess(&models, &control, &out),
        Command::Evaluate {
            truth,
            pred,
            out,
            dates,
            config,
        } => evaluate_cmd(&truth, &pred, &out, dates.as_deref(), config.as_deref()),
        Command::Benchmark { config, work_dir } => benchmark(&config, work_dir),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
