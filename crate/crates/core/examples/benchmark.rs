// End-to-end benchmark: synthesize, split, fit the baselines, train the
// model seeds, post-process and score everything on the test split.
//
// `cargo run --release --example benchmark` runs the reduced benchmark
// (a few minutes on one core); `-- --desk` runs the desk-scale one
// (many hours). `-- --work DIR` picks the output directory.

use std::path::PathBuf;

use spreadcast::pipeline::{run_benchmark, BenchmarkOutcome, RunConfig};
use spreadcast::Result;

pub fn run(cfg: &RunConfig) -> Result<BenchmarkOutcome> {
    run_benchmark(cfg)
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = if args.iter().any(|a| a == "--desk") {
        RunConfig::desk_benchmark()
    } else {
        RunConfig::reduced_benchmark()
    };
    cfg.paths.work_dir = match args.iter().position(|a| a == "--work") {
        Some(i) => PathBuf::from(&args[i + 1]),
        None => std::env::temp_dir().join("spreadcast_benchmark"),
    };
    let out = run(&cfg)?;
    let s = &out.summary;
    println!(
        "{} train / {} val / {} test runs",
        s.train_runs, s.val_runs, s.test_runs
    );
    println!(
        "climatology  rmse {:.3} ssim {:.3}",
        s.climatology_rmse, s.climatology_ssim
    );
    println!(
        "persistence  rmse {:.3} ssim {:.3}",
        s.persistence_rmse, s.persistence_ssim
    );
    for seed in &s.seeds {
        println!(
            "seed {}       rmse {:.3} ssim {:.3}  dropout mean {:.3} vs one pass {:.3}",
            seed.seed,
            seed.test_rmse,
            seed.test_ssim,
            seed.dropout_mean_rmse,
            seed.single_pass_rmse
        );
    }
    println!("model mean   rmse {:.3}", s.model_mean_rmse);
    println!(
        "{} of {} seeds beat both baselines",
        s.seeds_beating_both,
        s.seeds.len()
    );
    println!("outputs in {}", cfg.paths.work_dir.display());
    Ok(())
}
