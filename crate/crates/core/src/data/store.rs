use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::cube::{read_cube, write_cube, Cube, SpreadCube};
use super::split::DatasetIndex;
use super::spread::EnsembleRun;
use super::synth::SynthConfig;
use crate::error::{Error, Result};

pub const CONTROL_FILE: &str = "control.esc";
pub const SPREAD_FILE: &str = "spread.esc";

pub fn member_file(i: usize) -> String {
    format!("member_{i:03}.esc")
}

/// Writes `control.esc`, `member_NNN.esc` and `spread.esc` into `dir`.
pub fn write_run(dir: &Path, run: &EnsembleRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cube(&run.control, &dir.join(CONTROL_FILE))?;
    for (i, m) in run.members.iter().enumerate() {
        write_cube(m, &dir.join(member_file(i)))?;
    }
    write_cube(&run.spread, &dir.join(SPREAD_FILE))
}

/// Reads a run directory; members are loaded only when asked for.
pub fn read_run(dir: &Path, with_members: bool) -> Result<EnsembleRun> {
    let control = read_cube(&dir.join(CONTROL_FILE))?;
    let spread = read_cube(&dir.join(SPREAD_FILE))?;
    let mut members = Vec::new();
    if with_members {
        for i in 0.. {
            let p = dir.join(member_file(i));
            if !p.exists() {
                break;
            }
            members.push(read_cube(&p)?);
        }
    }
    Ok(EnsembleRun {
        control,
        members,
        spread,
    })
}

/// Something that yields (control, true spread) pairs by init date.
pub trait RunSource: Sync {
    fn pair(&self, date: NaiveDate) -> Result<(Cube, SpreadCube)>;
}

impl RunSource for SynthConfig {
    fn pair(&self, date: NaiveDate) -> Result<(Cube, SpreadCube)> {
        let run = self.run(date, false)?;
        Ok((run.control, run.spread))
    }
}

/// On-disk dataset: one run directory per init date under `runs/`, plus
/// optional `train.idx`, `val.idx`, `test.idx`.
#[derive(Debug, Clone)]
pub struct Archive {
    pub root: PathBuf,
}

impl Archive {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_dir(&self, date: NaiveDate) -> PathBuf {
        self.root
            .join("runs")
            .join(date.format("%Y-%m-%d").to_string())
    }

    pub fn index_path(&self, split: &str) -> PathBuf {
        self.root.join(format!("{split}.idx"))
    }

    /// Every run date present, ascending.
    pub fn dates(&self) -> Result<DatasetIndex> {
        let runs = self.root.join("runs");
        let entries = fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))?;
        let mut dates = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&runs, e))?;
            if let Some(d) = entry
                .file_name()
                .to_str()
                .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
            {
                dates.push(d);
            }
        }
        dates.sort();
        DatasetIndex::new(dates)
    }

    pub fn read_spread(&self, date: NaiveDate) -> Result<SpreadCube> {
        read_cube(&self.run_dir(date).join(SPREAD_FILE))
    }

    pub fn read_control(&self, date: NaiveDate) -> Result<Cube> {
        read_cube(&self.run_dir(date).join(CONTROL_FILE))
    }
}

impl RunSource for Archive {
    fn pair(&self, date: NaiveDate) -> Result<(Cube, SpreadCube)> {
        Ok((self.read_control(date)?, self.read_spread(date)?))
    }
}
