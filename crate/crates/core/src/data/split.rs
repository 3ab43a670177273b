use std::path::Path;

use chrono::NaiveDate;

use crate::binfmt::{read_file, write_atomic};
use crate::error::{Error, Result};

/// Ordered list of run dates making up one dataset split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetIndex {
    pub dates: Vec<NaiveDate>,
}

impl DatasetIndex {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "index dates not strictly ascending at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { dates })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// `k` dates spread evenly over the index (all of them when `k >= len`).
    pub fn subsample(&self, k: usize) -> Self {
        let n = self.dates.len();
        if k >= n {
            return self.clone();
        }
        let dates = (0..k).map(|i| self.dates[i * n / k]).collect();
        Self { dates }
    }

    /// One ISO date per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::with_capacity(self.dates.len() * 11);
        for d in &self.dates {
            text.push_str(&d.format("%Y-%m-%d").to_string());
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Data(format!("{}: not UTF-8", path.display())))?;
        let dates = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                NaiveDate::parse_from_str(l.trim(), "%Y-%m-%d")
                    .map_err(|_| Error::Data(format!("{}: bad date {l:?}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dates)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: DatasetIndex,
    pub val: DatasetIndex,
    pub test: DatasetIndex,
}

/// Contiguous 80/10/10 split: `floor(0.8 n)` training runs, then
/// `floor(0.1 n)` validation runs, the remainder for testing.
pub fn chronological_split(index: &DatasetIndex) -> Result<Splits> {
    let n = index.len();
    if n == 0 {
        return Err(Error::Data("cannot split an empty index".into()));
    }
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let d = &index.dates;
    Ok(Splits {
        train: DatasetIndex {
            dates: d[..n_train].to_vec(),
        },
        val: DatasetIndex {
            dates: d[n_train..n_train + n_val].to_vec(),
        },
        test: DatasetIndex {
            dates: d[n_train + n_val..].to_vec(),
        },
    })
}
