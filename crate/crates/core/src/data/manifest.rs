use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::metrics::psnr_serde;
use crate::error::{Error, Result};

/// Quality tercile of an input image, ordered from most to least degraded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Partition {
    #[serde(rename = "LQ")]
    Lq,
    #[serde(rename = "MQ")]
    Mq,
    #[serde(rename = "HQ")]
    Hq,
    #[serde(rename = "UNASSIGNED")]
    Unassigned,
}

impl Partition {
    /// The three quality partitions, in expert index order.
    pub const EXPERTS: [Partition; 3] = [Partition::Lq, Partition::Mq, Partition::Hq];

    pub fn expert_index(self) -> Option<usize> {
        Self::EXPERTS.iter().position(|&p| p == self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lq => "LQ",
            Self::Mq => "MQ",
            Self::Hq => "HQ",
            Self::Unassigned => "UNASSIGNED",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LQ" => Ok(Self::Lq),
            "MQ" => Ok(Self::Mq),
            "HQ" => Ok(Self::Hq),
            "UNASSIGNED" => Ok(Self::Unassigned),
            _ => Err(Error::Manifest(format!("unknown partition {s:?}"))),
        }
    }
}

/// One degraded/clean pair. Paths are stored as written (relative paths
/// resolve against the manifest's directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePair {
    pub input: String,
    pub target: String,
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub partition: Partition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ImagePair>,
    pub split: Split,
    pub seed: Option<u64>,
    /// Directory relative record paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Sorts records into canonical (ascending input path) order and rejects
    /// duplicate inputs or non-positive PSNR values.
    pub fn new(
        mut records: Vec<ImagePair>,
        split: Split,
        seed: Option<u64>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        records.sort_by(|a, b| a.input.cmp(&b.input));
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.input.as_str()) {
                return Err(Error::Manifest(format!("duplicate input path {}", r.input)));
            }
            if r.psnr_db.is_nan() || r.psnr_db <= 0.0 {
                return Err(Error::Manifest(format!(
                    "record {} has invalid PSNR {}",
                    r.input, r.psnr_db
                )));
            }
        }
        Ok(Self {
            records,
            split,
            seed,
            base_dir: base_dir.into(),
        })
    }

    pub fn records(&self) -> &[ImagePair] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Records tagged with `partition`, in canonical order.
    pub fn partition(&self, partition: Partition) -> Vec<&ImagePair> {
        self.records
            .iter()
            .filter(|r| r.partition == partition)
            .collect()
    }

    pub fn get(&self, input: &str) -> Option<&ImagePair> {
        self.records
            .binary_search_by(|r| r.input.as_str().cmp(input))
            .ok()
            .map(|i| &self.records[i])
    }

    pub(crate) fn with_partitions(&self, tags: Vec<Partition>) -> Self {
        let records = self
            .records
            .iter()
            .zip(tags)
            .map(|(r, partition)| ImagePair {
                partition,
                ..r.clone()
            })
            .collect();
        Self {
            records,
            ..self.clone()
        }
    }

    /// Copy whose record paths stay valid when the manifest is written to
    /// `dir`: unchanged if `dir` is the current base, absolute otherwise.
    pub fn rebase_to(&self, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let canon = |p: &Path| std::fs::canonicalize(p).map_err(|e| Error::io(p, e));
        let base = canon(if self.base_dir.as_os_str().is_empty() {
            Path::new(".")
        } else {
            &self.base_dir
        })?;
        if canon(dir)? == base {
            return Ok(self.clone());
        }
        let abs = |p: &str| base.join(p).to_string_lossy().into_owned();
        let records = self
            .records
            .iter()
            .map(|r| ImagePair {
                input: abs(&r.input),
                target: abs(&r.target),
                ..r.clone()
            })
            .collect();
        Self::new(records, self.split, self.seed, dir)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str, split: Split, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<ImagePair>>>()?;
        Self::new(records, split, None, base_dir)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Reads a JSON-lines manifest; relative paths resolve against its directory.
    pub fn read(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_jsonl(&text, split, base)
    }

    /// Seeded train/test split; `round(n·test_fraction)` records (at least
    /// one when `n ≥ 2`) go to the test side.
    pub fn split_train_test(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        use rand::seq::SliceRandom;
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config(format!(
                "test fraction {test_fraction} outside [0,1)"
            )));
        }
        let n = self.records.len();
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if test_fraction > 0.0 && n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut crate::rng::stream(seed, "data/split"));
        let test: BTreeSet<usize> = idx[..n_test].iter().copied().collect();
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, r) in self.records.iter().enumerate() {
            if test.contains(&i) {
                te.push(r.clone());
            } else {
                tr.push(r.clone());
            }
        }
        Ok((
            Self::new(tr, Split::Train, Some(seed), self.base_dir.clone())?,
            Self::new(te, Split::Test, Some(seed), self.base_dir.clone())?,
        ))
    }
}
