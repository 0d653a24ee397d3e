//! Dataset manifest CSV: `path,class,domain,split,seed`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classes::{Domain, WeatherClass};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["path", "class", "domain", "split", "seed"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.token() == s)
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub class: WeatherClass,
    pub domain: Domain,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub train: Vec<ManifestRecord>,
    pub val: Vec<ManifestRecord>,
    pub test: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> &[ManifestRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }
}

fn field<T: FromStr<Err = String>>(row: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    row.get(i)
        .unwrap_or_default()
        .parse()
        .map_err(|message| Error::Parse { line, message })
}

/// Parses manifest text; with `check_files`, every path must exist under `root`.
pub fn parse_manifest(text: &str, root: &Path, check_files: bool) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }

    let mut manifest = Manifest {
        root: root.to_path_buf(),
        ..Manifest::default()
    };
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", row.len()),
            });
        }
        let seed = row[4].parse::<u64>().map_err(|e| Error::Parse {
            line,
            message: format!("bad seed `{}`: {e}", &row[4]),
        })?;
        let record = ManifestRecord {
            path: row[0].to_string(),
            class: field(&row, 1, line)?,
            domain: field(&row, 2, line)?,
            split: field(&row, 3, line)?,
            seed,
        };
        if check_files && !root.join(&record.path).is_file() {
            return Err(Error::Data(format!(
                "manifest line {line}: file `{}` does not exist",
                root.join(&record.path).display()
            )));
        }
        match record.split {
            Split::Train => manifest.train.push(record),
            Split::Val => manifest.val.push(record),
            Split::Test => manifest.test.push(record),
        }
    }
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, root, true)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)
        .and_then(|_| records.iter().try_for_each(|r| w.serialize(r)))
        .map_err(|e| Error::Data(format!("manifest encoding: {e}")))?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("manifest encoding: {e}")))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
