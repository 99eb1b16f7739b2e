//! Plain CSV dataset manifests.
//!
//! Rows take one of three shapes, and a file must use exactly one:
//!
//! ```text
//! images/a.png            # pretraining (unlabeled)
//! images/a.png,1          # classification
//! images/a.png,masks/a.png  # segmentation
//! ```
//!
//! Paths are relative to the manifest's directory. No header row.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Pretrain,
    Train,
    Test,
}

/// Which supervision every entry of a manifest carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Unlabeled,
    Classification,
    Segmentation,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Unlabeled => "unlabeled",
            TaskKind::Classification => "classification",
            TaskKind::Segmentation => "segmentation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub image: String,
    pub label: Option<usize>,
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleManifest {
    pub entries: Vec<ManifestEntry>,
    pub split_tag: SplitTag,
    pub task: TaskKind,
    /// Directory that relative entry paths resolve against.
    pub root: PathBuf,
}

impl SampleManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].image)
    }

    pub fn mask_path(&self, i: usize) -> Option<PathBuf> {
        self.entries[i].mask.as_ref().map(|m| self.root.join(m))
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split_tag = split;
        self
    }

    /// Largest label plus one, for classification manifests.
    pub fn num_classes(&self) -> Option<usize> {
        self.entries.iter().filter_map(|e| e.label).max().map(|m| m + 1)
    }

    /// Serializes rows in the on-disk CSV layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.image);
            if let Some(l) = e.label {
                out.push_str(&format!(",{l}"));
            }
            if let Some(m) = &e.mask {
                out.push(',');
                out.push_str(m);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses and validates a manifest file. Entry order is preserved.
pub fn load_manifest(path: &Path) -> Result<SampleManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, path, &root, true)
}

/// Parses manifest text. When `check_files` is set every referenced file must
/// exist.
pub fn parse_manifest(text: &str, path: &Path, root: &Path, check_files: bool) -> Result<SampleManifest> {
    let row_err = |row: usize, message: String| Error::ManifestRow {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    let mut columns = None;
    let mut task = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(i + 1);
            row_err(row, e.to_string())
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let n = record.len();
        let expected = *columns.get_or_insert(n);
        if n != expected {
            return Err(row_err(row, format!("{n} columns in a {expected}-column manifest")));
        }
        if n > 2 {
            return Err(row_err(row, format!("{n} columns; expected 1 or 2")));
        }
        let image = record[0].to_string();
        if image.is_empty() {
            return Err(row_err(row, "empty image path".into()));
        }
        let (label, mask, kind) = if n == 1 {
            (None, None, TaskKind::Unlabeled)
        } else {
            let second = &record[1];
            if second.is_empty() {
                return Err(row_err(row, "empty second column".into()));
            }
            match second.parse::<i64>() {
                Ok(v) if v < 0 => return Err(row_err(row, format!("negative label {v}"))),
                Ok(v) => (Some(v as usize), None, TaskKind::Classification),
                Err(_) => (None, Some(second.to_string()), TaskKind::Segmentation),
            }
        };
        match task {
            None => task = Some(kind),
            Some(t) if t != kind => {
                return Err(row_err(row, format!("{kind} row in a {t} manifest (mixed task types)")));
            }
            _ => {}
        }
        if check_files {
            for p in std::iter::once(&image).chain(mask.as_ref()) {
                if !root.join(p).is_file() {
                    return Err(row_err(row, format!("file `{p}` not found")));
                }
            }
        }
        entries.push(ManifestEntry { image, label, mask });
    }
    let task = task.ok_or_else(|| Error::Manifest {
        path: path.to_path_buf(),
        message: "no entries".into(),
    })?;
    let split_tag = match task {
        TaskKind::Unlabeled => SplitTag::Pretrain,
        _ => SplitTag::Train,
    };
    Ok(SampleManifest {
        entries,
        split_tag,
        task,
        root: root.to_path_buf(),
    })
}
