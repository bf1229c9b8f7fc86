//! Dataset manifests: one image per line as `path,label,split[,format]`.
//!
//! ```text
//! # path, label, split, format (optional)
//! slides/n001.tif, normal, train, tiff
//! slides/q017.png, unknown, validation
//! ```
//!
//! Lines starting with `#` are comments; a leading `path,...` header line
//! is skipped. Labels are `normal`, `benign`, `in_situ`, `invasive` or
//! `unknown`; splits are `train` or `validation`. Relative paths resolve
//! against the manifest's directory.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ClassLabel;
use crate::raster::RasterFormat;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("manifest line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("manifest lists {0:?} more than once")]
    DuplicatePath(String),
    #[error("manifest entries {0:?} and {1:?} map to the same image id {2:?}")]
    DuplicateId(String, String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub source: String,
    /// Resolved path on disk.
    pub path: PathBuf,
    /// `None` for inference-only entries.
    pub label: Option<ClassLabel>,
    pub split: Split,
    /// `None` means sniff the format from the file content.
    pub format: Option<RasterFormat>,
    /// File-name-safe identifier derived from `source`.
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// `slides/a b.tif` -> `slides_a_b`.
pub fn image_id(source: &str) -> String {
    let trimmed = match source.rfind('.') {
        Some(dot) if dot > source.rfind(['/', '\\']).map_or(0, |s| s + 1) => &source[..dot],
        _ => source,
    };
    let id: String = trimmed
        .trim_start_matches("./")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    id.trim_matches('_').to_string()
}

fn parse_label(s: &str) -> Result<Option<ClassLabel>, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "unknown" | "-" | "?" => Ok(None),
        other => other.parse().map(Some),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "train" | "training" => Ok(Split::Train),
        "validation" | "val" | "valid" | "test" => Ok(Split::Validation),
        other => Err(format!("unknown split {other:?}")),
    }
}

impl DatasetManifest {
    /// Parses manifest text, resolving relative paths against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ManifestError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        let mut seen_paths = HashSet::new();
        let mut seen_ids: HashMap<String, String> = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ManifestError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(i as u64 + 1, |p| p.line());
            let err = |message: String| ManifestError::Parse { line, message };
            let fields: Vec<&str> = record.iter().collect();
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            if entries.is_empty() && fields[0].eq_ignore_ascii_case("path") {
                continue;
            }
            if fields.len() < 2 || fields.len() > 4 {
                return Err(err(format!(
                    "expected path,label[,split[,format]], got {} fields",
                    fields.len()
                )));
            }
            let source = fields[0].to_string();
            if source.is_empty() {
                return Err(err("empty path".into()));
            }
            let label = parse_label(fields[1]).map_err(err)?;
            let split = match fields.get(2) {
                Some(s) if !s.is_empty() => parse_split(s).map_err(err)?,
                _ => Split::Validation,
            };
            let format = match fields.get(3) {
                Some(f) if !f.is_empty() && !f.eq_ignore_ascii_case("auto") => Some(
                    RasterFormat::from_name(f)
                        .ok_or_else(|| err(format!("unknown format {f:?}")))?,
                ),
                _ => None,
            };
            if !seen_paths.insert(source.clone()) {
                return Err(ManifestError::DuplicatePath(source));
            }
            let id = image_id(&source);
            if let Some(prev) = seen_ids.insert(id.clone(), source.clone()) {
                return Err(ManifestError::DuplicateId(prev, source, id));
            }
            let p = PathBuf::from(&source);
            let path = if p.is_absolute() { p } else { base_dir.join(p) };
            entries.push(ManifestEntry {
                source,
                path,
                label,
                split,
                format,
                id,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Manifest text for the entries, in the format [`parse`](Self::parse) reads.
    pub fn to_text(&self) -> String {
        let mut out = String::from("path,label,split,format\n");
        for e in &self.entries {
            let label = e.label.map_or("unknown", |l| l.as_str());
            let format = match e.format {
                Some(f) => serde_json::to_value(f)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                None => "auto".into(),
            };
            out.push_str(&format!("{},{},{},{}\n", e.source, label, e.split, format));
        }
        out
    }

    /// Ground-truth lookup by image id.
    pub fn truth(&self) -> HashMap<String, Option<ClassLabel>> {
        self.entries
            .iter()
            .map(|e| (e.id.clone(), e.label))
            .collect()
    }

    pub fn has_labels(&self) -> bool {
        self.entries.iter().any(|e| e.label.is_some())
    }

    /// Reassigns splits class by class: a seeded shuffle of each class's
    /// entries, the first `round(n * train_fraction)` going to training.
    /// Unlabelled entries become validation.
    pub fn stratified_split(&mut self, train_fraction: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in self.entries.iter_mut() {
            e.split = Split::Validation;
        }
        for class in ClassLabel::ALL {
            let mut idx: Vec<usize> = (0..self.entries.len())
                .filter(|&i| self.entries[i].label == Some(class))
                .collect();
            idx.shuffle(&mut rng);
            let n_train = (idx.len() as f64 * train_fraction.clamp(0.0, 1.0)).round() as usize;
            for &i in &idx[..n_train] {
                self.entries[i].split = Split::Train;
            }
        }
    }
}
