//! Utterance manifests: CSV with `path,speaker,split` columns. Relative paths
//! resolve against the manifest's own directory.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{load_wav_at, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub speaker: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
    /// Speakers with training utterances, sorted; index = class label.
    classes: Vec<String>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Manifest(format!("duplicate path {}", r.path)));
            }
        }
        let classes: Vec<String> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.speaker.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for r in records.iter().filter(|r| r.split == Split::Val) {
            if classes.binary_search(&r.speaker).is_err() {
                return Err(Error::Manifest(format!(
                    "validation speaker {} has no training utterances",
                    r.speaker
                )));
            }
        }
        Ok(Self {
            records,
            classes,
            base_dir: base_dir.into(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        Self::new(records, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        for r in &self.records {
            writer
                .serialize(r)
                .map_err(|e| Error::Manifest(e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Dense class label of a training speaker.
    pub fn label_of(&self, speaker: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(speaker)).ok()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Decoded utterances of one split, in manifest order.
#[derive(Debug, Clone)]
pub struct Utterances {
    pub ids: Vec<String>,
    pub waveforms: Vec<Waveform>,
    /// Class label per utterance; `None` for speakers outside the training set.
    pub labels: Vec<Option<usize>>,
}

impl Utterances {
    pub fn load(manifest: &Manifest, split: Split, sample_rate: u32) -> Result<Self> {
        let mut out = Self {
            ids: Vec::new(),
            waveforms: Vec::new(),
            labels: Vec::new(),
        };
        for r in manifest.split(split) {
            out.waveforms.push(load_wav_at(manifest.resolve(r), sample_rate)?);
            out.ids.push(r.path.clone());
            out.labels.push(manifest.label_of(&r.speaker));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Labels of a split whose speakers must all be known classes.
    pub fn known_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| l.ok_or_else(|| Error::Manifest(format!("{id}: speaker is not a training class"))))
            .collect()
    }
}
