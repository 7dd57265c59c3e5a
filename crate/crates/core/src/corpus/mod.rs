//! Speech corpus: per-utterance feature matrices, the JSON-lines manifest
//! that lists them, and optional word annotations used only for evaluation.

mod features;
mod mfcc;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{read_features, write_features, FEATURE_FORMAT_VERSION, FEATURE_MAGIC};
pub use mfcc::{extract_mfcc, read_wav, MfccConfig, SAMPLE_RATE};

/// Default feature dimensionality (13 cepstra + deltas + delta-deltas).
pub const DEFAULT_FEATURE_DIM: usize = 39;
pub const DEFAULT_FRAME_PERIOD_MS: f64 = 10.0;

/// A T×F matrix of acoustic feature frames for one utterance, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    utterance_id: String,
    data: Vec<f64>,
    dim: usize,
    frame_period_ms: f64,
}

impl FeatureSequence {
    pub fn new(utterance_id: impl Into<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        Self::with_frame_period(utterance_id, data, dim, DEFAULT_FRAME_PERIOD_MS)
    }

    pub fn with_frame_period(
        utterance_id: impl Into<String>,
        data: Vec<f64>,
        dim: usize,
        frame_period_ms: f64,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if dim == 0 {
            return Err(Error::Format(format!("{utterance_id}: feature dimension is 0")));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{utterance_id}: {} values do not form whole frames of dimension {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "{utterance_id}: non-finite value at frame {} dim {}",
                i / dim,
                i % dim
            )));
        }
        if !(frame_period_ms > 0.0) {
            return Err(Error::Format(format!(
                "{utterance_id}: frame period must be positive, got {frame_period_ms}"
            )));
        }
        Ok(Self {
            utterance_id,
            data,
            dim,
            frame_period_ms,
        })
    }

    /// Build from a list of equal-length rows.
    pub fn from_rows(utterance_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let utterance_id = utterance_id.into();
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(t) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Format(format!(
                "{utterance_id}: frame {t} has {} values, expected {dim}",
                rows[t].len()
            )));
        }
        Self::new(utterance_id, rows.concat(), dim)
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn set_utterance_id(&mut self, id: impl Into<String>) {
        self.utterance_id = id.into();
    }

    /// Number of frames T.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Feature dimension F.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of frames `[start, end)` as a new sequence with the given id.
    pub fn slice(&self, id: impl Into<String>, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Index(format!(
                "frame range [{start},{end}) outside utterance {} of {} frames",
                self.utterance_id,
                self.len()
            )));
        }
        Self::with_frame_period(
            id,
            self.data[start * self.dim..end * self.dim].to_vec(),
            self.dim,
            self.frame_period_ms,
        )
    }
}

/// A word occurrence, frames `[start_frame, end_frame)` of one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordAnnotation {
    pub utterance_id: String,
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    utterances: Vec<FeatureSequence>,
    annotations: Option<Vec<WordAnnotation>>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(
        utterances: Vec<FeatureSequence>,
        annotations: Option<Vec<WordAnnotation>>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if index.insert(u.utterance_id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate utterance id {:?}",
                    u.utterance_id
                )));
            }
        }
        if let Some(first) = utterances.first() {
            if let Some(bad) = utterances.iter().find(|u| u.dim != first.dim) {
                return Err(Error::Format(format!(
                    "utterance {} has feature dimension {}, expected {} (from {})",
                    bad.utterance_id, bad.dim, first.dim, first.utterance_id
                )));
            }
        }
        if let Some(anns) = &annotations {
            for a in anns {
                let Some(&i) = index.get(&a.utterance_id) else {
                    return Err(Error::Validation(format!(
                        "annotation {a:?} references unknown utterance"
                    )));
                };
                let t = utterances[i].len();
                if a.start_frame >= a.end_frame || a.end_frame > t {
                    return Err(Error::Validation(format!(
                        "annotation {a:?} is outside the {t}-frame utterance"
                    )));
                }
            }
        }
        Ok(Self {
            utterances,
            annotations,
            index,
        })
    }

    pub fn utterances(&self) -> &[FeatureSequence] {
        &self.utterances
    }

    pub fn annotations(&self) -> Option<&[WordAnnotation]> {
        self.annotations.as_deref()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&FeatureSequence> {
        self.index.get(utterance_id).map(|&i| &self.utterances[i])
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Feature dimension shared by all utterances (0 for an empty corpus).
    pub fn dim(&self) -> usize {
        self.utterances.first().map_or(0, FeatureSequence::dim)
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(FeatureSequence::len).sum()
    }

    /// Keep only utterances with at least `min_frames` frames. Returns the
    /// reduced corpus and the ids that were dropped. Annotations of dropped
    /// utterances are dropped with them.
    pub fn retain_min_len(&self, min_frames: usize) -> (Corpus, Vec<String>) {
        let (kept, dropped): (Vec<_>, Vec<_>) = self
            .utterances
            .iter()
            .cloned()
            .partition(|u| u.len() >= min_frames);
        let skipped: Vec<String> = dropped.into_iter().map(|u| u.utterance_id).collect();
        let annotations = self.annotations.as_ref().map(|anns| {
            anns.iter()
                .filter(|a| !skipped.contains(&a.utterance_id))
                .cloned()
                .collect()
        });
        let corpus = Corpus::new(kept, annotations).expect("subset of a valid corpus is valid");
        (corpus, skipped)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    Features {
        utt: String,
        features: String,
    },
    Word {
        utt: String,
        word: String,
        start: usize,
        end: usize,
    },
}

/// Load a JSON-lines manifest. Feature paths are resolved relative to the
/// manifest's directory; feature files are read in parallel.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut feature_entries: Vec<(String, PathBuf)> = Vec::new();
    let mut words = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        match entry {
            ManifestEntry::Features { utt, features } => {
                feature_entries.push((utt, base.join(features)));
            }
            ManifestEntry::Word {
                utt,
                word,
                start,
                end,
            } => words.push(WordAnnotation {
                utterance_id: utt,
                word,
                start_frame: start,
                end_frame: end,
            }),
        }
    }
    let utterances = feature_entries
        .par_iter()
        .map(|(utt, p)| {
            let mut seq = read_features(p)?;
            seq.set_utterance_id(utt.clone());
            Ok(seq)
        })
        .collect::<Result<Vec<_>>>()?;
    let annotations = if words.is_empty() { None } else { Some(words) };
    Corpus::new(utterances, annotations)
}

/// Write a manifest whose feature paths are given relative to its directory.
pub fn write_manifest(
    path: &Path,
    features: &[(String, String)],
    annotations: &[WordAnnotation],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let entries = features
        .iter()
        .map(|(utt, f)| ManifestEntry::Features {
            utt: utt.clone(),
            features: f.clone(),
        })
        .chain(annotations.iter().map(|a| ManifestEntry::Word {
            utt: a.utterance_id.clone(),
            word: a.word.clone(),
            start: a.start_frame,
            end: a.end_frame,
        }));
    for e in entries {
        let line = serde_json::to_string(&e).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
