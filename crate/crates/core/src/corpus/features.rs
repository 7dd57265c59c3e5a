use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::FeatureSequence;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PLXF";
/// Layout revision of feature files. The header carries no version field.
pub const FEATURE_FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

/// Read a feature file. Files ending in `.csv` are parsed as one frame per
/// row; anything else must be the binary `PLXF` format. The utterance id is
/// taken from the file stem.
pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_csv {
        parse_csv(&id, &bytes).map_err(|e| prefix(path, e))
    } else {
        parse_binary(&id, &bytes).map_err(|e| prefix(path, e))
    }
}

fn prefix(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub(crate) fn parse_binary(id: &str, bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("file shorter than the 12-byte header".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if t == 0 || f == 0 {
        return Err(Error::Format(format!("header declares T={t}, F={f}")));
    }
    let expected = t
        .checked_mul(f)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("header size overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header T={t} F={f} needs {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureSequence::new(id, data, f)
}

fn parse_csv(id: &str, bytes: &[u8]) -> Result<FeatureSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {v:?}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("no frames".into()));
    }
    FeatureSequence::from_rows(id, &rows)
}

pub(crate) fn encode_binary(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    for &v in seq.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Write the binary `PLXF` format. Values are stored as float32.
pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_binary(seq))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
