//! Binary model files (`PLXM`) and JSON-lines labelings.
//!
//! Model layout, little-endian: magic, u32 version, u32 m, n, G, F; then for
//! each pattern and state: G weights, G×F means, G×F variances and the
//! self-loop probability, all f64.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GaussianComponent, Granularity, Labeling, PatternHmm, PatternSet, Segment, StateMixture};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"PLXM";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(set: &PatternSet) -> Vec<u8> {
    let gran = set.granularity();
    let g = set.gaussians();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    for v in [MODEL_VERSION, gran.m as u32, gran.n as u32, g as u32, set.dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for p in set.patterns() {
        for (st, &a) in p.states.iter().zip(&p.self_loop) {
            st.components.iter().for_each(|c| put(c.weight));
            st.components.iter().flat_map(|c| &c.mean).for_each(|&v| put(v));
            st.components.iter().flat_map(|c| &c.variance).for_each(|&v| put(v));
            put(a);
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<PatternSet> {
    if bytes.len() < 24 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a PLXM model file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let (m, n, g, dim) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    let per_state = g * (1 + 2 * dim) + 1;
    let expected = 24 + n * m * per_state * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "model payload is {} bytes, header m={m} n={n} G={g} F={dim} needs {expected}",
            bytes.len()
        )));
    }
    let mut vals = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |k: usize| -> Vec<f64> { vals.by_ref().take(k).collect() };
    let gran = Granularity::with_gaussians(m, n, g)?;
    let patterns = (0..n)
        .map(|p| {
            let mut states = Vec::with_capacity(m);
            let mut self_loop = Vec::with_capacity(m);
            for _ in 0..m {
                let weights = take(g);
                let means = take(g * dim);
                let vars = take(g * dim);
                states.push(StateMixture {
                    components: (0..g)
                        .map(|k| GaussianComponent {
                            weight: weights[k],
                            mean: means[k * dim..(k + 1) * dim].to_vec(),
                            variance: vars[k * dim..(k + 1) * dim].to_vec(),
                        })
                        .collect(),
                });
                self_loop.push(take(1)[0]);
            }
            PatternHmm {
                pattern_index: p,
                states,
                self_loop,
            }
        })
        .collect();
    PatternSet::new(gran, dim, patterns)
}

pub fn write_model(path: &Path, set: &PatternSet) -> Result<()> {
    fs::write(path, encode_model(set)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<PatternSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    utt: String,
    segs: Vec<[usize; 3]>,
    ll: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    relabeled: bool,
}

pub fn write_labelings(path: &Path, labels: &[Labeling], relabeled: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in labels {
        let rec = LabelRecord {
            utt: l.utterance_id.clone(),
            segs: l.segments.iter().map(|s| [s.pattern, s.start, s.end]).collect(),
            ll: l.log_likelihood,
            relabeled,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read labelings; the flag reports whether the records are marked relabeled.
pub fn read_labelings(path: &Path) -> Result<(Vec<Labeling>, bool)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut relabeled = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        relabeled |= rec.relabeled;
        out.push(Labeling {
            utterance_id: rec.utt,
            segments: rec
                .segs
                .into_iter()
                .map(|[p, s, e]| Segment::new(p, s, e))
                .collect(),
            log_likelihood: rec.ll,
        });
    }
    Ok((out, relabeled))
}
