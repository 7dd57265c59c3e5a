//! Pattern-to-pattern similarity from the symmetric variational KL
//! divergence between state mixtures, summed over aligned states.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hmm::{GaussianComponent, Granularity, PatternHmm, PatternSet, StateMixture};

pub const DEFAULT_BETA: f64 = 100.0;
pub const SIMILARITY_MAGIC: &[u8; 4] = b"PLXS";
/// Layout revision of similarity files. The header carries no version field.
pub const SIMILARITY_FORMAT_VERSION: u32 = 1;

/// Closed-form KL(a‖b) in nats for diagonal Gaussians.
pub fn gaussian_kl(a: &GaussianComponent, b: &GaussianComponent) -> f64 {
    let mut kl = 0.0;
    for i in 0..a.mean.len() {
        let (va, vb) = (a.variance[i], b.variance[i]);
        let d = a.mean[i] - b.mean[i];
        kl += (vb / va).ln() + (va + d * d) / vb - 1.0;
    }
    0.5 * kl
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Variational approximation of KL(f‖g) between two Gaussian mixtures,
/// clamped at 0.
pub fn gmm_kl_variational(f: &StateMixture, g: &StateMixture) -> f64 {
    let mut total = 0.0;
    for fa in &f.components {
        let num: Vec<f64> = f
            .components
            .iter()
            .map(|fb| fb.weight.ln() - gaussian_kl(fa, fb))
            .collect();
        let den: Vec<f64> = g
            .components
            .iter()
            .map(|gb| gb.weight.ln() - gaussian_kl(fa, gb))
            .collect();
        total += fa.weight * (log_sum_exp(&num) - log_sum_exp(&den));
    }
    total.max(0.0)
}

/// Symmetric divergence between two patterns with the same number of
/// states, summed over states matched by index.
pub fn hmm_kl(p: &PatternHmm, q: &PatternHmm) -> Result<f64> {
    if p.num_states() != q.num_states() {
        return Err(Error::Validation(format!(
            "patterns {} and {} have {} and {} states",
            p.pattern_index,
            q.pattern_index,
            p.num_states(),
            q.num_states()
        )));
    }
    Ok(p.states
        .iter()
        .zip(&q.states)
        .map(|(a, b)| gmm_kl_variational(a, b) + gmm_kl_variational(b, a))
        .sum())
}

/// `exp(-kl / beta)`, held at the smallest positive normal value instead of
/// underflowing to 0.
pub fn similarity_from_kl(kl: f64, beta: f64) -> f64 {
    (-kl / beta).exp().max(f64::MIN_POSITIVE)
}

/// `S(i, j) = exp(-KL(i, j) / beta)` for one pattern set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    granularity: Option<Granularity>,
    beta: f64,
    n: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// Build from a full symmetric matrix (row-major `n × n`).
    pub fn from_entries(n: usize, beta: f64, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Validation(format!(
                "{} entries for a {n}×{n} similarity matrix",
                entries.len()
            )));
        }
        for i in 0..n {
            if entries[i * n + i] != 1.0 {
                return Err(Error::Validation(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !(v > 0.0 && v <= 1.0) || v != entries[j * n + i] {
                    return Err(Error::Validation(format!(
                        "entry ({i},{j}) = {v} is not a symmetric similarity"
                    )));
                }
            }
        }
        Ok(Self {
            granularity: None,
            beta,
            n,
            entries,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn granularity(&self) -> Option<Granularity> {
        self.granularity
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Similarity matrix of a pattern set. Pairs `i <= j` are filled in
/// parallel and mirrored.
pub fn similarity_matrix(set: &PatternSet, beta: f64) -> Result<SimilarityMatrix> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
    }
    let n = set.granularity().n;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                Ok(1.0)
            } else {
                hmm_kl(set.pattern(i), set.pattern(j)).map(|kl| similarity_from_kl(kl, beta))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut entries = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        entries[i * n + j] = v;
        entries[j * n + i] = v;
    }
    Ok(SimilarityMatrix {
        granularity: Some(set.granularity()),
        beta,
        n,
        entries,
    })
}

/// Binary layout: magic, u32 n, then the upper triangle (with diagonal)
/// row-major as f64 little-endian.
pub fn encode_similarity(s: &SimilarityMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + s.n * (s.n + 1) * 4);
    out.extend_from_slice(SIMILARITY_MAGIC);
    out.extend_from_slice(&(s.n as u32).to_le_bytes());
    for i in 0..s.n {
        for j in i..s.n {
            out.extend_from_slice(&s.get(i, j).to_le_bytes());
        }
    }
    out
}

/// Decode a `PLXS` file. The beta is not stored and must be supplied.
pub fn decode_similarity(bytes: &[u8], beta: f64) -> Result<SimilarityMatrix> {
    if bytes.len() < 8 || &bytes[..4] != SIMILARITY_MAGIC {
        return Err(Error::Format("not a PLXS similarity file".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + n * (n + 1) / 2 * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "similarity payload is {} bytes, n={n} needs {expected}",
            bytes.len()
        )));
    }
    let mut vals = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = vals.next().unwrap();
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    SimilarityMatrix::from_entries(n, beta, entries)
}

pub fn write_similarity(path: &Path, s: &SimilarityMatrix) -> Result<()> {
    fs::write(path, encode_similarity(s)).map_err(|e| Error::io(path, e))
}

pub fn read_similarity(path: &Path, beta: f64) -> Result<SimilarityMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_similarity(&bytes, beta)
}
