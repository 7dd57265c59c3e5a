//! Left-to-right GMM-HMM acoustic patterns.
//!
//! A [`PatternSet`] holds the `n` pattern HMMs of one granularity `(m, n)`,
//! each with `m` emitting states and diagonal-covariance Gaussian mixtures.
//! Utterances are described by a [`Labeling`], a tiling of the frames into
//! segments, each a realization of one pattern.

mod decode;
mod init;
mod io;
mod train;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use decode::viterbi_decode;
pub use init::{init_labels, kmeans, InitLabels};
pub use io::{
    decode_model, encode_model, read_labelings, read_model, write_labelings, write_model,
    MODEL_MAGIC, MODEL_VERSION,
};
pub use train::{
    corpus_loglik, initial_models, loglik, train_models, variance_floor, TrainReport,
};

pub const DEFAULT_GAUSSIANS: usize = 4;
pub(crate) const MIN_SELF_LOOP: f64 = 0.01;
pub(crate) const MAX_SELF_LOOP: f64 = 0.99;
pub(crate) const MIN_WEIGHT: f64 = 1e-4;

/// Temporal granularity `m` (states per pattern) and phonetic granularity
/// `n` (number of patterns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Granularity {
    pub m: usize,
    pub n: usize,
    pub gaussians_per_state: usize,
}

impl Granularity {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        Self::with_gaussians(m, n, DEFAULT_GAUSSIANS)
    }

    pub fn with_gaussians(m: usize, n: usize, gaussians_per_state: usize) -> Result<Self> {
        if m < 1 || n < 2 || gaussians_per_state < 1 {
            return Err(Error::Parameter(format!(
                "invalid granularity m={m} n={n} G={gaussians_per_state} (need m>=1, n>=2, G>=1)"
            )));
        }
        Ok(Self {
            m,
            n,
            gaussians_per_state,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianComponent {
    /// Log density of `x` under this component, ignoring the weight.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xi, &mu), &var) in x.iter().zip(&self.mean).zip(&self.variance) {
            let d = xi - mu;
            acc += (2.0 * PI * var).ln() + d * d / var;
        }
        -0.5 * acc
    }
}

/// Emission density of one HMM state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMixture {
    pub components: Vec<GaussianComponent>,
}

impl StateMixture {
    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(
            self.components
                .iter()
                .map(|c| c.weight.ln() + c.log_density(x)),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternHmm {
    pub pattern_index: usize,
    pub states: Vec<StateMixture>,
    /// Probability of staying in each state; `1 - p` advances (or exits
    /// after the last state).
    pub self_loop: Vec<f64>,
}

impl PatternHmm {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    granularity: Granularity,
    dim: usize,
    patterns: Vec<PatternHmm>,
}

impl PatternSet {
    /// Validates shapes, probabilities and index order.
    pub fn new(granularity: Granularity, dim: usize, patterns: Vec<PatternHmm>) -> Result<Self> {
        let Granularity { m, n, .. } = granularity;
        if patterns.len() != n {
            return Err(Error::Validation(format!(
                "pattern set for n={n} has {} patterns",
                patterns.len()
            )));
        }
        for (i, p) in patterns.iter().enumerate() {
            if p.pattern_index != i {
                return Err(Error::Validation(format!(
                    "pattern at position {i} has index {}",
                    p.pattern_index
                )));
            }
            if p.states.len() != m || p.self_loop.len() != m {
                return Err(Error::Validation(format!(
                    "pattern {i} has {} states / {} self-loops, expected {m}",
                    p.states.len(),
                    p.self_loop.len()
                )));
            }
            if p.self_loop.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                return Err(Error::Validation(format!(
                    "pattern {i} has a self-loop probability outside (0,1)"
                )));
            }
            for (s, st) in p.states.iter().enumerate() {
                if st.components.is_empty() {
                    return Err(Error::Validation(format!("pattern {i} state {s} has no components")));
                }
                let wsum: f64 = st.components.iter().map(|c| c.weight).sum();
                if (wsum - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "pattern {i} state {s} weights sum to {wsum}"
                    )));
                }
                for c in &st.components {
                    if !(c.weight > 0.0 && c.weight <= 1.0)
                        || c.mean.len() != dim
                        || c.variance.len() != dim
                        || c.variance.iter().any(|&v| !(v > 0.0) || !v.is_finite())
                        || c.mean.iter().any(|v| !v.is_finite())
                    {
                        return Err(Error::Validation(format!(
                            "pattern {i} state {s} has an invalid Gaussian component"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            granularity,
            dim,
            patterns,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patterns(&self) -> &[PatternHmm] {
        &self.patterns
    }

    pub fn pattern(&self, i: usize) -> &PatternHmm {
        &self.patterns[i]
    }

    /// Number of Gaussian components per state (taken from the first state).
    pub fn gaussians(&self) -> usize {
        self.patterns[0].states[0].components.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub pattern: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(pattern: usize, start: usize, end: usize) -> Self {
        Self {
            pattern,
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Middle frame `floor((start + end) / 2)`.
    pub fn central_frame(&self) -> usize {
        (self.start + self.end) / 2
    }
}

/// A decoded pattern sequence for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub utterance_id: String,
    pub segments: Vec<Segment>,
    pub log_likelihood: f64,
}

impl Labeling {
    pub fn new(utterance_id: impl Into<String>, segments: Vec<Segment>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            segments,
            log_likelihood: 0.0,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn patterns(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().map(|s| s.pattern)
    }

    /// Check that the segments tile `[0, num_frames)` with every segment at
    /// least `min_len` long and every pattern index below `n`.
    pub fn validate(&self, num_frames: usize, min_len: usize, n: usize) -> Result<()> {
        let id = &self.utterance_id;
        let mut pos = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start != pos {
                return Err(Error::Validation(format!(
                    "{id}: segment {i} starts at {} but previous ends at {pos}",
                    seg.start
                )));
            }
            if seg.end < seg.start || seg.len() < min_len.max(1) {
                return Err(Error::Validation(format!(
                    "{id}: segment {i} [{}, {}) is shorter than {min_len} frames",
                    seg.start, seg.end
                )));
            }
            if seg.pattern >= n {
                return Err(Error::Validation(format!(
                    "{id}: segment {i} uses pattern {} but the set has {n}",
                    seg.pattern
                )));
            }
            pos = seg.end;
        }
        if pos != num_frames || self.segments.is_empty() {
            return Err(Error::Validation(format!(
                "{id}: segments cover {pos} frames, utterance has {num_frames}"
            )));
        }
        Ok(())
    }

    /// Index of the segment containing `frame`.
    pub fn segment_at_frame(&self, frame: usize) -> Option<usize> {
        let i = self.segments.partition_point(|s| s.end <= frame);
        (i < self.segments.len() && self.segments[i].start <= frame).then_some(i)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-component constants laid out flat for fast emission scoring.
pub(crate) struct EmissionScorer {
    dim: usize,
    m: usize,
    g: usize,
    log_coef: Vec<f64>,
    means: Vec<f64>,
    inv_var: Vec<f64>,
}

impl EmissionScorer {
    pub(crate) fn new(set: &PatternSet) -> Self {
        let dim = set.dim;
        let m = set.granularity.m;
        let g = set.gaussians();
        let mut log_coef = Vec::new();
        let mut means = Vec::new();
        let mut inv_var = Vec::new();
        for p in &set.patterns {
            for st in &p.states {
                for c in &st.components {
                    let gconst: f64 = c.variance.iter().map(|v| (2.0 * PI * v).ln()).sum();
                    log_coef.push(c.weight.ln() - 0.5 * gconst);
                    means.extend_from_slice(&c.mean);
                    inv_var.extend(c.variance.iter().map(|v| 1.0 / v));
                }
            }
        }
        Self {
            dim,
            m,
            g,
            log_coef,
            means,
            inv_var,
        }
    }

    /// Weighted log density of each component of state `(p, s)`, written into `out`.
    pub(crate) fn component_scores(&self, p: usize, s: usize, x: &[f64], out: &mut [f64]) {
        let base = (p * self.m + s) * self.g;
        for (k, o) in out.iter_mut().enumerate().take(self.g) {
            let c = base + k;
            let mu = &self.means[c * self.dim..(c + 1) * self.dim];
            let iv = &self.inv_var[c * self.dim..(c + 1) * self.dim];
            let mut q = 0.0;
            for i in 0..self.dim {
                let d = x[i] - mu[i];
                q += d * d * iv[i];
            }
            *o = self.log_coef[c] - 0.5 * q;
        }
    }

    pub(crate) fn state_score(&self, p: usize, s: usize, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.component_scores(p, s, x, scratch);
        let scores = &scratch[..self.g];
        log_sum_exp(scores.iter().copied())
    }

    pub(crate) fn gaussians(&self) -> usize {
        self.g
    }
}
