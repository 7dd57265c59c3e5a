//! Query-by-example search over decoded pattern sequences.
//!
//! A document and a query, both decoded under one pattern set, are compared
//! through the matching matrix `W(i, j) = S(d_i, q_j)`; the relevance score
//! is the best diagonal sum of `W`. Scores from every grid point are
//! averaged with equal weight.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::FeatureSequence;
use crate::discovery::GridModels;
use crate::error::{Error, Result};
use crate::grid::GridPoint;
use crate::hmm::{viterbi_decode, PatternSet};
use crate::similarity::{similarity_matrix, SimilarityMatrix};

/// `D × Q` similarities between a document's and a query's patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl MatchingMatrix {
    /// Row-major `rows × cols` entries, each in `[0, 1]`.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Validation(format!(
                "{} entries for a {rows}x{cols} matching matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(
                "matching matrix entries must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Document length `D`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Query length `Q`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

pub fn matching_matrix(
    doc: &[usize],
    query: &[usize],
    s: &SimilarityMatrix,
) -> Result<MatchingMatrix> {
    let n = s.n();
    if let Some(&bad) = doc.iter().chain(query).find(|&&p| p >= n) {
        return Err(Error::Validation(format!(
            "pattern index {bad} outside a similarity matrix of size {n}"
        )));
    }
    let entries = doc
        .iter()
        .flat_map(|&d| query.iter().map(move |&q| s.get(d, q)))
        .collect();
    Ok(MatchingMatrix {
        rows: doc.len(),
        cols: query.len(),
        entries,
    })
}

/// `max_o Σ_j W(o + j, j)` over every offset with at least one entry inside
/// the matrix; entries past either edge count as 0.
pub fn relevance(w: &MatchingMatrix) -> Result<f64> {
    let (d, q) = (w.rows as isize, w.cols as isize);
    if d == 0 || q == 0 {
        return Err(Error::Validation(
            "relevance of an empty matching matrix".into(),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    for o in -(q - 1)..d {
        let lo = (-o).max(0);
        let hi = q.min(d - o);
        let sum: f64 = (lo..hi)
            .map(|j| w.get((o + j) as usize, j as usize))
            .sum();
        best = best.max(sum);
    }
    Ok(best)
}

/// Decoded archive plus the models and similarity matrices needed to score
/// queries against it.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    sets: BTreeMap<GridPoint, PatternSet>,
    sims: BTreeMap<GridPoint, SimilarityMatrix>,
    doc_ids: Vec<String>,
    docs: BTreeMap<GridPoint, Vec<Vec<usize>>>,
    max_m: usize,
}

impl SearchIndex {
    /// Index the decoded labels of `models`, computing similarity matrices
    /// with scaling `beta`.
    pub fn build(models: &GridModels, beta: f64) -> Result<Self> {
        let sims = models
            .sets
            .par_iter()
            .map(|(&p, set)| similarity_matrix(set, beta).map(|s| (p, s)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::with_similarities(models, sims)
    }

    /// Index with precomputed similarity matrices.
    pub fn with_similarities(
        models: &GridModels,
        sims: BTreeMap<GridPoint, SimilarityMatrix>,
    ) -> Result<Self> {
        let mut docs = BTreeMap::new();
        for (&p, set) in &models.sets {
            let s = sims
                .get(&p)
                .ok_or_else(|| Error::Validation(format!("no similarity matrix for {p}")))?;
            if s.n() != set.granularity().n {
                return Err(Error::Validation(format!(
                    "similarity matrix for {p} has size {}",
                    s.n()
                )));
            }
            let labels = models
                .labels
                .at(p)
                .ok_or_else(|| Error::Validation(format!("no archive labels for {p}")))?;
            docs.insert(p, labels.iter().map(|l| l.patterns().collect()).collect());
        }
        Ok(Self {
            sets: models.sets.clone(),
            sims,
            doc_ids: models.labels.utterances().to_vec(),
            docs,
            max_m: models.grid.max_m(),
        })
    }

    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.sets.keys().copied()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn similarity(&self, p: GridPoint) -> Option<&SimilarityMatrix> {
        self.sims.get(&p)
    }

    /// Relevance of every document to `query` (already decoded at `p`).
    pub fn score_point(&self, p: GridPoint, query: &[usize]) -> Result<Vec<f64>> {
        let s = &self.sims[&p];
        self.docs[&p]
            .iter()
            .map(|doc| relevance(&matching_matrix(doc, query, s)?))
            .collect()
    }

    /// Per-point relevance scores of every document, decoding the query
    /// under each pattern set.
    pub fn score(&self, query: &FeatureSequence) -> Result<BTreeMap<GridPoint, Vec<f64>>> {
        if query.len() < self.max_m {
            return Err(Error::Input(format!(
                "query {} has {} frames; at least {} are needed",
                query.utterance_id(),
                query.len(),
                self.max_m
            )));
        }
        self.sets
            .par_iter()
            .map(|(&p, set)| {
                let decoded = viterbi_decode(query, set)?;
                let q: Vec<usize> = decoded.patterns().collect();
                self.score_point(p, &q).map(|r| (p, r))
            })
            .collect()
    }

    pub fn search(&self, query: &FeatureSequence) -> Result<RankedList> {
        let scores = self.score(query)?;
        fuse(query.utterance_id(), &self.doc_ids, &scores)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    pub fused_score: f64,
    /// Relevance per grid point, in the order of [`RankedList::points`].
    pub per_set: Vec<f64>,
}

/// Documents ordered by fused score, highest first, ties by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub points: Vec<GridPoint>,
    pub entries: Vec<RankedDoc>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Keep only the first `k` entries.
    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

/// Average per-point scores with equal weight and rank the documents.
pub fn fuse(
    query_id: &str,
    doc_ids: &[String],
    scores: &BTreeMap<GridPoint, Vec<f64>>,
) -> Result<RankedList> {
    if scores.is_empty() {
        return Err(Error::Validation("no grid points to fuse".into()));
    }
    if let Some((p, s)) = scores.iter().find(|(_, s)| s.len() != doc_ids.len()) {
        return Err(Error::Validation(format!(
            "{p} scored {} of {} documents",
            s.len(),
            doc_ids.len()
        )));
    }
    let points: Vec<GridPoint> = scores.keys().copied().collect();
    let mut entries: Vec<RankedDoc> = doc_ids
        .iter()
        .enumerate()
        .map(|(d, id)| {
            let per_set: Vec<f64> = scores.values().map(|s| s[d]).collect();
            RankedDoc {
                doc_id: id.clone(),
                fused_score: per_set.iter().sum::<f64>() / per_set.len() as f64,
                per_set,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.fused_score
            .total_cmp(&a.fused_score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    Ok(RankedList {
        query_id: query_id.to_string(),
        points,
        entries,
    })
}
