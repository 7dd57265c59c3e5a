//! Katz-smoothed pattern bigram tables.
//!
//! Counts of 1..=5 are Good-Turing discounted and counts above 5 are kept.
//! When a count-of-counts needed by Good-Turing is zero (or produces an
//! unusable discount) the table uses absolute discounting with D = 0.5
//! instead. Reserved mass goes to unseen words in proportion to the
//! add-one unigram.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GranularityGrid, GridLabeling, GridPoint};

/// Counts at or below this value are discounted.
pub const KATZ_CUTOFF: u64 = 5;
pub const ABSOLUTE_DISCOUNT: f64 = 0.5;

/// Conditioning context of a bigram lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Context {
    Pattern(usize),
    /// Sequence edge or grid edge; the factor is taken as 1.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TableId {
    /// `P(w | ω(l-1))`
    TimeForward,
    /// `P(w | ω(l+1))`
    TimeBackward,
    /// `P(w | ω(m, n_{k-1}, l))`
    PhoneticLower,
    /// `P(w | ω(m, n_{k+1}, l))`
    PhoneticUpper,
    /// `P(w | ω(m_{k-1}, n, l))`
    TemporalLower,
    /// `P(w | ω(m_{k+1}, n, l))`
    TemporalUpper,
}

impl TableId {
    pub const ALL: [TableId; 6] = [
        TableId::TimeForward,
        TableId::TimeBackward,
        TableId::PhoneticLower,
        TableId::PhoneticUpper,
        TableId::TemporalLower,
        TableId::TemporalUpper,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Dense smoothed conditional distribution `P(w | c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    contexts: usize,
    vocab: usize,
    probs: Vec<f64>,
}

impl ConditionalTable {
    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn prob(&self, w: usize, context: usize) -> f64 {
        self.probs[context * self.vocab + w]
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.probs[context * self.vocab..(context + 1) * self.vocab]
    }
}

/// Good-Turing discounted counts r·d_r for r = 1..=cutoff, or `None` when a
/// needed count-of-counts is zero or a discount falls outside (0, 1].
fn good_turing(count_of_counts: &[u64]) -> Option<Vec<f64>> {
    let k = KATZ_CUTOFF as usize;
    let n = |r: usize| count_of_counts.get(r).copied().unwrap_or(0) as f64;
    if (1..=k + 1).any(|r| n(r) == 0.0) {
        return None;
    }
    let common = (k + 1) as f64 * n(k + 1) / n(1);
    if common >= 1.0 {
        return None;
    }
    let mut out = vec![0.0; k + 1];
    for r in 1..=k {
        let r_star = (r + 1) as f64 * n(r + 1) / n(r);
        let d = (r_star / r as f64 - common) / (1.0 - common);
        if !(d > 0.0 && d <= 1.0) {
            return None;
        }
        out[r] = d * r as f64;
    }
    Some(out)
}

/// Smooth a `contexts × vocab` count matrix.
pub fn katz_table(counts: &[Vec<u64>], unigram: &[f64]) -> ConditionalTable {
    let vocab = unigram.len();
    let mut coc = vec![0u64; KATZ_CUTOFF as usize + 2];
    for &c in counts.iter().flatten() {
        if c > 0 && (c as usize) < coc.len() {
            coc[c as usize] += 1;
        }
    }
    let gt = good_turing(&coc);
    let absolute = |c: u64| c as f64 - ABSOLUTE_DISCOUNT;
    let discounted = |c: u64| -> f64 {
        if c > KATZ_CUTOFF {
            c as f64
        } else {
            match &gt {
                Some(d) => d[c as usize],
                None => absolute(c),
            }
        }
    };

    let mut probs = Vec::with_capacity(counts.len() * vocab);
    for row in counts {
        debug_assert_eq!(row.len(), vocab);
        let total: u64 = row.iter().sum();
        if total == 0 {
            probs.extend_from_slice(unigram);
            continue;
        }
        let total = total as f64;
        let unseen_mass: f64 = row
            .iter()
            .zip(unigram)
            .filter(|(c, _)| **c == 0)
            .map(|(_, u)| u)
            .sum();
        if unseen_mass == 0.0 {
            probs.extend(row.iter().map(|&c| c as f64 / total));
            continue;
        }
        let mut seen: Vec<f64> = row.iter().map(|&c| if c > 0 { discounted(c) } else { 0.0 }).collect();
        let mut reserved = 1.0 - seen.iter().sum::<f64>() / total;
        if reserved <= 0.0 {
            // Every seen count is above the cutoff: nothing was reserved.
            seen = row.iter().map(|&c| if c > 0 { absolute(c) } else { 0.0 }).collect();
            reserved = 1.0 - seen.iter().sum::<f64>() / total;
        }
        let alpha = reserved / unseen_mass;
        probs.extend(
            row.iter()
                .zip(&seen)
                .zip(unigram)
                .map(|((&c, &s), &u)| if c > 0 { s / total } else { alpha * u }),
        );
    }
    ConditionalTable {
        contexts: counts.len(),
        vocab,
        probs,
    }
}

/// Add-one smoothed unigram distribution.
pub fn add_one_unigram(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let denom = (total + counts.len() as u64) as f64;
    counts.iter().map(|&c| (c + 1) as f64 / denom).collect()
}

/// Smoothed context tables for one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    vocab: usize,
    unigram: Vec<f64>,
    tables: [Option<ConditionalTable>; 6],
}

impl BigramModel {
    pub fn from_tables(vocab: usize, unigram: Vec<f64>, tables: [Option<ConditionalTable>; 6]) -> Self {
        Self {
            vocab,
            unigram,
            tables,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn unigram(&self) -> &[f64] {
        &self.unigram
    }

    pub fn table(&self, id: TableId) -> Option<&ConditionalTable> {
        self.tables[id.slot()].as_ref()
    }

    /// Flat `(table, context, w, prob)` records for inspection.
    pub fn dump(&self) -> Vec<BigramRecord> {
        let mut out = Vec::new();
        for id in TableId::ALL {
            if let Some(t) = self.table(id) {
                for c in 0..t.contexts {
                    for w in 0..t.vocab {
                        out.push(BigramRecord {
                            table: id,
                            context: c,
                            w,
                            prob: t.prob(w, c),
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BigramRecord {
    pub table: TableId,
    pub context: usize,
    pub w: usize,
    pub prob: f64,
}

/// `P(w | context)` from one table. Boundary contexts and absent tables
/// (no neighbor in that direction) give exactly 1.
pub fn katz_prob(model: &BigramModel, table: TableId, w: usize, context: Context) -> Result<f64> {
    if w >= model.vocab {
        return Err(Error::Validation(format!(
            "pattern {w} outside vocabulary of {}",
            model.vocab
        )));
    }
    let Context::Pattern(c) = context else {
        return Ok(1.0);
    };
    let Some(t) = model.table(table) else {
        return Ok(1.0);
    };
    if c >= t.contexts {
        return Err(Error::Internal(format!(
            "context {c} outside table {table:?} with {} contexts",
            t.contexts
        )));
    }
    Ok(t.prob(w, c))
}

fn count_matrix(contexts: usize, vocab: usize) -> Vec<Vec<u64>> {
    vec![vec![0; vocab]; contexts]
}

/// Estimate the time and cross-granularity tables for every grid point.
pub fn estimate_bigrams(
    grid_labels: &GridLabeling,
    grid: &GranularityGrid,
) -> Result<BTreeMap<GridPoint, BigramModel>> {
    grid_labels.check_covers(grid)?;
    let mut out = BTreeMap::new();
    for p in grid.points() {
        let labels = grid_labels.at(p).expect("covered");
        let n = p.n;
        let mut uni = vec![0u64; n];
        let mut fwd = count_matrix(n, n);
        let mut bwd = count_matrix(n, n);
        for l in labels {
            let pats: Vec<usize> = l.patterns().collect();
            if let Some(&bad) = pats.iter().find(|&&w| w >= n) {
                return Err(Error::Validation(format!(
                    "{}: pattern {bad} outside vocabulary of {p}",
                    l.utterance_id
                )));
            }
            for &w in &pats {
                uni[w] += 1;
            }
            for pair in pats.windows(2) {
                fwd[pair[0]][pair[1]] += 1;
                bwd[pair[1]][pair[0]] += 1;
            }
        }
        let unigram = add_one_unigram(&uni);
        let cross = |neighbor: Option<GridPoint>| -> Option<ConditionalTable> {
            let q = neighbor?;
            let theirs = grid_labels.at(q).expect("covered");
            let mut counts = count_matrix(q.n, n);
            for (mine, other) in labels.iter().zip(theirs) {
                for seg in &mine.segments {
                    if let Some(j) = other.segment_at_frame(seg.central_frame()) {
                        counts[other.segments[j].pattern][seg.pattern] += 1;
                    }
                }
            }
            Some(katz_table(&counts, &unigram))
        };
        let tables = [
            Some(katz_table(&fwd, &unigram)),
            Some(katz_table(&bwd, &unigram)),
            cross(grid.phonetic_neighbor(p, false)),
            cross(grid.phonetic_neighbor(p, true)),
            cross(grid.temporal_neighbor(p, false)),
            cross(grid.temporal_neighbor(p, true)),
        ];
        out.insert(p, BigramModel::from_tables(n, unigram, tables));
    }
    Ok(out)
}
