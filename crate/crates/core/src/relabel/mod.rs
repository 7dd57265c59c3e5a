//! Context-consistency relabeling.
//!
//! Each position `l` of each pattern sequence is reassigned to the pattern
//! `w` maximizing the product of six conditional probabilities: forward and
//! backward time bigrams, and the patterns co-located (by central frame) in
//! the lower/upper phonetic and temporal neighbor grid points. Missing
//! contexts contribute a factor of 1. All decisions in a pass read the
//! input labels only and are applied together; boundaries never move.

mod katz;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GranularityGrid, GridLabeling, GridPoint};
use crate::hmm::Labeling;

pub use katz::{
    add_one_unigram, estimate_bigrams, katz_prob, katz_table, BigramModel, BigramRecord,
    ConditionalTable, Context, TableId, ABSOLUTE_DISCOUNT, KATZ_CUTOFF,
};

/// The six conditioning contexts of one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextTriple {
    pub time_prev: Context,
    pub time_next: Context,
    pub phon_lower: Context,
    pub phon_upper: Context,
    pub temp_lower: Context,
    pub temp_upper: Context,
}

impl ContextTriple {
    /// Contexts paired with the table that conditions on them.
    pub fn factors(&self) -> [(TableId, Context); 6] {
        [
            (TableId::TimeForward, self.time_prev),
            (TableId::TimeBackward, self.time_next),
            (TableId::PhoneticLower, self.phon_lower),
            (TableId::PhoneticUpper, self.phon_upper),
            (TableId::TemporalLower, self.temp_lower),
            (TableId::TemporalUpper, self.temp_upper),
        ]
    }
}

/// Pattern of the `neighbor` segment that contains the central frame of
/// segment `position` of `own`.
pub fn align_context(own: &Labeling, neighbor: &Labeling, position: usize) -> Result<usize> {
    let seg = own.segments.get(position).ok_or_else(|| {
        Error::Index(format!(
            "position {position} of {} with {} segments",
            own.utterance_id,
            own.segments.len()
        ))
    })?;
    let frame = seg.central_frame();
    neighbor
        .segment_at_frame(frame)
        .map(|j| neighbor.segments[j].pattern)
        .ok_or_else(|| {
            Error::Validation(format!(
                "{}: frame {frame} is not covered by the neighbor labeling",
                own.utterance_id
            ))
        })
}

/// Gather the context of position `l` of utterance `utt` at `point`.
pub fn context_at(
    grid_labels: &GridLabeling,
    grid: &GranularityGrid,
    point: GridPoint,
    utt: usize,
    l: usize,
) -> Result<ContextTriple> {
    let own = grid_labels
        .labeling(point, utt)
        .ok_or_else(|| Error::Index(format!("no labeling for utterance {utt} at {point}")))?;
    let len = own.segments.len();
    if l >= len {
        return Err(Error::Index(format!(
            "position {l} of {} with {len} segments",
            own.utterance_id
        )));
    }
    let at = |l: usize| Context::Pattern(own.segments[l].pattern);
    let across = |q: Option<GridPoint>| -> Result<Context> {
        match q {
            None => Ok(Context::Boundary),
            Some(q) => {
                let other = grid_labels.labeling(q, utt).ok_or_else(|| {
                    Error::Validation(format!("grid labeling lacks neighbor point {q}"))
                })?;
                align_context(own, other, l).map(Context::Pattern)
            }
        }
    };
    Ok(ContextTriple {
        time_prev: if l > 0 { at(l - 1) } else { Context::Boundary },
        time_next: if l + 1 < len { at(l + 1) } else { Context::Boundary },
        phon_lower: across(grid.phonetic_neighbor(point, false))?,
        phon_upper: across(grid.phonetic_neighbor(point, true))?,
        temp_lower: across(grid.temporal_neighbor(point, false))?,
        temp_upper: across(grid.temporal_neighbor(point, true))?,
    })
}

/// Log of the six-factor product for every candidate pattern.
pub fn context_scores(model: &BigramModel, ctx: &ContextTriple) -> Result<Vec<f64>> {
    (0..model.vocab())
        .map(|w| {
            ctx.factors()
                .iter()
                .map(|&(table, c)| katz_prob(model, table, w, c).map(f64::ln))
                .sum()
        })
        .collect()
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (w, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = w;
        }
    }
    best
}

/// Relabeled pattern for position `l`: argmax over `w` of the context
/// product, lowest index on ties.
pub fn relabel_position(
    grid_labels: &GridLabeling,
    grid: &GranularityGrid,
    bigrams: &BTreeMap<GridPoint, BigramModel>,
    point: GridPoint,
    utt: usize,
    l: usize,
) -> Result<usize> {
    let model = bigrams
        .get(&point)
        .ok_or_else(|| Error::Validation(format!("no bigram model for {point}")))?;
    let ctx = context_at(grid_labels, grid, point, utt, l)?;
    Ok(argmax_lowest(&context_scores(model, &ctx)?))
}

/// Relabel every position of every sequence at every grid point.
pub fn relabel_pass(grid_labels: &GridLabeling, grid: &GranularityGrid) -> Result<GridLabeling> {
    if grid_labels.is_relabeled() {
        return Err(Error::Validation(
            "relabel pass expects raw decoded labels".into(),
        ));
    }
    let bigrams = estimate_bigrams(grid_labels, grid)?;
    let mut out = BTreeMap::new();
    for point in grid.points() {
        let labels = grid_labels.at(point).expect("checked by estimate_bigrams");
        let relabeled = labels
            .par_iter()
            .enumerate()
            .map(|(utt, lab)| {
                let mut next = lab.clone();
                for (l, seg) in next.segments.iter_mut().enumerate() {
                    seg.pattern = relabel_position(grid_labels, grid, &bigrams, point, utt, l)?;
                }
                Ok(next)
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(point, relabeled);
    }
    GridLabeling::new(out, true)
}

/// Number of positions whose pattern differs between two labelings of the
/// same segmentation, per grid point.
pub fn count_changes(before: &GridLabeling, after: &GridLabeling) -> BTreeMap<GridPoint, usize> {
    before
        .points()
        .map(|p| {
            let a = before.at(p).unwrap_or_default();
            let b = after.at(p).unwrap_or_default();
            let changed = a
                .iter()
                .zip(b)
                .flat_map(|(x, y)| x.segments.iter().zip(&y.segments))
                .filter(|(s, t)| s.pattern != t.pattern)
                .count();
            (p, changed)
        })
        .collect()
}
