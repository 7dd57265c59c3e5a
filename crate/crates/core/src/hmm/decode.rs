//! Pattern-loop Viterbi decoding.
//!
//! All `n` patterns run in parallel; after a pattern's last state the path
//! may re-enter the first state of any pattern with probability `1/n`. The
//! utterance must end in the last state of some pattern.

use super::{EmissionScorer, Labeling, PatternSet, Segment};
use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Move {
    Stay,
    Advance,
    Enter,
}

/// Best segmentation of `features` into pattern realizations.
///
/// Ties prefer the lowest pattern index and, between paths, the one whose
/// transition happened earlier.
pub fn viterbi_decode(features: &FeatureSequence, set: &PatternSet) -> Result<Labeling> {
    let m = set.granularity().m;
    let n = set.granularity().n;
    let t_len = features.len();
    if t_len < m {
        return Err(Error::Decode(format!(
            "{}: {t_len} frames cannot hold one {m}-state pattern",
            features.utterance_id()
        )));
    }
    if features.dim() != set.dim() {
        return Err(Error::Validation(format!(
            "{}: feature dimension {} does not match model dimension {}",
            features.utterance_id(),
            features.dim(),
            set.dim()
        )));
    }
    let scorer = EmissionScorer::new(set);
    let mut scratch = vec![0.0; scorer.gaussians()];
    let log_stay: Vec<f64> = set
        .patterns()
        .iter()
        .flat_map(|p| p.self_loop.iter().map(|a| a.ln()))
        .collect();
    let log_leave: Vec<f64> = set
        .patterns()
        .iter()
        .flat_map(|p| p.self_loop.iter().map(|a| (1.0 - a).ln()))
        .collect();
    let log_enter = -(n as f64).ln();

    let width = n * m;
    let mut prev = vec![f64::NEG_INFINITY; width];
    let mut cur = vec![f64::NEG_INFINITY; width];
    let mut moves = vec![Move::Stay; t_len * width];
    // Pattern whose last state gives the best exit at each frame.
    let mut exit_from = vec![0usize; t_len];

    let x0 = features.frame(0);
    for p in 0..n {
        prev[p * m] = log_enter + scorer.state_score(p, 0, x0, &mut scratch);
    }
    for t in 1..t_len {
        let (best_p, best_exit) = best_exit(&prev, &log_leave, n, m);
        exit_from[t - 1] = best_p;
        let enter = best_exit + log_enter;
        let x = features.frame(t);
        for p in 0..n {
            for s in 0..m {
                let i = p * m + s;
                let stay = prev[i] + log_stay[i];
                let (other, kind) = if s == 0 {
                    (enter, Move::Enter)
                } else {
                    (prev[i - 1] + log_leave[i - 1], Move::Advance)
                };
                let (score, mv) = if stay >= other {
                    (stay, Move::Stay)
                } else {
                    (other, kind)
                };
                moves[t * width + i] = mv;
                cur[i] = if score == f64::NEG_INFINITY {
                    score
                } else {
                    score + scorer.state_score(p, s, x, &mut scratch)
                };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut end_p = 0;
    for p in 1..n {
        if prev[p * m + m - 1] > prev[end_p * m + m - 1] {
            end_p = p;
        }
    }
    let log_likelihood = prev[end_p * m + m - 1];
    if !log_likelihood.is_finite() {
        return Err(Error::Numeric(format!(
            "{}: no finite decoding path",
            features.utterance_id()
        )));
    }

    let mut segments = Vec::new();
    let (mut p, mut s) = (end_p, m - 1);
    let mut seg_end = t_len;
    let mut t = t_len - 1;
    loop {
        match moves[t * width + p * m + s] {
            _ if t == 0 => {
                segments.push(Segment::new(p, 0, seg_end));
                break;
            }
            Move::Stay => {}
            Move::Advance => s -= 1,
            Move::Enter => {
                segments.push(Segment::new(p, t, seg_end));
                seg_end = t;
                p = exit_from[t - 1];
                s = m - 1;
            }
        }
        t -= 1;
    }
    segments.reverse();
    Ok(Labeling {
        utterance_id: features.utterance_id().to_string(),
        segments,
        log_likelihood,
    })
}

fn best_exit(scores: &[f64], log_leave: &[f64], n: usize, m: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for p in 0..n {
        let i = p * m + m - 1;
        let v = scores[i] + log_leave[i];
        if v > best.1 {
            best = (p, v);
        }
    }
    best
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::hmm::{GaussianComponent, Granularity, PatternHmm, StateMixture};

    pub(crate) fn single_gaussian_set(m: usize, means: &[f64], self_loop: f64) -> PatternSet {
        let patterns = means
            .iter()
            .enumerate()
            .map(|(i, &mu)| PatternHmm {
                pattern_index: i,
                states: (0..m)
                    .map(|_| StateMixture {
                        components: vec![GaussianComponent {
                            weight: 1.0,
                            mean: vec![mu],
                            variance: vec![1.0],
                        }],
                    })
                    .collect(),
                self_loop: vec![self_loop; m],
            })
            .collect();
        PatternSet::new(Granularity::with_gaussians(m, means.len(), 1).unwrap(), 1, patterns)
            .unwrap()
    }

    fn seq(vals: &[f64]) -> FeatureSequence {
        FeatureSequence::new("u", vals.to_vec(), 1).unwrap()
    }

    #[test]
    fn two_patterns_split_at_change() {
        let set = single_gaussian_set(1, &[0.0, 10.0], 0.5);
        let l = viterbi_decode(&seq(&[0.0, 0.0, 10.0, 10.0]), &set).unwrap();
        assert_eq!(
            l.segments,
            vec![Segment::new(0, 0, 2), Segment::new(1, 2, 4)]
        );
        l.validate(4, 1, 2).unwrap();
    }

    #[test]
    fn exactly_m_frames_gives_one_segment() {
        let set = single_gaussian_set(3, &[0.0, 5.0], 0.5);
        let l = viterbi_decode(&seq(&[4.0, 5.0, 6.0]), &set).unwrap();
        assert_eq!(l.segments, vec![Segment::new(1, 0, 3)]);
    }

    #[test]
    fn too_short_is_decode_error() {
        let set = single_gaussian_set(3, &[0.0, 5.0], 0.5);
        assert!(matches!(
            viterbi_decode(&seq(&[1.0, 2.0]), &set),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn ties_pick_lowest_pattern_and_deterministic() {
        // Identical patterns: every decision is a tie.
        let set = single_gaussian_set(2, &[1.0, 1.0, 1.0], 0.5);
        let f = seq(&[1.0, 0.0, 2.0, 1.0, 1.0]);
        let a = viterbi_decode(&f, &set).unwrap();
        let b = viterbi_decode(&f, &set).unwrap();
        assert_eq!(a, b);
        assert!(a.patterns().all(|p| p == 0));
        a.validate(5, 2, 3).unwrap();
    }
}
