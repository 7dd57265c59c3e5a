mod common;

use std::collections::BTreeMap;

use common::{brute_force_relabel, fixture_index, random_relabel_fixture, relabel_fixture, rng};
use patlex::grid::{GridLabeling, GridPoint};
use patlex::relabel::{
    context_at, context_scores, count_changes, estimate_bigrams, katz_prob, relabel_pass,
    relabel_position, Context, TableId,
};
use rand::seq::SliceRandom;

fn approx(a: f64, b: f64) {
    assert!((a - b).abs() < 1e-12, "{a} != {b}");
}

#[test]
fn fixture_probabilities_follow_the_katz_recipe() {
    let (grid, gl) = relabel_fixture();
    let p = GridPoint::new(1, 10);
    let model = &estimate_bigrams(&gl, &grid).unwrap()[&p];
    let i = fixture_index;
    // Forward counts from `a`: b 6, B 2. No bigram occurs exactly once, so
    // counts up to 5 lose an absolute 0.5 and counts above 5 are kept.
    let fwd = |w, c| katz_prob(model, TableId::TimeForward, i(w), Context::Pattern(i(c))).unwrap();
    let bwd = |w, c| katz_prob(model, TableId::TimeBackward, i(w), Context::Pattern(i(c))).unwrap();
    approx(fwd("b", "a"), 6.0 / 8.0);
    approx(fwd("B", "a"), 1.5 / 8.0);
    approx(bwd("b", "c"), 6.0 / 8.0);
    approx(bwd("B", "c"), 1.5 / 8.0);
    // Unigram counts over 70 positions, add-one over 10 patterns.
    approx(model.unigram()[i("B")], 9.0 / 80.0);
    approx(model.unigram()[i("b")], 7.0 / 80.0);
    // Reserved mass 1/16 spread over the unseen patterns' unigram share.
    let alpha = (1.0 / 16.0) / (1.0 - 16.0 / 80.0);
    approx(fwd("x", "a"), alpha * 9.0 / 80.0);
    // Context `x` only ever precedes `a` (8 times, above the cutoff), so
    // that context falls back to absolute discounting.
    approx(fwd("a", "x"), 7.5 / 8.0);
    // The cross-granularity tables are absent on a one-point grid.
    for t in [
        TableId::PhoneticLower,
        TableId::PhoneticUpper,
        TableId::TemporalLower,
        TableId::TemporalUpper,
    ] {
        assert_eq!(katz_prob(model, t, 0, Context::Pattern(0)).unwrap(), 1.0);
    }
}

#[test]
fn fixture_relabels_exactly_the_planted_positions() {
    let (grid, gl) = relabel_fixture();
    let p = GridPoint::new(1, 10);
    let out = relabel_pass(&gl, &grid).unwrap();
    assert_eq!(count_changes(&gl, &out)[&p], 2);
    for utt in 0..gl.utterances().len() {
        for l in 0..5 {
            let before = gl.pattern(p, utt, l).unwrap();
            let after = out.pattern(p, utt, l).unwrap();
            if utt >= 12 && l == 2 {
                assert_eq!((before, after), (fixture_index("B"), fixture_index("b")));
            } else {
                assert_eq!(before, after, "utterance {utt} position {l}");
            }
            assert_eq!(gl.segment(p, utt, l).unwrap().start, out.segment(p, utt, l).unwrap().start);
        }
    }
    // The winning product for the planted positions.
    let model = &estimate_bigrams(&gl, &grid).unwrap()[&p];
    let ctx = context_at(&gl, &grid, p, 12, 2).unwrap();
    let scores = context_scores(model, &ctx).unwrap();
    approx(scores[fixture_index("b")], (0.75f64 * 0.75).ln());
    approx(scores[fixture_index("B")], (0.1875f64 * 0.1875).ln());
}

#[test]
fn relabel_position_matches_product_oracle() {
    let mut r = rng(3);
    for case in 0..60 {
        let (grid, gl) = random_relabel_fixture(&mut r);
        let models = estimate_bigrams(&gl, &grid).unwrap();
        for p in grid.points() {
            for utt in 0..gl.utterances().len() {
                for l in 0..gl.labeling(p, utt).unwrap().segments.len() {
                    let got = relabel_position(&gl, &grid, &models, p, utt, l).unwrap();
                    let want = brute_force_relabel(&gl, &grid, &models[&p], p, utt, l);
                    assert_eq!(got, want, "case {case} point {p} utt {utt} pos {l}");
                }
            }
        }
    }
}

#[test]
fn boundary_factors_do_not_change_the_argmax() {
    let mut r = rng(8);
    for _ in 0..30 {
        let (grid, gl) = random_relabel_fixture(&mut r);
        let models = estimate_bigrams(&gl, &grid).unwrap();
        for p in grid.points() {
            let model = &models[&p];
            let ctx = context_at(&gl, &grid, p, 0, 0).unwrap();
            // First position: no previous pattern, so the forward factor is 1.
            assert_eq!(ctx.time_prev, Context::Boundary);
            let with: Vec<f64> = context_scores(model, &ctx).unwrap();
            let without: Vec<f64> = (0..p.n)
                .map(|w| {
                    ctx.factors()
                        .iter()
                        .filter(|(t, _)| *t != TableId::TimeForward)
                        .map(|&(t, c)| katz_prob(model, t, w, c).unwrap().ln())
                        .sum()
                })
                .collect();
            assert_eq!(with, without);
        }
    }
}

#[test]
fn pass_is_order_free_deterministic_and_keeps_boundaries() {
    let mut r = rng(21);
    for _ in 0..20 {
        let (grid, gl) = random_relabel_fixture(&mut r);
        let out = relabel_pass(&gl, &grid).unwrap();
        assert_eq!(out, relabel_pass(&gl, &grid).unwrap());
        assert!(out.is_relabeled());
        let models = estimate_bigrams(&gl, &grid).unwrap();
        // Visit positions in a shuffled order, always reading the input.
        let mut positions = Vec::new();
        for p in grid.points() {
            for utt in 0..gl.utterances().len() {
                for l in 0..gl.labeling(p, utt).unwrap().segments.len() {
                    positions.push((p, utt, l));
                }
            }
        }
        positions.shuffle(&mut r);
        let mut manual: BTreeMap<GridPoint, Vec<_>> = gl.clone().into_map();
        for (p, utt, l) in positions {
            manual.get_mut(&p).unwrap()[utt].segments[l].pattern =
                relabel_position(&gl, &grid, &models, p, utt, l).unwrap();
        }
        assert_eq!(GridLabeling::new(manual, true).unwrap(), out);
        for p in grid.points() {
            for (a, b) in gl.at(p).unwrap().iter().zip(out.at(p).unwrap()) {
                let bounds = |l: &patlex::hmm::Labeling| -> Vec<(usize, usize)> {
                    l.segments.iter().map(|s| (s.start, s.end)).collect()
                };
                assert_eq!(bounds(a), bounds(b));
            }
        }
    }
}
