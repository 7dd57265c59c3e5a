//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use patlex::corpus::{Corpus, FeatureSequence};
use patlex::grid::{GranularityGrid, GridLabeling, GridPoint};
use patlex::hmm::{
    GaussianComponent, Granularity, Labeling, PatternHmm, PatternSet, Segment, StateMixture,
};
use patlex::relabel::{katz_prob, BigramModel, Context, TableId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}

/// Log density of a diagonal-covariance mixture, computed from scratch.
pub fn ln_mixture(mix: &StateMixture, x: &[f64]) -> f64 {
    let terms: Vec<f64> = mix
        .components
        .iter()
        .map(|c| {
            c.weight.ln()
                + x.iter()
                    .zip(&c.mean)
                    .zip(&c.variance)
                    .map(|((&xi, &mu), &v)| ln_normal(xi, mu, v))
                    .sum::<f64>()
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn random_mixture(rng: &mut ChaCha8Rng, dim: usize, g: usize) -> StateMixture {
    let raw: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    StateMixture {
        components: raw
            .iter()
            .map(|w| GaussianComponent {
                weight: w / total,
                mean: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                variance: (0..dim).map(|_| rng.random_range(0.3..2.0)).collect(),
            })
            .collect(),
    }
}

pub fn random_set(rng: &mut ChaCha8Rng, m: usize, n: usize, dim: usize, g: usize) -> PatternSet {
    let patterns = (0..n)
        .map(|p| PatternHmm {
            pattern_index: p,
            states: (0..m).map(|_| random_mixture(rng, dim, g)).collect(),
            self_loop: (0..m).map(|_| rng.random_range(0.05..0.95)).collect(),
        })
        .collect();
    PatternSet::new(Granularity::with_gaussians(m, n, g).unwrap(), dim, patterns).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, id: &str, t: usize, dim: usize) -> FeatureSequence {
    let data = (0..t * dim).map(|_| rng.random_range(-2.5..2.5)).collect();
    FeatureSequence::new(id, data, dim).unwrap()
}

/// Best labeling by enumerating every frame-level state path of the
/// pattern loop: `1/n` to enter a pattern at its first state, `a_s` to
/// stay, `1 - a_s` to advance or leave after the last state, and the path
/// must end in a last state. Returns the segments and the path score.
pub fn brute_force_decode(x: &FeatureSequence, set: &PatternSet) -> (Vec<Segment>, f64) {
    struct Search<'a> {
        set: &'a PatternSet,
        x: &'a FeatureSequence,
        m: usize,
        n: usize,
        path: Vec<(usize, usize, bool)>,
        best: (f64, Vec<(usize, usize, bool)>),
    }

    impl Search<'_> {
        fn walk(&mut self, score: f64) {
            let t = self.path.len();
            if t == self.x.len() {
                if self.path[t - 1].1 == self.m - 1 && score > self.best.0 {
                    self.best = (score, self.path.clone());
                }
                return;
            }
            let enter = -(self.n as f64).ln();
            // (pattern, state, entered, transition log-probability)
            let mut next = Vec::new();
            match self.path.last() {
                None => next.extend((0..self.n).map(|q| (q, 0, true, enter))),
                Some(&(p, s, _)) => {
                    let a = self.set.pattern(p).self_loop[s];
                    next.push((p, s, false, a.ln()));
                    if s + 1 < self.m {
                        next.push((p, s + 1, false, (1.0 - a).ln()));
                    } else {
                        next.extend((0..self.n).map(|q| (q, 0, true, (1.0 - a).ln() + enter)));
                    }
                }
            }
            for (p, s, entered, tr) in next {
                let e = ln_mixture(&self.set.pattern(p).states[s], self.x.frame(t));
                self.path.push((p, s, entered));
                self.walk(score + tr + e);
                self.path.pop();
            }
        }
    }

    let gran = set.granularity();
    let mut search = Search {
        set,
        x,
        m: gran.m,
        n: gran.n,
        path: Vec::with_capacity(x.len()),
        best: (f64::NEG_INFINITY, vec![]),
    };
    search.walk(0.0);
    (segments_of(&search.best.1), search.best.0)
}

/// Segment list of a frame-level state path.
pub fn segments_of(states: &[(usize, usize, bool)]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=states.len() {
        if t == states.len() || states[t].2 {
            out.push(Segment::new(states[start].0, start, t));
            start = t;
        }
    }
    out
}

/// Gaussian-mixture sample.
pub fn sample_mixture(rng: &mut ChaCha8Rng, mix: &StateMixture) -> Vec<f64> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = &mix.components[mix.components.len() - 1];
    for c in &mix.components {
        acc += c.weight;
        if u < acc {
            chosen = c;
            break;
        }
    }
    chosen
        .mean
        .iter()
        .zip(&chosen.variance)
        .map(|(mu, v)| mu + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Monte-Carlo estimate of KL(f‖g) and its standard error.
pub fn monte_carlo_kl(
    rng: &mut ChaCha8Rng,
    f: &StateMixture,
    g: &StateMixture,
    samples: usize,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..samples {
        let x = sample_mixture(rng, f);
        let d = ln_mixture(f, &x) - ln_mixture(g, &x);
        sum += d;
        sum2 += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

pub fn labeling(id: &str, segs: &[(usize, usize, usize)]) -> Labeling {
    Labeling::new(
        id,
        segs.iter().map(|&(p, s, e)| Segment::new(p, s, e)).collect(),
    )
}

/// Pattern names of the relabeling fixture.
pub const FIXTURE_NAMES: [&str; 10] = ["x", "a", "b", "c", "y", "u", "d", "B", "e", "v"];

pub fn fixture_index(name: &str) -> usize {
    FIXTURE_NAMES.iter().position(|&s| s == name).unwrap()
}

/// Six utterances `x a b c y`, six `u d B e v`, then two `x a B c y` in
/// which `B` sits in the context where `b` belongs. Two frames per
/// segment, on a one-point grid.
pub fn relabel_fixture() -> (GranularityGrid, GridLabeling) {
    let grid = GranularityGrid::with_gaussians(vec![1], vec![10], 1).unwrap();
    let mut utts = Vec::new();
    let mut add = |words: [&str; 5]| {
        let id = format!("f{:02}", utts.len());
        let segs: Vec<_> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (fixture_index(w), 2 * i, 2 * i + 2))
            .collect();
        utts.push(labeling(&id, &segs));
    };
    for _ in 0..6 {
        add(["x", "a", "b", "c", "y"]);
    }
    for _ in 0..6 {
        add(["u", "d", "B", "e", "v"]);
    }
    for _ in 0..2 {
        add(["x", "a", "B", "c", "y"]);
    }
    let mut map = BTreeMap::new();
    map.insert(GridPoint::new(1, 10), utts);
    (grid, GridLabeling::new(map, false).unwrap())
}

/// Random labelings of the same utterances on a three-point grid.
pub fn random_relabel_fixture(rng: &mut ChaCha8Rng) -> (GranularityGrid, GridLabeling) {
    let grid = if rng.random_bool(0.5) {
        GranularityGrid::with_gaussians(vec![1], vec![2, 3, 4], 1).unwrap()
    } else {
        let n = rng.random_range(2..=4);
        GranularityGrid::with_gaussians(vec![1, 2, 3], vec![n], 1).unwrap()
    };
    let utts = rng.random_range(1..=4);
    let lens: Vec<usize> = (0..utts).map(|_| rng.random_range(6..=14)).collect();
    let mut map = BTreeMap::new();
    for p in grid.points() {
        let labels = lens
            .iter()
            .enumerate()
            .map(|(u, &t)| {
                let mut segs = Vec::new();
                let mut start = 0;
                while start < t {
                    let mut end = start + p.m + rng.random_range(0..3);
                    if t - end.min(t) < p.m {
                        end = t;
                    }
                    segs.push((rng.random_range(0..p.n), start, end));
                    start = end;
                }
                labeling(&format!("r{u}"), &segs)
            })
            .collect();
        map.insert(p, labels);
    }
    (grid, GridLabeling::new(map, false).unwrap())
}

/// Pattern of `other` covering the middle frame of `own`'s segment `l`.
fn co_located(own: &Labeling, other: &Labeling, l: usize) -> usize {
    let s = own.segments[l];
    let c = (s.start + s.end) / 2;
    other
        .segments
        .iter()
        .find(|t| t.start <= c && c < t.end)
        .unwrap()
        .pattern
}

/// Argmax over `w` of the six-factor product, each factor looked up in the
/// model and each context found by direct search.
pub fn brute_force_relabel(
    gl: &GridLabeling,
    grid: &GranularityGrid,
    model: &BigramModel,
    p: GridPoint,
    utt: usize,
    l: usize,
) -> usize {
    let own = gl.labeling(p, utt).unwrap();
    let len = own.segments.len();
    let neighbor = |q: Option<GridPoint>| match q {
        Some(q) => Context::Pattern(co_located(own, gl.labeling(q, utt).unwrap(), l)),
        None => Context::Boundary,
    };
    let pos = |i: Option<usize>| match i {
        Some(i) if i < len => Context::Pattern(own.segments[i].pattern),
        _ => Context::Boundary,
    };
    let contexts = [
        (TableId::TimeForward, pos(l.checked_sub(1))),
        (TableId::TimeBackward, pos(Some(l + 1))),
        (TableId::PhoneticLower, neighbor(grid.phonetic_neighbor(p, false))),
        (TableId::PhoneticUpper, neighbor(grid.phonetic_neighbor(p, true))),
        (TableId::TemporalLower, neighbor(grid.temporal_neighbor(p, false))),
        (TableId::TemporalUpper, neighbor(grid.temporal_neighbor(p, true))),
    ];
    let mut best = (0, f64::NEG_INFINITY);
    for w in 0..p.n {
        let score: f64 = contexts
            .iter()
            .map(|&(t, c)| katz_prob(model, t, w, c).unwrap().ln())
            .sum();
        if score > best.1 {
            best = (w, score);
        }
    }
    best.0
}

/// Utterances alternating between two well-separated 2-D sources, with the
/// generating frame-level source of each utterance.
pub fn two_source_corpus(seed: u64, utts: usize) -> (Corpus, Vec<Vec<usize>>) {
    let mut rng = rng(seed);
    let centers = [[-4.0, -4.0], [4.0, 4.0]];
    let mut seqs = Vec::new();
    let mut truth = Vec::new();
    for u in 0..utts {
        let mut data = Vec::new();
        let mut src = Vec::new();
        let mut k = rng.random_range(0..2);
        for _ in 0..rng.random_range(3..=6) {
            for _ in 0..rng.random_range(5..=15) {
                for &c in &centers[k] {
                    data.push(c + 0.5 * rng.sample::<f64, _>(StandardNormal));
                }
                src.push(k);
            }
            k = 1 - k;
        }
        seqs.push(FeatureSequence::new(format!("s{u:03}"), data, 2).unwrap());
        truth.push(src);
    }
    (Corpus::new(seqs, None).unwrap(), truth)
}

/// Frame agreement between decoded patterns and the generating sources,
/// under the better of the two index matchings.
pub fn two_way_agreement(labels: &[Labeling], truth: &[Vec<usize>]) -> f64 {
    let mut same = 0usize;
    let mut total = 0usize;
    for (l, src) in labels.iter().zip(truth) {
        for s in &l.segments {
            for t in s.start..s.end {
                same += usize::from(s.pattern == src[t]);
                total += 1;
            }
        }
    }
    let a = same as f64 / total as f64;
    a.max(1.0 - a)
}

fn component_1d(weight: f64, mean: f64, variance: f64) -> GaussianComponent {
    GaussianComponent {
        weight,
        mean: vec![mean],
        variance: vec![variance],
    }
}

/// Two 2-component 1-D mixtures. With `gap` large against the standard
/// deviations, g's components sit next to f's and the pairing is clear.
pub fn mixture_pair_1d(rng: &mut ChaCha8Rng, gap: f64) -> (StateMixture, StateMixture) {
    let centers = [0.0, gap];
    let mut make = |jitter: f64| {
        let w = rng.random_range(0.2..0.8);
        StateMixture {
            components: vec![
                component_1d(w, centers[0] + rng.random_range(-jitter..=jitter), rng.random_range(0.5..2.0)),
                component_1d(1.0 - w, centers[1] + rng.random_range(-jitter..=jitter), rng.random_range(0.5..2.0)),
            ],
        }
    };
    let f = make(0.0);
    let g = make(1.0);
    (f, g)
}
