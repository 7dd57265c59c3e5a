//! Label-constrained re-estimation.
//!
//! Segment boundaries are held fixed. Within each segment a realization must
//! start in the first state and end in the last, so EM only has to align
//! frames to states inside segments. The objective per pattern is the sum
//! over its segments of the forward log-likelihood, plus the exit transition
//! for segments followed by another segment.

use rayon::prelude::*;

use super::{
    log_sum_exp, EmissionScorer, GaussianComponent, Granularity, Labeling, PatternHmm,
    PatternSet, StateMixture, MAX_SELF_LOOP, MIN_SELF_LOOP, MIN_WEIGHT,
};
use crate::corpus::{Corpus, FeatureSequence};
use crate::error::{Error, Result};

const FLOOR_SCALE: f64 = 1e-3;
const ABSOLUTE_FLOOR: f64 = 1e-8;
const SPLIT_OFFSET: f64 = 0.2;
const EM_ITERS_AFTER_SPLIT: usize = 2;

/// Log-likelihoods recorded while training, one stage per mixture size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub stages: Vec<TrainStage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStage {
    pub gaussians: usize,
    /// Assigned-data log-likelihood before each EM update, then after the last.
    pub loglik: Vec<f64>,
}

impl TrainReport {
    /// True when no stage's log-likelihood drops by more than `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.stages
            .iter()
            .all(|s| s.loglik.windows(2).all(|w| w[1] >= w[0] - tol))
    }

    pub fn final_loglik(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.loglik.last().copied())
    }
}

/// Per-dimension variance floor: a fixed fraction of the corpus variance.
pub fn variance_floor(corpus: &Corpus) -> Vec<f64> {
    let (_, var) = global_stats(corpus);
    var.iter()
        .map(|v| (FLOOR_SCALE * v).max(ABSOLUTE_FLOOR))
        .collect()
}

fn global_stats(corpus: &Corpus) -> (Vec<f64>, Vec<f64>) {
    let dim = corpus.dim();
    let mut sum = vec![0.0; dim];
    let mut sum2 = vec![0.0; dim];
    let mut count = 0.0f64;
    for u in corpus.utterances() {
        for x in u.frames() {
            for i in 0..dim {
                sum[i] += x[i];
                sum2[i] += x[i] * x[i];
            }
            count += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count.max(1.0)).collect();
    let var = sum2
        .iter()
        .zip(&mean)
        .map(|(s2, mu)| (s2 / count.max(1.0) - mu * mu).max(0.0))
        .collect();
    (mean, var)
}

#[derive(Debug, Clone, Copy)]
struct SegRef {
    utt: usize,
    start: usize,
    end: usize,
    followed: bool,
}

/// Validate labels against the corpus and group segments by pattern.
fn gather_segments(
    corpus: &Corpus,
    labels: &[Labeling],
    gran: Granularity,
) -> Result<Vec<Vec<SegRef>>> {
    let mut by_pattern = vec![Vec::new(); gran.n];
    let index: std::collections::HashMap<&str, usize> = corpus
        .utterances()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.utterance_id(), i))
        .collect();
    for l in labels {
        let &utt = index.get(l.utterance_id.as_str()).ok_or_else(|| {
            Error::Validation(format!("labels for unknown utterance {}", l.utterance_id))
        })?;
        l.validate(corpus.utterances()[utt].len(), gran.m, gran.n)?;
        let last = l.segments.len() - 1;
        for (i, s) in l.segments.iter().enumerate() {
            by_pattern[s.pattern].push(SegRef {
                utt,
                start: s.start,
                end: s.end,
                followed: i != last,
            });
        }
    }
    Ok(by_pattern)
}

struct PatternAcc {
    occ: Vec<f64>,
    comp_occ: Vec<f64>,
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    segments: usize,
    followed: usize,
    loglik: f64,
}

impl PatternAcc {
    fn new(m: usize, g: usize, dim: usize) -> Self {
        Self {
            occ: vec![0.0; m],
            comp_occ: vec![0.0; m * g],
            sum_x: vec![0.0; m * g * dim],
            sum_x2: vec![0.0; m * g * dim],
            segments: 0,
            followed: 0,
            loglik: 0.0,
        }
    }
}

struct PatternView<'a> {
    scorer: &'a EmissionScorer,
    pattern: usize,
    m: usize,
    log_stay: Vec<f64>,
    log_leave: Vec<f64>,
}

impl<'a> PatternView<'a> {
    fn new(scorer: &'a EmissionScorer, hmm: &PatternHmm) -> Self {
        Self {
            scorer,
            pattern: hmm.pattern_index,
            m: hmm.num_states(),
            log_stay: hmm.self_loop.iter().map(|a| a.ln()).collect(),
            log_leave: hmm.self_loop.iter().map(|a| (1.0 - a).ln()).collect(),
        }
    }

    /// Forward(-backward) over frames `[start, end)` constrained to start in
    /// state 0 and end in state m-1. Returns the segment log-likelihood
    /// (without the exit transition) and accumulates posteriors if asked.
    fn segment(
        &self,
        seq: &FeatureSequence,
        start: usize,
        end: usize,
        acc: Option<&mut PatternAcc>,
    ) -> f64 {
        let m = self.m;
        let g = self.scorer.gaussians();
        let len = end - start;
        let mut comp = vec![0.0; len * m * g];
        let mut emit = vec![0.0; len * m];
        for t in 0..len {
            let x = seq.frame(start + t);
            for s in 0..m {
                let c = &mut comp[(t * m + s) * g..(t * m + s + 1) * g];
                self.scorer.component_scores(self.pattern, s, x, c);
                emit[t * m + s] = log_sum_exp(c.iter().copied());
            }
        }
        let mut alpha = vec![f64::NEG_INFINITY; len * m];
        alpha[0] = emit[0];
        for t in 1..len {
            for s in 0..m {
                let stay = alpha[(t - 1) * m + s] + self.log_stay[s];
                let adv = if s > 0 {
                    alpha[(t - 1) * m + s - 1] + self.log_leave[s - 1]
                } else {
                    f64::NEG_INFINITY
                };
                alpha[t * m + s] = log_add(stay, adv) + emit[t * m + s];
            }
        }
        let total = alpha[(len - 1) * m + m - 1];
        let Some(acc) = acc else {
            return total;
        };

        let mut beta = vec![f64::NEG_INFINITY; len * m];
        beta[(len - 1) * m + m - 1] = 0.0;
        for t in (0..len - 1).rev() {
            for s in 0..m {
                let stay = self.log_stay[s] + emit[(t + 1) * m + s] + beta[(t + 1) * m + s];
                let adv = if s + 1 < m {
                    self.log_leave[s] + emit[(t + 1) * m + s + 1] + beta[(t + 1) * m + s + 1]
                } else {
                    f64::NEG_INFINITY
                };
                beta[t * m + s] = log_add(stay, adv);
            }
        }
        let dim = seq.dim();
        for t in 0..len {
            let x = seq.frame(start + t);
            for s in 0..m {
                let lg = alpha[t * m + s] + beta[t * m + s] - total;
                if lg == f64::NEG_INFINITY {
                    continue;
                }
                let gamma = lg.exp();
                acc.occ[s] += gamma;
                for k in 0..g {
                    let r = gamma * (comp[(t * m + s) * g + k] - emit[t * m + s]).exp();
                    let c = s * g + k;
                    acc.comp_occ[c] += r;
                    let sx = &mut acc.sum_x[c * dim..(c + 1) * dim];
                    for (i, v) in sx.iter_mut().enumerate() {
                        *v += r * x[i];
                    }
                    let sx2 = &mut acc.sum_x2[c * dim..(c + 1) * dim];
                    for (i, v) in sx2.iter_mut().enumerate() {
                        *v += r * x[i] * x[i];
                    }
                }
            }
        }
        total
    }

    fn exit(&self) -> f64 {
        self.log_leave[self.m - 1]
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn accumulate(
    corpus: &Corpus,
    set: &PatternSet,
    scorer: &EmissionScorer,
    pattern: usize,
    segs: &[SegRef],
    with_stats: bool,
) -> PatternAcc {
    let hmm = set.pattern(pattern);
    let view = PatternView::new(scorer, hmm);
    let mut acc = PatternAcc::new(set.granularity().m, set.gaussians(), set.dim());
    for sr in segs {
        let seq = &corpus.utterances()[sr.utt];
        let ll = if with_stats {
            view.segment(seq, sr.start, sr.end, Some(&mut acc))
        } else {
            view.segment(seq, sr.start, sr.end, None)
        };
        acc.loglik += ll + if sr.followed { view.exit() } else { 0.0 };
        acc.segments += 1;
        acc.followed += usize::from(sr.followed);
    }
    acc
}

fn clamp_loop(a: f64) -> f64 {
    a.clamp(MIN_SELF_LOOP, MAX_SELF_LOOP)
}

/// Maximization step for one pattern. Patterns without data are returned as is.
fn maximize(prior: &PatternHmm, acc: &PatternAcc, floor: &[f64]) -> PatternHmm {
    if acc.segments == 0 {
        return prior.clone();
    }
    let m = prior.num_states();
    let dim = floor.len();
    let mut out = prior.clone();
    for s in 0..m {
        let g = prior.states[s].components.len();
        let occ = acc.occ[s];
        // Each segment occupies every state in one run, so expected stays
        // are occupancy minus runs.
        let stays = (occ - acc.segments as f64).max(0.0);
        let leaves = if s + 1 < m { acc.segments } else { acc.followed } as f64;
        if stays + leaves > 0.0 {
            out.self_loop[s] = clamp_loop(stays / (stays + leaves));
        }
        if occ <= 0.0 {
            continue;
        }
        let comps = &mut out.states[s].components;
        for k in 0..g {
            let c = s * g + k;
            let nk = acc.comp_occ[c];
            comps[k].weight = (nk / occ).max(MIN_WEIGHT);
            if nk < 1e-10 {
                continue;
            }
            for i in 0..dim {
                let mean = acc.sum_x[c * dim + i] / nk;
                let var = acc.sum_x2[c * dim + i] / nk - mean * mean;
                comps[k].mean[i] = mean;
                comps[k].variance[i] = var.max(floor[i]);
            }
        }
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= wsum);
    }
    out
}

fn em(
    corpus: &Corpus,
    segs: &[Vec<SegRef>],
    mut set: PatternSet,
    iters: usize,
    floor: &[f64],
) -> Result<(PatternSet, TrainStage)> {
    let mut loglik = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let scorer = EmissionScorer::new(&set);
        let accs: Vec<PatternAcc> = (0..set.granularity().n)
            .into_par_iter()
            .map(|p| accumulate(corpus, &set, &scorer, p, &segs[p], true))
            .collect();
        loglik.push(accs.iter().map(|a| a.loglik).sum());
        let patterns = set
            .patterns()
            .iter()
            .zip(&accs)
            .map(|(p, a)| maximize(p, a, floor))
            .collect();
        set = PatternSet::new(set.granularity(), set.dim(), patterns)?;
    }
    let scorer = EmissionScorer::new(&set);
    let final_ll: f64 = (0..set.granularity().n)
        .into_par_iter()
        .map(|p| accumulate(corpus, &set, &scorer, p, &segs[p], false).loglik)
        .collect::<Vec<_>>()
        .iter()
        .sum();
    if !final_ll.is_finite() {
        return Err(Error::Numeric(format!(
            "assigned-data log-likelihood is {final_ll} for {:?}",
            set.granularity()
        )));
    }
    loglik.push(final_ll);
    let gaussians = set.gaussians();
    Ok((set, TrainStage { gaussians, loglik }))
}

/// Re-estimate every pattern of `prior` by EM on its labeled segments, with
/// boundaries fixed. Patterns with no segments keep their parameters.
pub fn train_models(
    corpus: &Corpus,
    labels: &[Labeling],
    prior: &PatternSet,
    em_iters: usize,
) -> Result<(PatternSet, TrainReport)> {
    if em_iters == 0 {
        return Err(Error::Parameter("em_iters must be at least 1".into()));
    }
    if corpus.dim() != prior.dim() {
        return Err(Error::Validation(format!(
            "corpus dimension {} does not match model dimension {}",
            corpus.dim(),
            prior.dim()
        )));
    }
    let segs = gather_segments(corpus, labels, prior.granularity())?;
    let floor = variance_floor(corpus);
    let (set, stage) = em(corpus, &segs, prior.clone(), em_iters, &floor)?;
    Ok((set, TrainReport { stages: vec![stage] }))
}

/// Build models from scratch: single Gaussians from a linear state alignment
/// of each segment, `em_iters` EM passes, then mixtures grown by splitting
/// means ±0.2σ with two EM passes after every split.
pub fn initial_models(
    corpus: &Corpus,
    labels: &[Labeling],
    gran: Granularity,
    em_iters: usize,
) -> Result<(PatternSet, TrainReport)> {
    if em_iters == 0 {
        return Err(Error::Parameter("em_iters must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Input("cannot train on an empty corpus".into()));
    }
    let segs = gather_segments(corpus, labels, gran)?;
    let floor = variance_floor(corpus);
    let (gmean, gvar) = global_stats(corpus);
    let dim = corpus.dim();
    let m = gran.m;

    let patterns = segs
        .iter()
        .enumerate()
        .map(|(p, list)| {
            let mut sum = vec![vec![0.0; dim]; m];
            let mut sum2 = vec![vec![0.0; dim]; m];
            let mut count = vec![0usize; m];
            let mut frames = 0usize;
            for sr in list {
                let seq = &corpus.utterances()[sr.utt];
                let len = sr.end - sr.start;
                frames += len;
                for s in 0..m {
                    let a = sr.start + s * len / m;
                    let b = sr.start + (s + 1) * len / m;
                    for t in a..b {
                        for (i, &x) in seq.frame(t).iter().enumerate() {
                            sum[s][i] += x;
                            sum2[s][i] += x * x;
                        }
                    }
                    count[s] += b - a;
                }
            }
            let states = (0..m)
                .map(|s| {
                    let (mean, variance) = if count[s] == 0 {
                        (gmean.clone(), gvar.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect())
                    } else {
                        let c = count[s] as f64;
                        let mean: Vec<f64> = sum[s].iter().map(|v| v / c).collect();
                        let var = (0..dim)
                            .map(|i| (sum2[s][i] / c - mean[i] * mean[i]).max(floor[i]))
                            .collect();
                        (mean, var)
                    };
                    StateMixture {
                        components: vec![GaussianComponent {
                            weight: 1.0,
                            mean,
                            variance,
                        }],
                    }
                })
                .collect();
            let self_loop = if list.is_empty() {
                0.5
            } else {
                clamp_loop(1.0 - (m * list.len()) as f64 / frames as f64)
            };
            PatternHmm {
                pattern_index: p,
                states,
                self_loop: vec![self_loop; m],
            }
        })
        .collect();
    let set = PatternSet::new(gran, dim, patterns)?;
    let mut report = TrainReport::default();
    let (mut set, stage) = em(corpus, &segs, set, em_iters, &floor)?;
    report.stages.push(stage);
    while set.gaussians() < gran.gaussians_per_state {
        set = split_mixtures(&set, gran.gaussians_per_state)?;
        let (next, stage) = em(corpus, &segs, set, EM_ITERS_AFTER_SPLIT, &floor)?;
        set = next;
        report.stages.push(stage);
    }
    Ok((set, report))
}

/// Double every state's mixture (or, near the target, split only the
/// heaviest components) by perturbing means ±0.2 standard deviations.
fn split_mixtures(set: &PatternSet, target: usize) -> Result<PatternSet> {
    let patterns = set
        .patterns()
        .iter()
        .map(|p| {
            let mut out = p.clone();
            for st in &mut out.states {
                let g = st.components.len();
                let splits = g.min(target - g);
                let mut order: Vec<usize> = (0..g).collect();
                order.sort_by(|&a, &b| {
                    st.components[b]
                        .weight
                        .total_cmp(&st.components[a].weight)
                        .then(a.cmp(&b))
                });
                let mut chosen: Vec<usize> = order[..splits].to_vec();
                chosen.sort_unstable();
                let mut comps = Vec::with_capacity(g + splits);
                for (k, c) in st.components.iter().enumerate() {
                    if chosen.binary_search(&k).is_ok() {
                        for sign in [1.0, -1.0] {
                            comps.push(GaussianComponent {
                                weight: c.weight / 2.0,
                                mean: c
                                    .mean
                                    .iter()
                                    .zip(&c.variance)
                                    .map(|(mu, v)| mu + sign * SPLIT_OFFSET * v.sqrt())
                                    .collect(),
                                variance: c.variance.clone(),
                            });
                        }
                    } else {
                        comps.push(c.clone());
                    }
                }
                st.components = comps;
            }
            out
        })
        .collect();
    PatternSet::new(set.granularity(), set.dim(), patterns)
}

/// Log-likelihood of `features` given its labeled pattern sequence: forward
/// probability of each segment plus exit transitions between segments.
pub fn loglik(features: &FeatureSequence, set: &PatternSet, labels: &Labeling) -> Result<f64> {
    let gran = set.granularity();
    labels.validate(features.len(), gran.m, gran.n)?;
    if features.dim() != set.dim() {
        return Err(Error::Validation(format!(
            "feature dimension {} does not match model dimension {}",
            features.dim(),
            set.dim()
        )));
    }
    let scorer = EmissionScorer::new(set);
    let last = labels.segments.len() - 1;
    let mut total = 0.0;
    for (i, seg) in labels.segments.iter().enumerate() {
        let view = PatternView::new(&scorer, set.pattern(seg.pattern));
        total += view.segment(features, seg.start, seg.end, None);
        if i != last {
            total += view.exit();
        }
    }
    Ok(total)
}

/// Sum of [`loglik`] over all labeled utterances.
pub fn corpus_loglik(corpus: &Corpus, set: &PatternSet, labels: &[Labeling]) -> Result<f64> {
    let parts = labels
        .par_iter()
        .map(|l| {
            let seq = corpus.get(&l.utterance_id).ok_or_else(|| {
                Error::Validation(format!("labels for unknown utterance {}", l.utterance_id))
            })?;
            loglik(seq, set, l)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum())
}
