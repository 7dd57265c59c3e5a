use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Granularity, Labeling, Segment};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

const KMEANS_ITERS: usize = 20;

/// Initial labels plus the utterances that were too short to chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct InitLabels {
    pub labels: Vec<Labeling>,
    pub skipped: Vec<String>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// k-means with k-means++ seeding and at most 20 Lloyd iterations.
/// Returns the cluster of each point; ties go to the lowest cluster index
/// and empty clusters keep their previous center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return vec![0; points.len()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Rounding can leave the fallback on an existing center.
            if dist[chosen] == 0.0 {
                chosen = dist.iter().rposition(|d| *d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            0
        };
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }

    let dim = points[0].len();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Chop every utterance into `2m`-frame chunks (the remainder joins the
/// last chunk) and cluster the chunk means into `n` groups.
///
/// Utterances shorter than `2m` frames are skipped with a warning.
pub fn init_labels(corpus: &Corpus, gran: Granularity, seed: u64) -> Result<InitLabels> {
    let chunk = 2 * gran.m;
    let mut skipped = Vec::new();
    let mut layout: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    let mut means = Vec::new();
    for (u, seq) in corpus.utterances().iter().enumerate() {
        let t_len = seq.len();
        if t_len < chunk {
            log::warn!(
                "skipping {}: {t_len} frames is shorter than {chunk}",
                seq.utterance_id()
            );
            skipped.push(seq.utterance_id().to_string());
            continue;
        }
        let count = t_len / chunk;
        let bounds: Vec<(usize, usize)> = (0..count)
            .map(|c| (c * chunk, if c + 1 == count { t_len } else { (c + 1) * chunk }))
            .collect();
        for &(a, b) in &bounds {
            let mut mean = vec![0.0; seq.dim()];
            for t in a..b {
                for (m, x) in mean.iter_mut().zip(seq.frame(t)) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= (b - a) as f64);
            means.push(mean);
        }
        layout.push((u, bounds));
    }
    if layout.is_empty() {
        return Err(Error::Input(format!(
            "no utterance has at least {chunk} frames"
        )));
    }
    let assign = kmeans(&means, gran.n, seed);
    let mut next = 0;
    let labels = layout
        .into_iter()
        .map(|(u, bounds)| {
            let segments = bounds
                .into_iter()
                .map(|(a, b)| {
                    let s = Segment::new(assign[next], a, b);
                    next += 1;
                    s
                })
                .collect();
            Labeling::new(corpus.utterances()[u].utterance_id(), segments)
        })
        .collect();
    Ok(InitLabels { labels, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FeatureSequence;

    fn corpus(utts: Vec<(&str, Vec<f64>)>) -> Corpus {
        Corpus::new(
            utts.into_iter()
                .map(|(id, v)| FeatureSequence::new(id, v, 1).unwrap())
                .collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn forty_frames_m3_gives_six_chunks() {
        let vals: Vec<f64> = (0..40).map(|t| ((t * 7) % 11) as f64).collect();
        let c = corpus(vec![("u", vals.clone())]);
        let gran = Granularity::with_gaussians(3, 2, 1).unwrap();
        let init = init_labels(&c, gran, 5).unwrap();
        let l = &init.labels[0];
        assert_eq!(l.segments.len(), 6);
        assert_eq!(l.segments[5], Segment::new(l.segments[5].pattern, 30, 40));
        l.validate(40, 6, 2).unwrap();

        // Lloyd fixed point: every chunk is nearest to its own cluster mean.
        let chunk_means: Vec<f64> = l
            .segments
            .iter()
            .map(|s| vals[s.start..s.end].iter().sum::<f64>() / s.len() as f64)
            .collect();
        let mut centers = [0.0; 2];
        for k in 0..2 {
            let members: Vec<f64> = l
                .segments
                .iter()
                .zip(&chunk_means)
                .filter(|(s, _)| s.pattern == k)
                .map(|(_, m)| *m)
                .collect();
            assert!(!members.is_empty());
            centers[k] = members.iter().sum::<f64>() / members.len() as f64;
        }
        for (s, m) in l.segments.iter().zip(&chunk_means) {
            let own = (m - centers[s.pattern]).abs();
            let other = (m - centers[1 - s.pattern]).abs();
            assert!(own <= other);
        }
    }

    #[test]
    fn identical_frames_collapse_to_one_cluster() {
        let c = corpus(vec![("a", vec![3.0; 30]), ("b", vec![3.0; 20])]);
        let init = init_labels(&c, Granularity::new(2, 4).unwrap(), 1).unwrap();
        assert!(init.labels.iter().flat_map(|l| l.patterns()).all(|p| p == 0));
    }

    #[test]
    fn separated_utterances_get_different_labels() {
        let c = corpus(vec![("lo", vec![0.0; 24]), ("hi", vec![100.0; 24])]);
        let init = init_labels(&c, Granularity::new(3, 2).unwrap(), 9).unwrap();
        let lo: Vec<usize> = init.labels[0].patterns().collect();
        let hi: Vec<usize> = init.labels[1].patterns().collect();
        assert!(lo.iter().all(|&p| p == lo[0]));
        assert!(hi.iter().all(|&p| p == hi[0]));
        assert_ne!(lo[0], hi[0]);
    }

    #[test]
    fn short_utterances_skipped_and_empty_is_error() {
        let c = corpus(vec![("short", vec![1.0; 5]), ("long", vec![1.0; 12])]);
        let init = init_labels(&c, Granularity::new(3, 2).unwrap(), 0).unwrap();
        assert_eq!(init.skipped, vec!["short".to_string()]);
        assert_eq!(init.labels.len(), 1);
        let only_short = corpus(vec![("short", vec![1.0; 5])]);
        assert!(matches!(
            init_labels(&only_short, Granularity::new(3, 2).unwrap(), 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let vals: Vec<f64> = (0..200).map(|t| ((t * 37) % 23) as f64).collect();
        let c = corpus(vec![("u", vals)]);
        let g = Granularity::new(2, 5).unwrap();
        assert_eq!(init_labels(&c, g, 3).unwrap(), init_labels(&c, g, 3).unwrap());
    }
}
