//! Synthetic corpora with known structure.
//!
//! Each "phone" is a Gaussian mixture: a random center plus a few component
//! offsets. A frame is the center plus a component offset drawn by weight
//! plus isotropic Gaussian noise of standard deviation `noise`; at zero
//! noise every frame repeats one of its phone's component means. Utterances
//! are random phone strings with jittered durations, and a subset carries
//! one planted multi-phone word at a known frame range. Every word also gets a separate isolated
//! realization to serve as a spoken query; a query's relevant documents are
//! the utterances containing its word.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_features, write_manifest, Corpus, FeatureSequence, WordAnnotation};
use crate::error::{Error, Result};
use crate::eval::{write_judgments, RelevanceJudgments};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const QUERY_MANIFEST_FILE: &str = "queries.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Phone inventory size.
    pub phones: usize,
    pub dim: usize,
    pub utterances: usize,
    pub words: usize,
    /// Inclusive range of phones per word.
    pub word_phones: (usize, usize),
    /// Inclusive range of phones per utterance, planted word included.
    pub utterance_phones: (usize, usize),
    /// Mean frames per phone.
    pub phone_frames: usize,
    /// Maximum deviation from `phone_frames`, in frames.
    pub duration_jitter: usize,
    /// Probability that an utterance carries a planted word.
    pub plant_rate: f64,
    /// Spread of the phone centers.
    pub mean_scale: f64,
    /// Mixture components per phone.
    pub components: usize,
    /// Spread of the component offsets around the phone center.
    pub component_spread: f64,
    /// Standard deviation of the per-frame noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            phones: 20,
            dim: 39,
            utterances: 300,
            words: 10,
            word_phones: (3, 5),
            utterance_phones: (8, 14),
            phone_frames: 6,
            duration_jitter: 2,
            plant_rate: 0.7,
            mean_scale: 2.0,
            components: 2,
            component_spread: 0.5,
            noise: 6.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.phones < 2 || self.dim == 0 || self.utterances == 0 || self.components == 0 {
            return bad("need at least 2 phones, 1 dimension, 1 component and 1 utterance".into());
        }
        let (wlo, whi) = self.word_phones;
        let (ulo, uhi) = self.utterance_phones;
        if wlo == 0 || wlo > whi || ulo == 0 || ulo > uhi {
            return bad(format!(
                "phone ranges must be non-empty: word {wlo}-{whi}, utterance {ulo}-{uhi}"
            ));
        }
        if self.words > 0 && whi > ulo {
            return bad(format!(
                "words of up to {whi} phones do not fit utterances of {ulo} phones"
            ));
        }
        if self.phone_frames == 0 || self.duration_jitter >= self.phone_frames {
            return bad(format!(
                "phone duration {} ± {} must stay positive",
                self.phone_frames, self.duration_jitter
            ));
        }
        if !(0.0..=1.0).contains(&self.plant_rate)
            || !(self.noise >= 0.0)
            || !(self.mean_scale > 0.0)
            || !(self.component_spread >= 0.0)
        {
            return bad(
                "plant rate must be in [0, 1], noise and component spread ≥ 0, mean scale > 0"
                    .into(),
            );
        }
        Ok(())
    }
}

/// A generated corpus with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Documents, with annotations for the planted words.
    pub corpus: Corpus,
    pub queries: Vec<FeatureSequence>,
    pub judgments: RelevanceJudgments,
    /// Phone strings of the words, indexed like the word names.
    pub words: Vec<(String, Vec<usize>)>,
    /// Phone string and frame boundaries of every document.
    pub alignments: Vec<Vec<(usize, usize, usize)>>,
}

pub fn word_name(w: usize) -> String {
    format!("word{w:02}")
}

pub fn query_id(w: usize) -> String {
    format!("q_{}", word_name(w))
}

struct Phone {
    center: Vec<f64>,
    /// Cumulative component weights.
    cdf: Vec<f64>,
    offsets: Vec<Vec<f64>>,
}

struct Generator {
    rng: ChaCha8Rng,
    phones: Vec<Phone>,
    cfg: SynthConfig,
}

impl Generator {
    fn phone_string(&mut self, len: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::with_capacity(len);
        while out.len() < len {
            let p = self.rng.random_range(0..self.cfg.phones);
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        out
    }

    /// Replace `phones[i]` if it repeats a neighbor.
    fn break_repeat(&mut self, phones: &mut [usize], i: usize) {
        if self.cfg.phones < 3 {
            return;
        }
        let prev = i.checked_sub(1).map(|j| phones[j]);
        let next = phones.get(i + 1).copied();
        while prev == Some(phones[i]) || next == Some(phones[i]) {
            phones[i] = self.rng.random_range(0..self.cfg.phones);
        }
    }

    fn duration(&mut self) -> usize {
        let j = self.cfg.duration_jitter as i64;
        (self.cfg.phone_frames as i64 + self.rng.random_range(-j..=j)) as usize
    }

    /// Frames for a phone string, with `(phone, start, end)` boundaries.
    fn render(&mut self, phones: &[usize]) -> (Vec<f64>, Vec<(usize, usize, usize)>) {
        let mut data = Vec::new();
        let mut align = Vec::with_capacity(phones.len());
        let mut t = 0;
        for &p in phones {
            let d = self.duration();
            let phone = &self.phones[p];
            for _ in 0..d {
                let u: f64 = self.rng.random();
                let c = phone.cdf.iter().position(|&x| u < x).unwrap_or(phone.cdf.len() - 1);
                for k in 0..self.cfg.dim {
                    let z: f64 = self.rng.sample(StandardNormal);
                    let x = phone.center[k] + phone.offsets[c][k] + self.cfg.noise * z;
                    // Rounded to the on-disk precision so a written corpus
                    // loads back identical.
                    data.push(x as f32 as f64);
                }
            }
            align.push((p, t, t + d));
            t += d;
        }
        (data, align)
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gaussian = |scale: f64| -> Vec<f64> {
        (0..cfg.dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut phones = Vec::with_capacity(cfg.phones);
    for _ in 0..cfg.phones {
        let center = gaussian(cfg.mean_scale);
        let offsets = (0..cfg.components)
            .map(|_| gaussian(cfg.component_spread))
            .collect();
        phones.push((center, offsets));
    }
    let phones = phones
        .into_iter()
        .map(|(center, offsets)| {
            let w: Vec<f64> = (0..cfg.components)
                .map(|_| rng.random_range(0.5..1.5))
                .collect();
            let total: f64 = w.iter().sum();
            let cdf = w
                .iter()
                .scan(0.0, |acc, x| {
                    *acc += x / total;
                    Some(*acc)
                })
                .collect();
            Phone {
                center,
                cdf,
                offsets,
            }
        })
        .collect();
    let mut g = Generator {
        rng,
        phones,
        cfg: cfg.clone(),
    };
    let words: Vec<(String, Vec<usize>)> = (0..cfg.words)
        .map(|w| {
            let len = g.rng.random_range(cfg.word_phones.0..=cfg.word_phones.1);
            (word_name(w), g.phone_string(len))
        })
        .collect();

    let mut utts = Vec::with_capacity(cfg.utterances);
    let mut annotations = Vec::new();
    let mut alignments = Vec::with_capacity(cfg.utterances);
    let mut relevant: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for u in 0..cfg.utterances {
        let id = format!("utt{u:04}");
        let len = g.rng.random_range(cfg.utterance_phones.0..=cfg.utterance_phones.1);
        let mut phones = g.phone_string(len);
        let mut planted = None;
        if !words.is_empty() && g.rng.random_bool(cfg.plant_rate) {
            let w = g.rng.random_range(0..words.len());
            let wp = &words[w].1;
            let at = g.rng.random_range(0..=len - wp.len());
            phones.splice(at..at + wp.len(), wp.iter().copied());
            if at > 0 {
                g.break_repeat(&mut phones, at - 1);
            }
            if at + wp.len() < len {
                g.break_repeat(&mut phones, at + wp.len());
            }
            planted = Some((w, at, at + wp.len()));
        }
        let (data, align) = g.render(&phones);
        if let Some((w, a, b)) = planted {
            annotations.push(WordAnnotation {
                utterance_id: id.clone(),
                word: words[w].0.clone(),
                start_frame: align[a].1,
                end_frame: align[b - 1].2,
            });
            relevant.entry(query_id(w)).or_default().insert(id.clone());
        }
        utts.push(FeatureSequence::new(id, data, cfg.dim)?);
        alignments.push(align);
    }
    let mut queries = Vec::with_capacity(words.len());
    for (w, (_, phones)) in words.iter().enumerate() {
        let (data, _) = g.render(phones);
        queries.push(FeatureSequence::new(query_id(w), data, cfg.dim)?);
    }
    // Words that were never planted have nothing to retrieve.
    queries.retain(|q| relevant.contains_key(q.utterance_id()));
    Ok(SynthCorpus {
        corpus: Corpus::new(utts, Some(annotations))?,
        queries,
        judgments: RelevanceJudgments::new(relevant)?,
        words,
        alignments,
    })
}

/// Write `manifest.jsonl` with `features/*.plxf` and the word annotations,
/// `queries.jsonl` with `queries/*.plxf`, and `judgments.jsonl`.
pub fn write_synth(dir: &Path, synth: &SynthCorpus) -> Result<()> {
    for sub in ["features", "queries"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(synth.corpus.len());
    for u in synth.corpus.utterances() {
        let rel = format!("features/{}.plxf", u.utterance_id());
        write_features(&dir.join(&rel), u)?;
        entries.push((u.utterance_id().to_string(), rel));
    }
    write_manifest(
        &dir.join(MANIFEST_FILE),
        &entries,
        synth.corpus.annotations().unwrap_or_default(),
    )?;
    let mut qentries = Vec::with_capacity(synth.queries.len());
    for q in &synth.queries {
        let rel = format!("queries/{}.plxf", q.utterance_id());
        write_features(&dir.join(&rel), q)?;
        qentries.push((q.utterance_id().to_string(), rel));
    }
    write_manifest(&dir.join(QUERY_MANIFEST_FILE), &qentries, &[])?;
    write_judgments(&dir.join(JUDGMENTS_FILE), &synth.judgments)
}
