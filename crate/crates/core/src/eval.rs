//! Gini impurity of the pattern sequences decoded for annotated words, and
//! mean average precision of ranked retrieval results.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::WordAnnotation;
use crate::error::{Error, Result};
use crate::hmm::Labeling;
use crate::retrieval::RankedList;

const SUM_TOLERANCE: f64 = 1e-9;

/// `Σ f_i (1 − f_i)` over a probability vector.
pub fn gini_impurity(fractions: &[f64]) -> Result<f64> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(f >= 0.0)) || (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Validation(format!(
            "fractions must be non-negative and sum to 1, got sum {total}"
        )));
    }
    Ok(fractions.iter().map(|f| f * (1.0 - f)).sum())
}

/// Patterns of the segments of `labeling` whose central frame lies in
/// `[start, end)`.
pub fn realization_sequence(labeling: &Labeling, start: usize, end: usize) -> Vec<usize> {
    labeling
        .segments
        .iter()
        .filter(|s| (start..end).contains(&s.central_frame()))
        .map(|s| s.pattern)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpurityReport {
    pub word: String,
    pub realizations: usize,
    /// Number of distinct decoded sequences.
    pub distinct_sequences: usize,
    /// Share of realizations per distinct sequence, largest first.
    pub fractions: Vec<f64>,
    pub impurity: f64,
}

/// Impurity of the decoded sequences of every realization of `word`
/// (compared case-insensitively).
pub fn word_impurity(
    labels: &[Labeling],
    annotations: &[WordAnnotation],
    word: &str,
) -> Result<ImpurityReport> {
    let by_utt: BTreeMap<&str, &Labeling> = labels
        .iter()
        .map(|l| (l.utterance_id.as_str(), l))
        .collect();
    let key = word.to_lowercase();
    let mut groups: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut realizations = 0;
    for a in annotations.iter().filter(|a| a.word.to_lowercase() == key) {
        let Some(lab) = by_utt.get(a.utterance_id.as_str()) else {
            continue;
        };
        *groups
            .entry(realization_sequence(lab, a.start_frame, a.end_frame))
            .or_default() += 1;
        realizations += 1;
    }
    if realizations == 0 {
        return Err(Error::NotFound(format!(
            "no labeled realization of word {word:?}"
        )));
    }
    let mut counts: Vec<usize> = groups.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let fractions: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / realizations as f64)
        .collect();
    Ok(ImpurityReport {
        word: key,
        realizations,
        distinct_sequences: fractions.len(),
        impurity: gini_impurity(&fractions)?,
        fractions,
    })
}

/// Annotated words with their occurrence counts, most frequent first, ties
/// alphabetical. Words are lowercased.
pub fn word_counts(annotations: &[WordAnnotation]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in annotations {
        *counts.entry(a.word.to_lowercase()).or_default() += 1;
    }
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Which words to evaluate: the `k` most frequent, or every word whose
/// count lies in an inclusive band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordSelection {
    Top(usize),
    Band(usize, usize),
}

impl FromStr for WordSelection {
    type Err = Error;

    /// `top:K` or `band:LO-HI`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("word selection {s:?} is not top:K or band:LO-HI"));
        match s.split_once(':') {
            Some(("top", k)) => Ok(Self::Top(k.parse().map_err(|_| bad())?)),
            Some(("band", r)) => {
                let (lo, hi) = r.split_once('-').ok_or_else(bad)?;
                let (lo, hi) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
                if lo > hi {
                    return Err(bad());
                }
                Ok(Self::Band(lo, hi))
            }
            _ => Err(bad()),
        }
    }
}

pub fn select_words(annotations: &[WordAnnotation], sel: WordSelection) -> Vec<(String, usize)> {
    let counts = word_counts(annotations);
    match sel {
        WordSelection::Top(k) => counts.into_iter().take(k).collect(),
        WordSelection::Band(lo, hi) => counts
            .into_iter()
            .filter(|(_, c)| (lo..=hi).contains(c))
            .collect(),
    }
}

/// Mean over relevant documents of the precision at each one's rank;
/// relevant documents missing from the ranking contribute 0.
pub fn average_precision<'a>(
    ranked: impl IntoIterator<Item = &'a str>,
    relevant: &BTreeSet<String>,
) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Validation("no relevant documents".into()));
    }
    let mut seen = 0usize;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, doc) in ranked.into_iter().enumerate() {
        seen += 1;
        if relevant.contains(doc) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if seen == 0 {
        return Err(Error::Validation("empty ranking".into()));
    }
    Ok(sum / relevant.len() as f64)
}

/// Relevant documents per query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceJudgments {
    relevant: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Serialize, Deserialize)]
struct JudgmentRecord {
    query: String,
    relevant: Vec<String>,
}

impl RelevanceJudgments {
    pub fn new(relevant: BTreeMap<String, BTreeSet<String>>) -> Result<Self> {
        if let Some((q, _)) = relevant.iter().find(|(_, docs)| docs.is_empty()) {
            return Err(Error::Validation(format!(
                "query {q} has no relevant documents"
            )));
        }
        Ok(Self { relevant })
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> + '_ {
        self.relevant.keys().map(String::as_str)
    }

    pub fn relevant(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.relevant.get(query)
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }
}

/// JSON lines of `{"query": ..., "relevant": [...]}`.
pub fn read_judgments(path: &Path) -> Result<RelevanceJudgments> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JudgmentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if map
            .insert(rec.query.clone(), rec.relevant.into_iter().collect())
            .is_some()
        {
            return Err(Error::Validation(format!(
                "{}: query {} judged twice",
                path.display(),
                rec.query
            )));
        }
    }
    RelevanceJudgments::new(map)
}

pub fn write_judgments(path: &Path, judgments: &RelevanceJudgments) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (q, docs) in &judgments.relevant {
        let rec = JudgmentRecord {
            query: q.clone(),
            relevant: docs.iter().cloned().collect(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Unweighted mean of per-query average precision, with the per-query values.
pub fn mean_average_precision(
    runs: &BTreeMap<String, RankedList>,
    judgments: &RelevanceJudgments,
) -> Result<(f64, BTreeMap<String, f64>)> {
    if judgments.is_empty() {
        return Err(Error::Validation("no judged queries".into()));
    }
    let mut per_query = BTreeMap::new();
    for (q, relevant) in &judgments.relevant {
        let run = runs
            .get(q)
            .ok_or_else(|| Error::Validation(format!("no ranking for judged query {q}")))?;
        per_query.insert(q.clone(), average_precision(run.doc_ids(), relevant)?);
    }
    let map = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok((map, per_query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::Segment;
    use crate::retrieval::RankedDoc;
    use proptest::prelude::*;

    fn set(docs: &[&str]) -> BTreeSet<String> {
        docs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity(&[1.0]).unwrap(), 0.0);
        assert_eq!(gini_impurity(&[0.5, 0.5]).unwrap(), 0.5);
        assert!((gini_impurity(&[0.5, 0.25, 0.25]).unwrap() - 0.625).abs() < 1e-12);
        assert!(gini_impurity(&[0.5, 0.4]).is_err());
        assert!(gini_impurity(&[1.5, -0.5]).is_err());
    }

    fn ann(utt: &str, word: &str, s: usize, e: usize) -> WordAnnotation {
        WordAnnotation {
            utterance_id: utt.into(),
            word: word.into(),
            start_frame: s,
            end_frame: e,
        }
    }

    #[test]
    fn word_impurity_examples() {
        let l = |id: &str, pats: [usize; 3]| {
            Labeling::new(
                id,
                vec![
                    Segment::new(pats[0], 0, 4),
                    Segment::new(pats[1], 4, 8),
                    Segment::new(pats[2], 8, 12),
                ],
            )
        };
        let labels = vec![l("a", [1, 2, 3]), l("b", [0, 2, 3]), l("c", [1, 1, 3])];
        // Central frames 2, 6, 10; [4, 12) picks the last two segments.
        let anns = vec![
            ann("a", "Hello", 4, 12),
            ann("b", "hello", 4, 12),
            ann("c", "HELLO", 4, 12),
        ];
        let r = word_impurity(&labels, &anns, "hello").unwrap();
        assert_eq!(r.realizations, 3);
        assert_eq!(r.distinct_sequences, 2);
        assert!((r.impurity - 4.0 / 9.0).abs() < 1e-12);
        let mut rev = anns.clone();
        rev.reverse();
        assert_eq!(word_impurity(&labels, &rev, "hello").unwrap(), r);
        let r = word_impurity(&labels, &anns[..2], "hello").unwrap();
        assert_eq!(r.impurity, 0.0);
        let r = word_impurity(&labels, &anns[..1], "hello").unwrap();
        assert_eq!((r.distinct_sequences, r.impurity), (1, 0.0));
        assert!(matches!(
            word_impurity(&labels, &anns, "absent"),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn word_selection() {
        let anns: Vec<_> = [("x", 3), ("y", 1), ("z", 3), ("w", 2)]
            .iter()
            .flat_map(|&(w, c)| (0..c).map(move |i| ann("u", w, i, i + 1)))
            .collect();
        let words = |sel: &str| -> Vec<String> {
            select_words(&anns, sel.parse().unwrap())
                .into_iter()
                .map(|(w, _)| w)
                .collect()
        };
        assert_eq!(words("top:2"), ["x", "z"]);
        assert_eq!(words("band:1-2"), ["w", "y"]);
        assert!("band:3-1".parse::<WordSelection>().is_err());
        assert!("all".parse::<WordSelection>().is_err());
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision(["a", "b"], &set(&["a"])).unwrap(), 1.0);
        let ap = average_precision(["a", "x", "b", "y", "z"], &set(&["a", "b"])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(["x", "y"], &set(&["a"])).unwrap(), 0.0);
        assert!(average_precision([], &set(&["a"])).is_err());
    }

    fn ranked(q: &str, docs: &[&str]) -> RankedList {
        RankedList {
            query_id: q.into(),
            points: vec![],
            entries: docs
                .iter()
                .map(|d| RankedDoc {
                    doc_id: d.to_string(),
                    fused_score: 0.0,
                    per_set: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn map_examples() {
        let mut runs = BTreeMap::new();
        runs.insert("q1".to_string(), ranked("q1", &["a", "b"]));
        runs.insert("q2".to_string(), ranked("q2", &["x", "c"]));
        let mut j = BTreeMap::new();
        j.insert("q1".to_string(), set(&["a"]));
        let one = RelevanceJudgments::new(j.clone()).unwrap();
        assert_eq!(mean_average_precision(&runs, &one).unwrap().0, 1.0);
        j.insert("q2".to_string(), set(&["c"]));
        let two = RelevanceJudgments::new(j.clone()).unwrap();
        let (map, per) = mean_average_precision(&runs, &two).unwrap();
        assert_eq!(map, 0.75);
        assert_eq!(per["q2"], 0.5);
        j.insert("q3".to_string(), set(&["c"]));
        let missing = RelevanceJudgments::new(j).unwrap();
        assert!(mean_average_precision(&runs, &missing).is_err());
    }

    #[test]
    fn judgments_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let mut j = BTreeMap::new();
        j.insert("q1".to_string(), set(&["a", "b"]));
        j.insert("q2".to_string(), set(&["c"]));
        let j = RelevanceJudgments::new(j).unwrap();
        write_judgments(&path, &j).unwrap();
        assert_eq!(read_judgments(&path).unwrap(), j);
    }

    fn simplex() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1u32..100, 2..8).prop_map(|w| {
            let total: u32 = w.iter().sum();
            w.iter().map(|&x| x as f64 / total as f64).collect()
        })
    }

    proptest! {
        #[test]
        fn merging_never_raises_impurity(f in simplex()) {
            let mut merged = f[2..].to_vec();
            merged.push(f[0] + f[1]);
            let renorm: f64 = merged.iter().sum();
            merged.iter_mut().for_each(|x| *x /= renorm);
            prop_assert!(gini_impurity(&merged).unwrap() <= gini_impurity(&f).unwrap() + 1e-12);
            let mut split = f[1..].to_vec();
            split.push(f[0] / 2.0);
            split.push(f[0] / 2.0);
            prop_assert!(gini_impurity(&split).unwrap() >= gini_impurity(&f).unwrap() - 1e-12);
            let g = gini_impurity(&f).unwrap();
            prop_assert!((0.0..1.0).contains(&g));
        }

        #[test]
        fn ap_ignores_order_below_last_relevant(tail in Just(vec!["p", "q", "r", "s"]).prop_shuffle()) {
            let mut ranking = vec!["x", "a", "y", "b"];
            let base = average_precision(ranking.iter().copied(), &set(&["a", "b"])).unwrap();
            ranking.extend(tail);
            prop_assert_eq!(average_precision(ranking.iter().copied(), &set(&["a", "b"])).unwrap(), base);
        }
    }
}
