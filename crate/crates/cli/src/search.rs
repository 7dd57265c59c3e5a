//! `patlex search` and the shared index loading used by `eval map`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use patlex::corpus::{extract_mfcc, read_features, read_wav, FeatureSequence, MfccConfig};
use patlex::discovery::load_grid_models;
use patlex::retrieval::{RankedList, SearchIndex};
use patlex::similarity::{read_similarity, similarity_matrix};

use crate::config::RunConfig;
use crate::discover::SIMILARITY_FILE;
use crate::validation;

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    run: PathBuf,
    /// Spoken query: 16 kHz mono PCM16 WAV or a PLXF feature file.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Similarity scaling; defaults to the run's configured value.
    #[arg(long)]
    beta: Option<f64>,
}

/// Load the run's models and similarity matrices. Stored matrices are used
/// when `beta` matches the run; otherwise they are recomputed.
pub fn load_index(run: &Path, beta: Option<f64>) -> Result<SearchIndex> {
    let stored = RunConfig::stored(run)?;
    let run_beta = stored.as_ref().map(|c| c.beta);
    let beta = beta.or(run_beta).unwrap_or(patlex::similarity::DEFAULT_BETA);
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(validation(&format!("beta must be positive, got {beta}")));
    }
    let models = load_grid_models(run)?;
    let mut sims = BTreeMap::new();
    for (&p, set) in &models.sets {
        let path = run.join(p.to_string()).join(SIMILARITY_FILE);
        let s = if Some(beta) == run_beta && path.exists() {
            read_similarity(&path, beta)?
        } else {
            similarity_matrix(set, beta)?
        };
        sims.insert(p, s);
    }
    Ok(SearchIndex::with_similarities(&models, sims)?)
}

/// Read a query from WAV (through the MFCC frontend) or PLXF.
pub fn load_query(path: &Path) -> Result<FeatureSequence> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "query".into());
    let is_wav = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let mut seq = if is_wav {
        let (samples, rate) = read_wav(path)?;
        extract_mfcc(&id, &samples, rate, &MfccConfig::default())?
    } else {
        read_features(path)?
    };
    seq.set_utterance_id(id);
    Ok(seq)
}

pub fn write_ranking(out: &mut impl Write, ranked: &RankedList) -> std::io::Result<()> {
    write!(out, "rank\tdoc_id\tfused_score")?;
    for p in &ranked.points {
        write!(out, "\tR_{p}")?;
    }
    writeln!(out)?;
    for (i, e) in ranked.entries.iter().enumerate() {
        write!(out, "{}\t{}\t{}", i + 1, e.doc_id, e.fused_score)?;
        for r in &e.per_set {
            write!(out, "\t{r}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn run(args: &SearchArgs) -> Result<()> {
    let index = load_index(&args.run, args.beta)?;
    let query = load_query(&args.query)?;
    let mut ranked = index.search(&query)?;
    ranked.truncate(args.top);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    write_ranking(&mut out, &ranked)?;
    out.flush()?;
    Ok(())
}
