//! `patlex eval impurity` and `patlex eval map`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use patlex::corpus::load_manifest;
use patlex::discovery::load_grid_models;
use patlex::eval::{mean_average_precision, read_judgments, select_words, word_impurity, WordSelection};
use patlex::synth::QUERY_MANIFEST_FILE;
use patlex::Error;

use crate::config::RunConfig;
use crate::search::load_index;
use crate::validation;

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Gini impurity of the decoded sequences of annotated words.
    Impurity(ImpurityArgs),
    /// Mean average precision of spoken queries against judgments.
    Map(MapArgs),
}

#[derive(Debug, Args)]
pub struct ImpurityArgs {
    #[arg(long)]
    run: PathBuf,
    /// `top:K` for the K most frequent words or `band:LO-HI` by count.
    #[arg(long, default_value = "top:20")]
    words: WordSelection,
    /// Annotated manifest; defaults to the run's corpus manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    run: PathBuf,
    /// JSON lines of {"query": id, "relevant": [doc ids]}.
    #[arg(long)]
    judgments: PathBuf,
    /// Manifest of query feature files; defaults to `queries.jsonl` next
    /// to the judgments.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
}

pub fn run(cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Impurity(a) => impurity(a),
        EvalCommand::Map(a) => map(a),
    }
}

fn impurity(args: &ImpurityArgs) -> Result<()> {
    let manifest = match &args.manifest {
        Some(m) => m.clone(),
        None => RunConfig::stored(&args.run)?
            .and_then(|c| c.manifest)
            .ok_or_else(|| validation("the run records no manifest; pass --manifest"))?,
    };
    let corpus = load_manifest(&manifest)?;
    let anns = corpus
        .annotations()
        .ok_or_else(|| Error::Input(format!("{} has no word annotations", manifest.display())))?;
    let models = load_grid_models(&args.run)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "word\tm\tn\tcount\tI\timpurity")?;
    for (word, _) in select_words(anns, args.words) {
        for p in models.grid.points() {
            let labels = models.labels.at(p).expect("grid models cover the grid");
            match word_impurity(labels, anns, &word) {
                Ok(r) => writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.word, p.m, p.n, r.realizations, r.distinct_sequences, r.impurity
                )?,
                // Every realization lies in an utterance excluded from discovery.
                Err(Error::NotFound(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn map(args: &MapArgs) -> Result<()> {
    let judgments = read_judgments(&args.judgments)?;
    let queries_path = match &args.queries {
        Some(q) => q.clone(),
        None => args
            .judgments
            .parent()
            .unwrap_or(std::path::Path::new("."))
            .join(QUERY_MANIFEST_FILE),
    };
    let queries = load_manifest(&queries_path)?;
    let index = load_index(&args.run, args.beta)?;
    let mut runs = BTreeMap::new();
    for q in judgments.queries() {
        let seq = queries
            .get(q)
            .ok_or_else(|| Error::NotFound(format!("query {q} in {}", queries_path.display())))?;
        runs.insert(q.to_string(), index.search(seq)?);
    }
    let (map, per_query) = mean_average_precision(&runs, &judgments)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "query\tap")?;
    for (q, ap) in &per_query {
        writeln!(out, "{q}\t{ap}")?;
    }
    writeln!(out, "MAP\t{map}")?;
    out.flush()?;
    Ok(())
}
