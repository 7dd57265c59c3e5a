//! `patlex`: feature extraction, synthetic corpora, pattern discovery,
//! spoken-query search and evaluation.

mod config;
mod discover;
mod eval;
mod logging;
mod search;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, CommandFactory, Parser, Subcommand};
use log::LevelFilter;
use patlex::corpus::{
    extract_mfcc, read_wav, write_features, write_manifest, MfccConfig, FEATURE_FORMAT_VERSION,
};
use patlex::discovery::RUN_FORMAT_VERSION;
use patlex::hmm::MODEL_VERSION;
use patlex::similarity::SIMILARITY_FORMAT_VERSION;
use patlex::synth::{generate, write_synth, SynthConfig, MANIFEST_FILE};
use rayon::prelude::*;
use serde_json::json;

use logging::event;

#[derive(Debug, Parser)]
#[command(name = "patlex", about, disable_version_flag = true)]
struct Cli {
    /// Worker threads for every parallel stage (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
    /// Print the program version and the binary format versions.
    #[arg(short = 'V', long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert 16 kHz mono WAV files to PLXF features plus a manifest.
    Features(FeaturesArgs),
    /// Generate a synthetic corpus with planted words, queries and judgments.
    Synth(SynthArgs),
    /// Discover pattern sets over a granularity grid.
    Discover(discover::DiscoverArgs),
    /// Rank archived utterances against a spoken query.
    Search(search::SearchArgs),
    #[command(subcommand)]
    Eval(eval::EvalCommand),
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// Output directory for `<stem>.plxf` files and `manifest.jsonl`.
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    wavs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON synthesis configuration; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    phones: Option<usize>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    words: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub(crate) fn validation(msg: &str) -> anyhow::Error {
    patlex::Error::Validation(msg.to_string()).into()
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> anyhow::Error {
    patlex::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn version_text() -> String {
    format!(
        "patlex {}\nPLXF features {FEATURE_FORMAT_VERSION}\nPLXM models {MODEL_VERSION}\nPLXS similarities {SIMILARITY_FORMAT_VERSION}\nlabels.jsonl, history.json {RUN_FORMAT_VERSION}",
        env!("CARGO_PKG_VERSION")
    )
}

fn features(args: &FeaturesArgs) -> Result<()> {
    let mut stems = BTreeSet::new();
    let mut jobs = Vec::new();
    for wav in &args.wavs {
        let stem = wav
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| validation(&format!("{} has no file name", wav.display())))?;
        if !stems.insert(stem.clone()) {
            return Err(validation(&format!("two inputs share the name {stem}")));
        }
        jobs.push((stem, wav));
    }
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let cfg = MfccConfig::default();
    let entries = jobs
        .par_iter()
        .map(|(stem, wav)| -> Result<(String, String)> {
            let (samples, rate) = read_wav(wav)?;
            let seq = extract_mfcc(stem, &samples, rate, &cfg)?;
            let rel = format!("{stem}.plxf");
            write_features(&args.out.join(&rel), &seq)?;
            event("features", json!({ "utt": stem, "frames": seq.len() }));
            Ok((stem.clone(), rel))
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&args.out.join(MANIFEST_FILE), &entries, &[])?;
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| patlex::Error::Format(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    cfg.phones = args.phones.unwrap_or(cfg.phones);
    cfg.utterances = args.utterances.unwrap_or(cfg.utterances);
    cfg.words = args.words.unwrap_or(cfg.words);
    cfg.dim = args.dim.unwrap_or(cfg.dim);
    cfg.noise = args.noise.unwrap_or(cfg.noise);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    let corpus = generate(&cfg)?;
    write_synth(&args.out, &corpus)?;
    event(
        "synth",
        json!({
            "utterances": corpus.corpus.len(),
            "queries": corpus.queries.len(),
            "annotations": corpus.corpus.annotations().map_or(0, |a| a.len()),
        }),
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<patlex::Error>() {
            return e.exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    4
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Features(a) => features(a),
        Command::Synth(a) => synth(a),
        Command::Discover(a) => discover::run(a),
        Command::Search(a) => search::run(a),
        Command::Eval(c) => eval::run(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("{}", version_text());
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    };
    logging::init(cli.log_level);
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("cannot size the worker pool: {e}");
        }
    }
    match dispatch(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            event("error", json!({ "msg": format!("{e:#}"), "exit_code": code }));
            // Make sure errors reach stderr even when info events are off.
            if !log::log_enabled!(log::Level::Info) {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
