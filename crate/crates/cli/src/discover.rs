//! `patlex discover`: grid discovery with per-iteration checkpoints, then
//! similarity matrices, each stage marked complete in the run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use patlex::corpus::{load_manifest, Corpus};
use patlex::discovery::{
    load_grid_models, save_grid_models, save_partial, GridRun, HISTORY_FILE,
};
use patlex::grid::{GranularityGrid, GridPoint};
use patlex::similarity::{similarity_matrix, write_similarity};
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::logging::event;
use crate::{io_error, validation};

pub const SIMILARITY_FILE: &str = "similarity.plxs";
const STAGES_DIR: &str = "stages";

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    /// JSON run configuration; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory for models, labels, history and similarities.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Temporal granularities (states per pattern), comma separated.
    #[arg(long, value_delimiter = ',')]
    temporal: Option<Vec<usize>>,
    /// Phonetic granularities (patterns per set), comma separated.
    #[arg(long, value_delimiter = ',')]
    phonetic: Option<Vec<usize>>,
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop once fewer than this fraction of segments change pattern.
    #[arg(long)]
    convergence: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Enable context-consistency relabeling between iterations.
    #[arg(long)]
    relabel: bool,
}

impl DiscoverArgs {
    fn resolve(&self) -> Result<(RunConfig, PathBuf, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.temporal {
            cfg.grid.temporal_values = v.clone();
        }
        if let Some(v) = &self.phonetic {
            cfg.grid.phonetic_values = v.clone();
        }
        if let Some(g) = self.gaussians {
            cfg.grid.gaussians_per_state = g;
        }
        let d = &mut cfg.discovery;
        d.t_max = self.t_max.unwrap_or(d.t_max);
        d.em_iters = self.em_iters.unwrap_or(d.em_iters);
        d.seed = self.seed.unwrap_or(d.seed);
        d.convergence = self.convergence.unwrap_or(d.convergence);
        d.relabel_enabled |= self.relabel;
        cfg.beta = self.beta.unwrap_or(cfg.beta);

        let run = self
            .run
            .clone()
            .or(cfg.run.take())
            .ok_or_else(|| validation("no run directory given (--run or \"run\" in the config)"))?;
        let manifest = self
            .manifest
            .clone()
            .or(cfg.manifest.take())
            .ok_or_else(|| validation("no corpus manifest given (--manifest or \"manifest\" in the config)"))?;
        let manifest = manifest
            .canonicalize()
            .map_err(|e| io_error(&manifest, e))?;
        cfg.manifest = Some(manifest.clone());
        Ok((cfg, run, manifest))
    }
}

fn marker(run: &Path, stage: &str) -> PathBuf {
    run.join(STAGES_DIR).join(format!("{stage}.done"))
}

fn mark_done(run: &Path, stage: &str) -> Result<()> {
    let path = marker(run, stage);
    let dir = run.join(STAGES_DIR);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    fs::write(&path, b"").map_err(|e| io_error(&path, e))?;
    event("stage_done", json!({ "stage": stage }));
    Ok(())
}

pub fn run(args: &DiscoverArgs) -> Result<()> {
    let (cfg, run_dir, manifest) = args.resolve()?;
    let grid = cfg.validate()?;
    fs::create_dir_all(&run_dir).map_err(|e| io_error(&run_dir, e))?;
    match RunConfig::stored(&run_dir)? {
        Some(stored) if stored != cfg => {
            return Err(validation(&format!(
                "{} was created with a different configuration; use a fresh run directory",
                run_dir.display()
            )));
        }
        Some(_) => {}
        None => cfg.store(&run_dir)?,
    }

    let corpus = load_manifest(&manifest)?;
    event(
        "corpus_loaded",
        json!({ "utterances": corpus.len(), "frames": corpus.total_frames(), "dim": corpus.dim() }),
    );

    if marker(&run_dir, "discover").exists() {
        event("stage_skipped", json!({ "stage": "discover" }));
    } else {
        discover_stage(&corpus, &grid, &cfg, &run_dir)?;
        mark_done(&run_dir, "discover")?;
    }

    if marker(&run_dir, "similarity").exists() {
        event("stage_skipped", json!({ "stage": "similarity" }));
    } else {
        similarity_stage(&run_dir, cfg.beta)?;
        mark_done(&run_dir, "similarity")?;
    }
    Ok(())
}

fn log_new_records(run: &GridRun, reported: &mut BTreeMap<GridPoint, usize>) {
    for (p, pm) in run.points() {
        let seen = reported.entry(*p).or_insert(0);
        for r in &pm.history[*seen..] {
            event(
                "iteration",
                json!({
                    "point": p.to_string(),
                    "iteration": r.iteration,
                    "loglik": r.loglik,
                    "change_ratio": r.change_ratio,
                    "relabel_changes": r.relabel_changes,
                }),
            );
        }
        *seen = pm.history.len();
    }
    for (p, e) in run.failures() {
        log::error!("{p}: {e}");
    }
}

fn checkpoint(run: &GridRun, dir: &Path) -> Result<()> {
    save_partial(dir, run.grid(), run.skipped(), run.points())?;
    Ok(())
}

fn discover_stage(
    corpus: &Corpus,
    grid: &GranularityGrid,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<()> {
    let resumed = if dir.join(HISTORY_FILE).exists() {
        match load_grid_models(dir) {
            Ok(models) if &models.grid == grid => {
                event("resume", json!({ "stage": "discover" }));
                Some(GridRun::resume(corpus, models, &cfg.discovery)?)
            }
            Ok(_) => None,
            Err(e) => {
                log::warn!("cannot resume from {}: {e}; starting over", dir.display());
                None
            }
        }
    } else {
        None
    };
    let mut run = match resumed {
        Some(r) => r,
        None => GridRun::start(corpus, grid, &cfg.discovery)?,
    };
    if !run.skipped().is_empty() {
        log::warn!(
            "{} utterances shorter than {} frames are excluded",
            run.skipped().len(),
            2 * grid.max_m()
        );
    }
    let mut reported = BTreeMap::new();
    log_new_records(&run, &mut reported);
    checkpoint(&run, dir)?;
    while run.step()? {
        log_new_records(&run, &mut reported);
        checkpoint(&run, dir)?;
    }
    let models = run.into_models()?;
    save_grid_models(dir, &models)?;
    Ok(())
}

fn similarity_stage(dir: &Path, beta: f64) -> Result<()> {
    let models = load_grid_models(dir)?;
    models
        .sets
        .par_iter()
        .map(|(p, set)| -> Result<()> {
            let s = similarity_matrix(set, beta)?;
            let path = dir.join(p.to_string()).join(SIMILARITY_FILE);
            write_similarity(&path, &s).with_context(|| format!("similarities for {p}"))?;
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}
