//! Iterative pattern discovery on every point of a granularity grid.
//!
//! Iteration 1 clusters fixed-length chunks into initial labels, builds
//! mixtures from scratch and decodes. Every later iteration re-trains the
//! previous models on the current labels and decodes again. With relabeling
//! enabled, each later iteration first runs one context-consistency relabel
//! pass over the whole grid and trains on the relabeled sequences; that pass
//! needs every point's labels, so the grid advances in lockstep.

mod store;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::grid::{GranularityGrid, GridLabeling, GridPoint};
use crate::hmm::{
    corpus_loglik, init_labels, initial_models, train_models, viterbi_decode, Granularity,
    Labeling, PatternSet,
};
use crate::relabel::{count_changes, relabel_pass};

pub use store::{
    load_grid_models, save_grid_models, save_partial, save_point, HISTORY_FILE, LABELS_FILE,
    MODEL_FILE, RUN_FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    /// Maximum number of outer iterations, counting the initial one.
    pub t_max: usize,
    /// EM passes per re-estimation.
    pub em_iters: usize,
    pub relabel_enabled: bool,
    pub seed: u64,
    /// Stop once fewer than this fraction of segments change pattern.
    pub convergence: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            t_max: 10,
            em_iters: 3,
            relabel_enabled: false,
            seed: 0,
            convergence: 0.01,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::Parameter("t_max must be at least 1".into()));
        }
        if self.em_iters == 0 {
            return Err(Error::Parameter("em_iters must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.convergence) {
            return Err(Error::Parameter(format!(
                "convergence threshold {} is outside [0, 1]",
                self.convergence
            )));
        }
        Ok(())
    }
}

/// One outer iteration at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Corpus log-likelihood of the decoded labels under the new models.
    pub loglik: f64,
    /// Fraction of decoded segments whose pattern differs from the previous
    /// iteration's labels at the same central frame. Absent for iteration 1.
    pub change_ratio: Option<f64>,
    /// Positions changed by the relabel pass feeding this iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relabel_changes: Option<usize>,
}

/// Models, raw decoded labels and history of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointModels {
    pub set: PatternSet,
    pub labels: Vec<Labeling>,
    pub history: Vec<IterationRecord>,
}

impl PointModels {
    fn converged(&self, threshold: f64) -> bool {
        self.history
            .last()
            .and_then(|r| r.change_ratio)
            .is_some_and(|r| r < threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModels {
    pub grid: GranularityGrid,
    pub sets: BTreeMap<GridPoint, PatternSet>,
    /// Raw decoded labels from the last iteration.
    pub labels: GridLabeling,
    pub history: BTreeMap<GridPoint, Vec<IterationRecord>>,
    /// Utterances excluded as too short for the largest `m`.
    pub skipped: Vec<String>,
}

impl GridModels {
    fn from_points(
        grid: GranularityGrid,
        points: BTreeMap<GridPoint, PointModels>,
        skipped: Vec<String>,
    ) -> Result<Self> {
        let mut sets = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut history = BTreeMap::new();
        for (p, pm) in points {
            sets.insert(p, pm.set);
            labels.insert(p, pm.labels);
            history.insert(p, pm.history);
        }
        let labels = GridLabeling::new(labels, false)?;
        labels.check_covers(&grid)?;
        Ok(Self {
            grid,
            sets,
            labels,
            history,
            skipped,
        })
    }

    /// Split back into per-point parts.
    pub fn point(&self, p: GridPoint) -> Option<PointModels> {
        Some(PointModels {
            set: self.sets.get(&p)?.clone(),
            labels: self.labels.at(p)?.to_vec(),
            history: self.history.get(&p)?.clone(),
        })
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed used for the initial clustering at `p`.
pub fn point_seed(seed: u64, p: GridPoint) -> u64 {
    seed ^ splitmix64(((p.m as u64) << 32) | p.n as u64)
}

/// Utterances long enough for every point of a grid whose largest state
/// count is `max_m`, and the ids of the rest.
pub fn discovery_corpus(corpus: &Corpus, max_m: usize) -> Result<(Corpus, Vec<String>)> {
    let (kept, skipped) = corpus.retain_min_len(2 * max_m);
    for id in &skipped {
        log::warn!("skipping {id}: shorter than {} frames", 2 * max_m);
    }
    if kept.is_empty() {
        return Err(Error::Input(format!(
            "no utterance has at least {} frames",
            2 * max_m
        )));
    }
    Ok((kept, skipped))
}

/// Fraction of segments in `next` whose pattern differs from the segment of
/// `prev` covering their central frame.
pub fn change_ratio(prev: &[Labeling], next: &[Labeling]) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::Validation(format!(
            "comparing labels of {} and {} utterances",
            prev.len(),
            next.len()
        )));
    }
    let mut total = 0usize;
    let mut changed = 0usize;
    for (a, b) in prev.iter().zip(next) {
        if a.utterance_id != b.utterance_id {
            return Err(Error::Validation(format!(
                "comparing labels of {} with {}",
                a.utterance_id, b.utterance_id
            )));
        }
        for seg in &b.segments {
            total += 1;
            let before = a
                .segment_at_frame(seg.central_frame())
                .map(|j| a.segments[j].pattern);
            if before != Some(seg.pattern) {
                changed += 1;
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        changed as f64 / total as f64
    })
}

/// Decode every utterance of `corpus`.
pub fn decode_corpus(corpus: &Corpus, set: &PatternSet) -> Result<Vec<Labeling>> {
    corpus
        .utterances()
        .par_iter()
        .map(|u| viterbi_decode(u, set))
        .collect()
}

fn first_iteration(corpus: &Corpus, gran: Granularity, cfg: &DiscoveryConfig) -> Result<PointModels> {
    let p = GridPoint::new(gran.m, gran.n);
    let init = init_labels(corpus, gran, point_seed(cfg.seed, p))?;
    if !init.skipped.is_empty() {
        return Err(Error::Internal(format!(
            "{p}: initial labels skipped utterances the corpus filter kept"
        )));
    }
    let (set, report) = initial_models(corpus, &init.labels, gran, cfg.em_iters)?;
    if !report.is_monotone(1e-6) {
        log::warn!("{p}: log-likelihood decreased during initial training");
    }
    let labels = decode_corpus(corpus, &set)?;
    let loglik = corpus_loglik(corpus, &set, &labels)?;
    log::info!("{p} iteration 1: loglik {loglik:.6}");
    Ok(PointModels {
        set,
        labels,
        history: vec![IterationRecord {
            iteration: 1,
            loglik,
            change_ratio: None,
            relabel_changes: None,
        }],
    })
}

/// Re-train on `train_labels`, decode, and append a history record.
fn next_iteration(
    corpus: &Corpus,
    current: &PointModels,
    train_labels: &[Labeling],
    relabel_changes: Option<usize>,
    cfg: &DiscoveryConfig,
) -> Result<PointModels> {
    let gran = current.set.granularity();
    let p = GridPoint::new(gran.m, gran.n);
    let (set, report) = train_models(corpus, train_labels, &current.set, cfg.em_iters)?;
    if !report.is_monotone(1e-6) {
        log::warn!("{p}: log-likelihood decreased during re-estimation");
    }
    let labels = decode_corpus(corpus, &set)?;
    let loglik = corpus_loglik(corpus, &set, &labels)?;
    let ratio = change_ratio(&current.labels, &labels)?;
    let iteration = current.history.len() + 1;
    log::info!("{p} iteration {iteration}: loglik {loglik:.6}, changed {ratio:.4}");
    let mut history = current.history.clone();
    history.push(IterationRecord {
        iteration,
        loglik,
        change_ratio: Some(ratio),
        relabel_changes,
    });
    Ok(PointModels {
        set,
        labels,
        history,
    })
}

fn grid_failure(failures: BTreeMap<GridPoint, Error>) -> Error {
    Error::GridPoints(
        failures
            .into_iter()
            .map(|(p, e)| (p.to_string(), e))
            .collect(),
    )
}

/// Discovery over a grid, advanced one outer iteration at a time so callers
/// can checkpoint between iterations.
pub struct GridRun {
    corpus: Corpus,
    grid: GranularityGrid,
    cfg: DiscoveryConfig,
    skipped: Vec<String>,
    points: BTreeMap<GridPoint, PointModels>,
    failures: BTreeMap<GridPoint, Error>,
}

impl GridRun {
    /// Filter the corpus and run iteration 1 at every point.
    ///
    /// Without relabeling a failing point is recorded and its siblings go
    /// on; with relabeling the grid cannot proceed and the failures are
    /// returned at once.
    pub fn start(corpus: &Corpus, grid: &GranularityGrid, cfg: &DiscoveryConfig) -> Result<Self> {
        cfg.validate()?;
        let (corpus, skipped) = discovery_corpus(corpus, grid.max_m())?;
        let results: Vec<(GridPoint, Result<PointModels>)> = grid
            .points()
            .into_par_iter()
            .map(|p| (p, first_iteration(&corpus, grid.granularity(p), cfg)))
            .collect();
        let mut run = Self {
            corpus,
            grid: grid.clone(),
            cfg: *cfg,
            skipped,
            points: BTreeMap::new(),
            failures: BTreeMap::new(),
        };
        run.absorb(results);
        if cfg.relabel_enabled && !run.failures.is_empty() {
            return Err(grid_failure(run.failures));
        }
        Ok(run)
    }

    /// Continue from saved models. The corpus must be the one the models
    /// were discovered on.
    pub fn resume(corpus: &Corpus, models: GridModels, cfg: &DiscoveryConfig) -> Result<Self> {
        cfg.validate()?;
        let (corpus, skipped) = discovery_corpus(corpus, models.grid.max_m())?;
        let ids: Vec<&str> = corpus.utterances().iter().map(|u| u.utterance_id()).collect();
        if models.labels.utterances().iter().map(String::as_str).ne(ids.iter().copied()) {
            return Err(Error::Validation(
                "saved labels do not match the corpus utterances".into(),
            ));
        }
        let points = models
            .grid
            .points()
            .into_iter()
            .map(|p| {
                models
                    .point(p)
                    .map(|pm| (p, pm))
                    .ok_or_else(|| Error::Validation(format!("saved run lacks point {p}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            corpus,
            grid: models.grid,
            cfg: *cfg,
            skipped,
            points,
            failures: BTreeMap::new(),
        })
    }

    fn absorb(&mut self, results: Vec<(GridPoint, Result<PointModels>)>) {
        for (p, r) in results {
            match r {
                Ok(pm) => {
                    self.points.insert(p, pm);
                }
                Err(e) => {
                    log::error!("{p}: {e}");
                    self.points.remove(&p);
                    self.failures.insert(p, e);
                }
            }
        }
    }

    fn active(&self, pm: &PointModels) -> bool {
        pm.history.len() < self.cfg.t_max && !pm.converged(self.cfg.convergence)
    }

    pub fn is_finished(&self) -> bool {
        if self.cfg.relabel_enabled {
            let all_converged = self
                .points
                .values()
                .all(|pm| pm.converged(self.cfg.convergence));
            let at_limit = self
                .points
                .values()
                .any(|pm| pm.history.len() >= self.cfg.t_max);
            all_converged || at_limit
        } else {
            !self.points.values().any(|pm| self.active(pm))
        }
    }

    /// Run one more outer iteration. Returns `false` when already finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        if self.cfg.relabel_enabled {
            self.enhanced_step()?;
        } else {
            let corpus = &self.corpus;
            let cfg = &self.cfg;
            let results: Vec<_> = self
                .points
                .par_iter()
                .filter(|(_, pm)| self.active(pm))
                .map(|(&p, pm)| (p, next_iteration(corpus, pm, &pm.labels, None, cfg)))
                .collect();
            self.absorb(results);
        }
        Ok(true)
    }

    fn enhanced_step(&mut self) -> Result<()> {
        let raw = GridLabeling::new(
            self.points
                .iter()
                .map(|(&p, pm)| (p, pm.labels.clone()))
                .collect(),
            false,
        )?;
        let relabeled = relabel_pass(&raw, &self.grid)?;
        let changes = count_changes(&raw, &relabeled);
        let corpus = &self.corpus;
        let cfg = &self.cfg;
        let results: Vec<_> = self
            .points
            .par_iter()
            .map(|(&p, pm)| {
                let train = relabeled.at(p).expect("relabel covers every point");
                (p, next_iteration(corpus, pm, train, changes.get(&p).copied(), cfg))
            })
            .collect();
        self.absorb(results);
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(grid_failure(std::mem::take(&mut self.failures)))
        }
    }

    /// Run until finished.
    pub fn run(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    pub fn grid(&self) -> &GranularityGrid {
        &self.grid
    }

    /// The filtered corpus the models are trained on.
    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    /// Points that have completed at least iteration 1 without failing.
    pub fn points(&self) -> &BTreeMap<GridPoint, PointModels> {
        &self.points
    }

    pub fn failures(&self) -> &BTreeMap<GridPoint, Error> {
        &self.failures
    }

    pub fn into_models(self) -> Result<GridModels> {
        if !self.failures.is_empty() {
            return Err(grid_failure(self.failures));
        }
        GridModels::from_points(self.grid, self.points, self.skipped)
    }
}

/// Discovery at a single granularity.
pub fn discover(corpus: &Corpus, psi: Granularity, cfg: &DiscoveryConfig) -> Result<PointModels> {
    let grid = GranularityGrid::single(psi);
    let mut run = GridRun::start(corpus, &grid, cfg)?;
    run.run()?;
    let models = run.into_models()?;
    Ok(models
        .point(GridPoint::new(psi.m, psi.n))
        .expect("single-point grid"))
}

/// Discovery at every grid point; enhanced with relabeling when enabled.
pub fn discover_grid(
    corpus: &Corpus,
    grid: &GranularityGrid,
    cfg: &DiscoveryConfig,
) -> Result<GridModels> {
    let mut run = GridRun::start(corpus, grid, cfg)?;
    run.run()?;
    run.into_models()
}

/// One relabel, re-train and re-decode iteration over the whole grid,
/// regardless of `t_max` and convergence.
pub fn enhance_step(models: GridModels, corpus: &Corpus, cfg: &DiscoveryConfig) -> Result<GridModels> {
    let cfg = DiscoveryConfig {
        relabel_enabled: true,
        t_max: usize::MAX,
        convergence: 0.0,
        ..*cfg
    };
    let mut run = GridRun::resume(corpus, models, &cfg)?;
    run.enhanced_step()?;
    run.into_models()
}
