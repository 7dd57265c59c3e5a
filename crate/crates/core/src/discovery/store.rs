//! Run directory layout: `<m>x<n>/model.plxm`, `<m>x<n>/labels.jsonl` and a
//! top-level `history.json` holding the grid, skipped utterances and the
//! per-point iteration history.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GridModels, IterationRecord, PointModels};
use crate::error::{Error, Result};
use crate::grid::{GranularityGrid, GridLabeling, GridPoint};
use crate::hmm::{read_labelings, read_model, write_labelings, write_model};

pub const MODEL_FILE: &str = "model.plxm";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const HISTORY_FILE: &str = "history.json";
/// Revision of the JSON layouts of label and history files.
pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HistoryFile {
    grid: GranularityGrid,
    skipped: Vec<String>,
    points: BTreeMap<String, Vec<IterationRecord>>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write through a temporary sibling and rename, so an interrupted run
/// never leaves a truncated file behind.
fn replace_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    write(tmp)?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

/// Write the model and labels of one point under `dir/<m>x<n>/`.
pub fn save_point(dir: &Path, p: GridPoint, pm: &PointModels) -> Result<()> {
    let sub = dir.join(p.to_string());
    create_dir(&sub)?;
    replace_with(&sub.join(MODEL_FILE), |t| write_model(t, &pm.set))?;
    replace_with(&sub.join(LABELS_FILE), |t| write_labelings(t, &pm.labels, false))
}

fn save_history(
    dir: &Path,
    grid: &GranularityGrid,
    skipped: &[String],
    history: &BTreeMap<GridPoint, Vec<IterationRecord>>,
) -> Result<()> {
    let file = HistoryFile {
        grid: grid.clone(),
        skipped: skipped.to_vec(),
        points: history
            .iter()
            .map(|(p, h)| (p.to_string(), h.clone()))
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Internal(e.to_string()))?;
    replace_with(&dir.join(HISTORY_FILE), |t| {
        fs::write(t, text + "\n").map_err(|e| Error::io(t, e))
    })
}

/// Persist a complete grid.
pub fn save_grid_models(dir: &Path, models: &GridModels) -> Result<()> {
    create_dir(dir)?;
    for p in models.grid.points() {
        let pm = models
            .point(p)
            .ok_or_else(|| Error::Internal(format!("grid models lack point {p}")))?;
        save_point(dir, p, &pm)?;
    }
    save_history(dir, &models.grid, &models.skipped, &models.history)
}

/// Persist whichever points exist so far plus their history; used for
/// checkpoints of a run in progress.
pub fn save_partial(
    dir: &Path,
    grid: &GranularityGrid,
    skipped: &[String],
    points: &BTreeMap<GridPoint, PointModels>,
) -> Result<()> {
    create_dir(dir)?;
    for (&p, pm) in points {
        save_point(dir, p, pm)?;
    }
    let history = points.iter().map(|(&p, pm)| (p, pm.history.clone())).collect();
    save_history(dir, grid, skipped, &history)
}

/// Load a grid saved by [`save_grid_models`].
pub fn load_grid_models(dir: &Path) -> Result<GridModels> {
    let path = dir.join(HISTORY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: HistoryFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut history = BTreeMap::new();
    for (k, h) in file.points {
        history.insert(k.parse::<GridPoint>()?, h);
    }
    let mut sets = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for p in file.grid.points() {
        let sub = dir.join(p.to_string());
        let set = read_model(&sub.join(MODEL_FILE))?;
        let gran = set.granularity();
        if (gran.m, gran.n) != (p.m, p.n) {
            return Err(Error::Validation(format!(
                "{}: model granularity {}x{} in directory {p}",
                sub.display(),
                gran.m,
                gran.n
            )));
        }
        let (ls, _) = read_labelings(&sub.join(LABELS_FILE))?;
        sets.insert(p, set);
        labels.insert(p, ls);
    }
    if history.len() != sets.len() || sets.keys().any(|p| !history.contains_key(p)) {
        return Err(Error::Validation(format!(
            "{}: history does not cover the grid",
            path.display()
        )));
    }
    let labels = GridLabeling::new(labels, false)?;
    Ok(GridModels {
        grid: file.grid,
        sets,
        labels,
        history,
        skipped: file.skipped,
    })
}
